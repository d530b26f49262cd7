#include "geoprompt/data.hpp"

#include "geoprompt/config_json.hpp"
#include "geoprompt/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace geoprompt {

namespace {

constexpr double kPi = std::numbers::pi;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

RowVector<double> unit_vector(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowVector<double> v(3);
  do {
    v << n(rng), n(rng), n(rng);
  } while (v.norm() < 1e-12);
  return v / v.norm();
}

// Picks a surface part with probability proportional to its area.
std::size_t pick(Rng& rng, const std::vector<double>& areas) {
  return std::discrete_distribution<std::size_t>(areas.begin(), areas.end())(rng);
}

// Unit sphere built from antipodal pairs (plus one 120-degree triple for odd
// counts) so the centroid is exactly zero and every radius stays equal.
RowMatrix<double> sphere(Index n, Rng& rng) {
  RowMatrix<double> p(n, 3);
  Index i = 0;
  if (n % 2 == 1) {
    if (n == 1) {
      p.setZero();
      return p;
    }
    const RowVector<double> a = unit_vector(rng);
    RowVector<double> b = unit_vector(rng);
    b -= b.dot(a) * a;
    b /= b.norm();
    for (int k = 0; k < 3; ++k) {
      const double ang = 2 * kPi * k / 3;
      p.row(i++) = std::cos(ang) * a + std::sin(ang) * b;
    }
  }
  while (i < n) {
    const RowVector<double> v = unit_vector(rng);
    p.row(i++) = v;
    p.row(i++) = -v;
  }
  return p;
}

RowMatrix<double> box(Index n, Rng& rng) {
  const double a = uniform(rng, 0.8, 1.2), b = uniform(rng, 0.8, 1.2), c = uniform(rng, 0.8, 1.2);
  const std::vector<double> areas{b * c, b * c, a * c, a * c, a * b, a * b};
  RowMatrix<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    const std::size_t f = pick(rng, areas);
    const double u = uniform(rng, -0.5, 0.5), v = uniform(rng, -0.5, 0.5);
    const double s = f % 2 == 0 ? 0.5 : -0.5;
    if (f < 2) p.row(i) << s * a, u * b, v * c;
    else if (f < 4) p.row(i) << u * a, s * b, v * c;
    else p.row(i) << u * a, v * b, s * c;
  }
  return p;
}

RowMatrix<double> cylinder(Index n, Rng& rng) {
  const double r = uniform(rng, 0.35, 0.55), h = uniform(rng, 1.3, 2.0);
  const std::vector<double> areas{2 * kPi * r * h, kPi * r * r, kPi * r * r};
  RowMatrix<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    const std::size_t f = pick(rng, areas);
    const double th = uniform(rng, 0, 2 * kPi);
    if (f == 0) {
      p.row(i) << r * std::cos(th), r * std::sin(th), uniform(rng, -h / 2, h / 2);
    } else {
      const double rad = r * std::sqrt(uniform(rng, 0, 1));
      p.row(i) << rad * std::cos(th), rad * std::sin(th), f == 1 ? h / 2 : -h / 2;
    }
  }
  return p;
}

RowMatrix<double> cone(Index n, Rng& rng) {
  const double r = uniform(rng, 0.5, 0.8), h = uniform(rng, 1.0, 1.6);
  const std::vector<double> areas{kPi * r * std::hypot(r, h), kPi * r * r};
  RowMatrix<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    const double th = uniform(rng, 0, 2 * kPi);
    const double t = std::sqrt(uniform(rng, 0, 1));
    if (pick(rng, areas) == 0) p.row(i) << r * t * std::cos(th), r * t * std::sin(th), h * (1 - t);
    else p.row(i) << r * t * std::cos(th), r * t * std::sin(th), 0.0;
  }
  return p;
}

RowMatrix<double> torus(Index n, Rng& rng) {
  const double big = uniform(rng, 0.7, 1.0), small = uniform(rng, 0.2, 0.35);
  RowMatrix<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    double phi = 0;
    // Area element grows with distance from the axis.
    do phi = uniform(rng, 0, 2 * kPi);
    while (uniform(rng, 0, big + small) > big + small * std::cos(phi));
    const double th = uniform(rng, 0, 2 * kPi);
    const double ring = big + small * std::cos(phi);
    p.row(i) << ring * std::cos(th), ring * std::sin(th), small * std::sin(phi);
  }
  return p;
}

RowMatrix<double> plane(Index n, Rng& rng) {
  const double a = uniform(rng, 1.5, 2.0), b = uniform(rng, 0.8, 2.0);
  RowMatrix<double> p(n, 3);
  for (Index i = 0; i < n; ++i) p.row(i) << uniform(rng, -a / 2, a / 2), uniform(rng, -b / 2, b / 2), 0.0;
  return p;
}

RowMatrix<double> capsule(Index n, Rng& rng) {
  const double r = uniform(rng, 0.3, 0.45), len = uniform(rng, 0.8, 1.4);
  const std::vector<double> areas{2 * kPi * r * len, 4 * kPi * r * r};
  RowMatrix<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    if (pick(rng, areas) == 0) {
      const double th = uniform(rng, 0, 2 * kPi);
      p.row(i) << r * std::cos(th), r * std::sin(th), uniform(rng, -len / 2, len / 2);
    } else {
      RowVector<double> v = unit_vector(rng) * r;
      v(2) += v(2) >= 0 ? len / 2 : -len / 2;
      p.row(i) = v;
    }
  }
  return p;
}

RowMatrix<double> ellipsoid(Index n, Rng& rng) {
  const double a = uniform(rng, 0.5, 1.2), b = uniform(rng, 0.5, 1.2), c = uniform(rng, 0.5, 1.2);
  RowMatrix<double> p(n, 3);
  for (Index i = 0; i < n; ++i) {
    const RowVector<double> v = unit_vector(rng);
    p.row(i) << a * v(0), b * v(1), c * v(2);
  }
  return p;
}

// Rotation about the vertical axis.
void rotate_z(RowMatrix<double>& p, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (Index i = 0; i < p.rows(); ++i) {
    const double x = p(i, 0), y = p(i, 1);
    p(i, 0) = c * x - s * y;
    p(i, 1) = s * x + c * y;
  }
}

std::string format_row(const RowVector<double>& r) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", r(0), r(1), r(2));
  return buf;
}

}  // namespace

RowMatrix<double> sample_shape(const std::string& name, Index points, std::uint64_t seed, bool rotate) {
  if (points < 1) throw std::invalid_argument("sample_shape: need at least one point");
  Rng rng(seed);
  RowMatrix<double> p;
  if (name == "sphere") p = sphere(points, rng);
  else if (name == "cube") p = box(points, rng);
  else if (name == "cylinder") p = cylinder(points, rng);
  else if (name == "cone") p = cone(points, rng);
  else if (name == "torus") p = torus(points, rng);
  else if (name == "plane") p = plane(points, rng);
  else if (name == "capsule") p = capsule(points, rng);
  else if (name == "ellipsoid") p = ellipsoid(points, rng);
  else throw std::invalid_argument("unknown shape generator '" + name + "'");
  if (rotate) rotate_z(p, uniform(rng, 0, 2 * kPi));
  return p;
}

RowMatrix<double> normalize_cloud(RowMatrix<double> pts) {
  const RowVector<double> centroid = pts.colwise().mean();
  pts.rowwise() -= centroid;
  const double radius = pts.rowwise().norm().maxCoeff();
  if (radius > 0) pts /= radius;
  return pts;
}

RowMatrix<double> corrupt(const RowMatrix<double>& clean, Variant variant, const DatasetSpec& spec, std::uint64_t seed) {
  if (variant == Variant::clean) return clean;
  Rng rng(seed);
  RowMatrix<double> pts = clean;
  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> n(0.0, spec.noise_sigma);
    for (Index i = 0; i < pts.size(); ++i) pts.data()[i] += n(rng);
  }
  if (variant == Variant::noisy) return pts;

  const Index n = pts.rows();
  // Occlusion: drop the cap of points farthest along a random direction.
  const auto drop = static_cast<Index>(std::floor(spec.crop_fraction * static_cast<double>(n)));
  std::vector<Index> keep(static_cast<std::size_t>(n));
  std::iota(keep.begin(), keep.end(), Index{0});
  if (drop > 0) {
    const RowVector<double> dir = unit_vector(rng);
    const Vector<double> proj = pts * dir.transpose();
    std::stable_sort(keep.begin(), keep.end(), [&](Index a, Index b) { return proj(a) < proj(b); });
    keep.resize(static_cast<std::size_t>(n - drop));
    std::sort(keep.begin(), keep.end());
  }
  const Index total = static_cast<Index>(keep.size()) + spec.clutter_points;
  RowMatrix<double> mixed(total, 3);
  for (std::size_t i = 0; i < keep.size(); ++i) mixed.row(static_cast<Index>(i)) = pts.row(keep[i]);
  for (Index i = static_cast<Index>(keep.size()); i < total; ++i)
    mixed.row(i) << uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1);
  if (total == n) return mixed;

  // Back to n points: a sorted random subset, or random duplicates appended.
  RowMatrix<double> out(n, 3);
  if (total > n) {
    std::vector<Index> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(n));
    std::sort(order.begin(), order.end());
    for (Index i = 0; i < n; ++i) out.row(i) = mixed.row(order[static_cast<std::size_t>(i)]);
  } else {
    out.topRows(total) = mixed;
    std::uniform_int_distribution<Index> any(0, total - 1);
    for (Index i = total; i < n; ++i) out.row(i) = mixed.row(any(rng));
  }
  return out;
}

ShapeSample make_sample(const DatasetSpec& spec, Index class_index, Index sample_index) {
  const std::uint64_t seed = mix_seed(mix_seed(spec.split_seed, static_cast<std::uint64_t>(class_index)),
                                      static_cast<std::uint64_t>(sample_index));
  const auto& name = spec.classes.at(static_cast<std::size_t>(class_index));
  RowMatrix<double> clean = normalize_cloud(sample_shape(name, spec.points, seed, spec.rotate));
  ShapeSample s;
  s.cloud = PointCloud<double>(corrupt(clean, spec.variant, spec, mix_seed(seed, 1)));
  s.label = class_index;
  s.variant = spec.variant;
  s.seed = seed;
  return s;
}

std::vector<Index> test_indices(const DatasetSpec& spec, Index class_index) {
  std::vector<Index> order(static_cast<std::size_t>(spec.per_class));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(mix_seed(spec.split_seed, 1000 + static_cast<std::uint64_t>(class_index)));
  std::shuffle(order.begin(), order.end(), rng);
  const auto count = static_cast<std::size_t>(std::lround(static_cast<double>(spec.per_class) * spec.test_fraction));
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  d.classes = spec.classes;
  for (Index c = 0; c < static_cast<Index>(spec.classes.size()); ++c) {
    const auto test = test_indices(spec, c);
    for (Index i = 0; i < spec.per_class; ++i) {
      const bool is_test = std::binary_search(test.begin(), test.end(), i);
      (is_test ? d.test : d.train).push_back(make_sample(spec, c, i));
    }
  }
  return d;
}

void write_xyz(const std::string& path, const RowMatrix<double>& pts) {
  if (pts.cols() != 3) throw std::invalid_argument("write_xyz: expected 3 columns");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (Index i = 0; i < pts.rows(); ++i) out << format_row(pts.row(i));
  if (!out) throw std::runtime_error("short write to " + path);
}

RowMatrix<double> read_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  std::vector<double> values;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const char* p = line.data();
    const char* end = line.data() + line.size();
    int count = 0;
    while (true) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      double v = 0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r')) {
        throw ParseError(path + ": line " + std::to_string(lineno) + ": not a number");
      }
      if (++count > 3) break;
      values.push_back(v);
      p = next;
    }
    if (count != 3) {
      throw ParseError(path + ": line " + std::to_string(lineno) + ": expected 3 coordinates, got " +
                       (count > 3 ? "more" : std::to_string(count)));
    }
  }
  if (values.empty()) throw ParseError(path + ": no points");
  const auto n = static_cast<Index>(values.size() / 3);
  return Eigen::Map<const RowMatrix<double>>(values.data(), n, 3);
}

void write_dataset(const std::string& dir, const Dataset& data, const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Json samples = Json::array();
  auto emit = [&](const std::vector<ShapeSample>& list, const std::string& split) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& s = list[i];
      std::ostringstream name;
      name << split << "_" << data.classes.at(static_cast<std::size_t>(s.label)) << "_" << i << ".xyz";
      write_xyz((fs::path(dir) / name.str()).string(), s.cloud.coords());
      samples.push_back(Json{{"file", name.str()},
                             {"split", split},
                             {"label", s.label},
                             {"class", data.classes.at(static_cast<std::size_t>(s.label))},
                             {"variant", to_string(s.variant)},
                             {"seed", s.seed}});
    }
  };
  emit(data.train, "train");
  emit(data.test, "test");
  Json manifest{{"spec", to_json(spec)}, {"classes", data.classes}, {"samples", samples}};
  std::ofstream out((fs::path(dir) / "manifest.json").string(), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

Dataset read_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const Json m = read_json_file(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  Dataset d;
  try {
    d.classes = m.at("classes").get<std::vector<std::string>>();
    for (const auto& e : m.at("samples")) {
      ShapeSample s;
      s.cloud = PointCloud<double>(read_xyz((root / e.at("file").get<std::string>()).string()));
      s.label = e.at("label").get<Index>();
      s.seed = e.at("seed").get<std::uint64_t>();
      const auto variant = e.at("variant").get<std::string>();
      s.variant = variant == "clean" ? Variant::clean : variant == "noisy" ? Variant::noisy : Variant::cluttered;
      const auto split = e.at("split").get<std::string>();
      if (split != "train" && split != "test") throw ParseError(manifest_path + ": unknown split " + split);
      if (s.label < 0 || s.label >= static_cast<Index>(d.classes.size())) {
        throw ParseError(manifest_path + ": label out of range");
      }
      (split == "train" ? d.train : d.test).push_back(std::move(s));
    }
  } catch (const Json::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }
  return d;
}

}  // namespace geoprompt
