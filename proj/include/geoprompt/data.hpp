#pragma once

#include "geoprompt/config.hpp"
#include "geoprompt/pointops.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace geoprompt {

struct ShapeSample {
  PointCloud<double> cloud;
  Index label = 0;
  Variant variant = Variant::clean;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<ShapeSample> train;
  std::vector<ShapeSample> test;
};

/// Malformed point-cloud or manifest text.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw surface samples of one generator, before normalization. Throws
/// std::invalid_argument for an unknown name.
RowMatrix<double> sample_shape(const std::string& name, Index points, std::uint64_t seed, bool rotate);

/// Centroid to the origin, then scaled so the farthest point has radius 1.
RowMatrix<double> normalize_cloud(RowMatrix<double> pts);

/// Applies the spec's corruption for `variant` to a normalized cloud.
RowMatrix<double> corrupt(const RowMatrix<double>& clean, Variant variant, const DatasetSpec& spec, std::uint64_t seed);

/// One sample, deterministic in (spec, class index, sample index).
ShapeSample make_sample(const DatasetSpec& spec, Index class_index, Index sample_index);

/// Class-balanced train/test split, deterministic under spec.split_seed.
Dataset generate(const DatasetSpec& spec);

/// Indices [0, per_class) of each class that go to the test split.
std::vector<Index> test_indices(const DatasetSpec& spec, Index class_index);

void write_xyz(const std::string& path, const RowMatrix<double>& pts);
/// Throws MissingFile, ParseError naming the line, or ParseError for an empty file.
RowMatrix<double> read_xyz(const std::string& path);

/// Writes one XYZ file per sample plus manifest.json into `dir`.
void write_dataset(const std::string& dir, const Dataset& data, const DatasetSpec& spec);
/// Loads a dataset written by write_dataset.
Dataset read_dataset(const std::string& manifest_path);

}  // namespace geoprompt
