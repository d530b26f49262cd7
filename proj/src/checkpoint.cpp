#include "geoprompt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace geoprompt {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename Scalar>
constexpr const char* dtype_name() {
  return sizeof(Scalar) == 4 ? "f32" : "f64";
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw std::runtime_error("checkpoint: unknown dtype " + dtype);
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> CheckpointTensor::as() const {
  if (dtype != dtype_name<Scalar>()) {
    throw std::runtime_error("checkpoint tensor " + name + " is " + dtype + ", wanted " + dtype_name<Scalar>());
  }
  Tensor<Scalar> t(shape);
  if (bytes.size() != static_cast<std::size_t>(t.size()) * sizeof(Scalar)) {
    throw std::runtime_error("checkpoint tensor " + name + " payload size does not match its shape");
  }
  if (!bytes.empty()) std::memcpy(t.data(), bytes.data(), bytes.size());
  return t;
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename Scalar>
Checkpoint make_checkpoint(const ParameterStore<Scalar>& store, Json meta) {
  Checkpoint c;
  c.meta = std::move(meta);
  store.for_each([&](const Parameter<Scalar>& p) {
    CheckpointTensor t;
    t.name = p.name;
    t.dtype = dtype_name<Scalar>();
    t.shape = p.value.shape();
    t.frozen = p.frozen;
    t.bytes.resize(static_cast<std::size_t>(p.value.size()) * sizeof(Scalar));
    if (!t.bytes.empty()) std::memcpy(t.bytes.data(), p.value.data(), t.bytes.size());
    c.tensors.push_back(std::move(t));
  });
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Json header;
  Json list = Json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    list.push_back(Json{{"name", t.name},
                        {"dtype", t.dtype},
                        {"shape", t.shape},
                        {"offset", offset},
                        {"nbytes", t.bytes.size()},
                        {"frozen", t.frozen}});
    offset += t.bytes.size();
  }
  header["tensors"] = std::move(list);
  header["meta"] = ckpt.meta;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_len = text.size();
  out.write("GPCK", 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors) out.write(reinterpret_cast<const char*>(t.bytes.data()), static_cast<std::streamsize>(t.bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile(path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || std::memcmp(magic, "GPCK", 4) != 0) throw std::runtime_error(path + ": not a checkpoint");
  if (version != kCheckpointVersion) throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(version));
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error(path + ": truncated header");
  const Json header = Json::parse(text);

  Checkpoint c;
  c.meta = header.at("meta");
  std::uint64_t expected = 0;
  for (const auto& e : header.at("tensors")) {
    CheckpointTensor t;
    t.name = e.at("name").get<std::string>();
    t.dtype = e.at("dtype").get<std::string>();
    t.shape = e.at("shape").get<Shape>();
    t.frozen = e.at("frozen").get<bool>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto nbytes = e.at("nbytes").get<std::uint64_t>();
    if (offset != expected || nbytes != static_cast<std::uint64_t>(shape_size(t.shape)) * dtype_size(t.dtype)) {
      throw std::runtime_error(path + ": inconsistent entry for " + t.name);
    }
    t.bytes.resize(nbytes);
    in.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error(path + ": truncated payload for " + t.name);
    expected += nbytes;
    c.tensors.push_back(std::move(t));
  }
  return c;
}

template <typename Scalar>
std::size_t restore_parameters(ParameterStore<Scalar>& store, const Checkpoint& ckpt, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    Parameter<Scalar>* p = store.find(t.name);
    if (!p) throw std::runtime_error("checkpoint tensor " + t.name + " has no matching parameter");
    if (p->value.shape() != t.shape) {
      throw std::runtime_error("checkpoint tensor " + t.name + " has shape " + shape_string(t.shape) +
                               ", parameter has " + shape_string(p->value.shape()));
    }
    p->value = t.as<Scalar>();
    ++n;
  }
  return n;
}

template Tensor<float> CheckpointTensor::as<float>() const;
template Tensor<double> CheckpointTensor::as<double>() const;
template Checkpoint make_checkpoint<float>(const ParameterStore<float>&, Json);
template Checkpoint make_checkpoint<double>(const ParameterStore<double>&, Json);
template std::size_t restore_parameters<float>(ParameterStore<float>&, const Checkpoint&, const std::string&);
template std::size_t restore_parameters<double>(ParameterStore<double>&, const Checkpoint&, const std::string&);

}  // namespace geoprompt
