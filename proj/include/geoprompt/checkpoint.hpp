#pragma once

#include "geoprompt/config_json.hpp"
#include "geoprompt/tensor.hpp"

#include <string>
#include <vector>

namespace geoprompt {

/// Binary layout: "GPCK", u32 version, u64 header length, JSON header, then
/// the concatenated little-endian row-major payloads. The header lists
/// {name, dtype, shape, offset, nbytes, frozen} per tensor plus a free-form
/// "meta" object.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::string dtype;  // "f32" or "f64"
  Shape shape;
  bool frozen = false;
  std::vector<unsigned char> bytes;

  template <typename Scalar>
  Tensor<Scalar> as() const;
};

struct Checkpoint {
  Json meta = Json::object();
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

template <typename Scalar>
Checkpoint make_checkpoint(const ParameterStore<Scalar>& store, Json meta);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws MissingFile when absent, std::runtime_error when corrupt.
Checkpoint load_checkpoint(const std::string& path);

/// Copies every checkpoint tensor whose name starts with `prefix` into the
/// store. Names, shapes and dtypes must match exactly; returns the count.
template <typename Scalar>
std::size_t restore_parameters(ParameterStore<Scalar>& store, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace geoprompt
