#pragma once

#include "geoprompt/pointops.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoprompt {

/// Bad configuration value. `pointer` is a JSON pointer to the offending field.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string pointer, const std::string& message)
      : std::invalid_argument(pointer + ": " + message), pointer_(std::move(pointer)), message_(message) {}
  const std::string& pointer() const noexcept { return pointer_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string pointer_;
  std::string message_;
};

/// A referenced input file does not exist or cannot be opened.
class MissingFile : public std::runtime_error {
 public:
  explicit MissingFile(std::string path) : std::runtime_error("cannot open " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct BackboneConfig {
  Index dim = 96;
  Index depth = 4;
  Index heads = 2;
  Index mlp_ratio = 4;
  Index n_patches = 32;
  Index patch_size = 16;
  Index embed_hidden = 64;  // mini-pointnet width inside the tokenizer
  Index pos_hidden = 64;    // positional MLP width

  Index tokens() const noexcept { return n_patches; }
};

struct ShiftPrompterConfig {
  bool enabled = true;
  std::vector<Index> centers{64, 6};
  std::vector<Index> neighbors{16, 8};
  std::vector<Index> widths{32, 16};
  double shift_scale = 0.05;
  double beta_p = 0.5;
  double beta_a = 0.5;
  /// Feed absolute neighbor coordinates alongside the center-relative ones.
  bool absolute_channel = true;
  Index head_hidden = 32;
  /// Centers blended per point when decoding back down the hierarchy.
  Index decode_neighbors = 3;

  Index levels() const noexcept { return static_cast<Index>(centers.size()); }
};

enum class PromptInit { uniform, cluster };

struct PointPromptConfig {
  Index count = 20;
  double range = 1.0;
  PromptInit init = PromptInit::uniform;
};

struct PromptTokenConfig {
  Index count = 4;  // per block
};

struct AdapterConfig {
  bool enabled = true;
  Index bottleneck = 0;  // 0 means dim / 8
};

enum class InjectVariant { replacement, permutation };
enum class InjectPlacement { before_attn, after_attn };
enum class TokenSpace { feature, center3d };

struct PropagationConfig {
  bool enabled = true;
  InjectVariant variant = InjectVariant::permutation;
  InjectPlacement placement = InjectPlacement::after_attn;
  Index centers = 0;  // 0 means half the patch tokens
  Index neighbors = 8;
  InterpConfig interp{};
  TokenSpace space = TokenSpace::feature;
  /// Add the interpolated features to the tokens instead of replacing them.
  bool residual = false;
  /// Per-block enable mask; empty means every block.
  std::vector<bool> blocks;

  bool active_in(Index block) const {
    return enabled && (blocks.empty() || blocks.at(static_cast<std::size_t>(block)));
  }
};

enum class HeadInput { cls, max_patch, max_prompt, shape_feature };

struct HeadConfig {
  std::vector<HeadInput> inputs{HeadInput::cls, HeadInput::max_patch, HeadInput::shape_feature};
  Index hidden = 0;  // 0: a single linear layer

  bool uses(HeadInput in) const;
};

struct ModelConfig {
  BackboneConfig backbone;
  ShiftPrompterConfig prompter;
  PointPromptConfig point_prompt;
  PromptTokenConfig prompt_tokens;
  AdapterConfig adapter;
  PropagationConfig propagation;
  HeadConfig head;
  Index num_classes = 4;
  /// Zero the adapter up-projection and the shift head output layer at init.
  bool zero_init = true;

  Index adapter_bottleneck() const noexcept { return adapter.bottleneck > 0 ? adapter.bottleneck : backbone.dim / 8; }
  Index propagation_centers() const noexcept {
    return propagation.centers > 0 ? propagation.centers : backbone.tokens() / 2;
  }
  /// Throws ConfigError naming the field (pointer relative to the model section).
  void validate(const std::string& at = "/model") const;
};

/// Same backbone and head width, every prompt component switched off.
ModelConfig backbone_only(const ModelConfig& cfg);

enum class TrainMode { pretrain, adapt, linear_probe };

struct TrainConfig {
  TrainMode mode = TrainMode::adapt;
  Index epochs = 30;
  Index batch_size = 16;
  double lr = 5e-4;
  double weight_decay = 5e-2;
  Index warmup_epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool augment = true;
  double scale_low = 0.8;
  double scale_high = 1.2;
  double translate = 0.1;
  std::uint64_t eval_seed = 7;

  void validate(const std::string& at = "/train") const;
};

enum class Variant { clean, noisy, cluttered };

/// Names accepted in DatasetSpec::classes.
const std::vector<std::string>& shape_generators();

struct DatasetSpec {
  std::vector<std::string> classes{"torus", "plane", "capsule", "ellipsoid"};
  Index per_class = 40;
  double test_fraction = 0.25;
  Index points = 256;
  Variant variant = Variant::cluttered;
  double noise_sigma = 0.01;
  double crop_fraction = 0.2;
  Index clutter_points = 48;
  bool rotate = true;
  std::uint64_t split_seed = 0;

  void validate(const std::string& at = "/data") const;
};

struct GradCheckConfig {
  double step = 1e-5;
  double tolerance = 1e-4;
  Index samples = 2;
  /// Re-draw the zero-initialized output layers so every path carries gradient.
  bool randomize_zero_init = true;
  /// Cap on checked coordinates per parameter tensor; 0 checks all.
  Index max_coords = 0;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DatasetSpec data;
  GradCheckConfig gradcheck;

  void validate() const;
};

std::string to_string(PromptInit v);
std::string to_string(InjectVariant v);
std::string to_string(InjectPlacement v);
std::string to_string(TokenSpace v);
std::string to_string(HeadInput v);
std::string to_string(TrainMode v);
std::string to_string(Variant v);

}  // namespace geoprompt
