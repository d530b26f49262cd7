#include "geoprompt/config_json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <utility>

namespace geoprompt {

namespace {

template <typename E, std::size_t N>
using EnumTable = std::array<std::pair<E, const char*>, N>;

constexpr EnumTable<PromptInit, 2> kPromptInit{{{PromptInit::uniform, "uniform"}, {PromptInit::cluster, "cluster"}}};
constexpr EnumTable<InjectVariant, 2> kVariant{
    {{InjectVariant::replacement, "replacement"}, {InjectVariant::permutation, "permutation"}}};
constexpr EnumTable<InjectPlacement, 2> kPlacement{
    {{InjectPlacement::before_attn, "before_attn"}, {InjectPlacement::after_attn, "after_attn"}}};
constexpr EnumTable<TokenSpace, 2> kSpace{{{TokenSpace::feature, "feature"}, {TokenSpace::center3d, "center3d"}}};
constexpr EnumTable<HeadInput, 4> kHeadInput{{{HeadInput::cls, "cls"},
                                              {HeadInput::max_patch, "max_patch"},
                                              {HeadInput::max_prompt, "max_prompt"},
                                              {HeadInput::shape_feature, "shape_feature"}}};
constexpr EnumTable<TrainMode, 3> kMode{
    {{TrainMode::pretrain, "pretrain"}, {TrainMode::adapt, "adapt"}, {TrainMode::linear_probe, "linear_probe"}}};
constexpr EnumTable<Variant, 3> kDataVariant{
    {{Variant::clean, "clean"}, {Variant::noisy, "noisy"}, {Variant::cluttered, "cluttered"}}};

template <typename E, std::size_t N>
std::string enum_name(const EnumTable<E, N>& table, E v) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  throw std::logic_error("unnamed enum value");
}

template <typename E, std::size_t N>
E enum_value(const EnumTable<E, N>& table, const std::string& s, const std::string& at) {
  for (const auto& [e, name] : table)
    if (s == name) return e;
  std::string allowed;
  for (const auto& [e, name] : table) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  throw ConfigError(at, "unknown value '" + s + "' (expected one of " + allowed + ")");
}

// Walks one JSON object, recording which keys were consumed.
class Reader {
 public:
  Reader(const Json& j, std::string at) : j_(j), at_(std::move(at)) {
    if (!j_.is_object()) throw ConfigError(at_, "expected an object");
  }

  std::string path(const std::string& key) const { return at_ + "/" + key; }

  const Json* field(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, Index& out) {
    if (const Json* v = field(key)) {
      if (!v->is_number_integer()) throw ConfigError(path(key), "expected an integer");
      out = v->get<Index>();
    }
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (const Json* v = field(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(path(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const Json* v = field(key)) {
      if (!v->is_number()) throw ConfigError(path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const Json* v = field(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::vector<Index>& out) {
    if (const Json* v = field(key)) {
      if (!v->is_array()) throw ConfigError(path(key), "expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number_integer()) throw ConfigError(path(key) + "/" + std::to_string(i), "expected an integer");
        out.push_back((*v)[i].get<Index>());
      }
    }
  }
  void get(const std::string& key, std::vector<bool>& out) {
    if (const Json* v = field(key)) {
      if (!v->is_array()) throw ConfigError(path(key), "expected an array of booleans");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_boolean()) throw ConfigError(path(key) + "/" + std::to_string(i), "expected a boolean");
        out.push_back((*v)[i].get<bool>());
      }
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const Json* v = field(key)) {
      if (!v->is_array()) throw ConfigError(path(key), "expected an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_string()) throw ConfigError(path(key) + "/" + std::to_string(i), "expected a string");
        out.push_back((*v)[i].get<std::string>());
      }
    }
  }
  template <typename E, std::size_t N>
  void get_enum(const std::string& key, const EnumTable<E, N>& table, E& out) {
    if (const Json* v = field(key)) {
      if (!v->is_string()) throw ConfigError(path(key), "expected a string");
      out = enum_value(table, v->get<std::string>(), path(key));
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
  }

 private:
  const Json& j_;
  std::string at_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& at, const std::string& message) {
  if (!ok) throw ConfigError(at, message);
}

}  // namespace

std::string to_string(PromptInit v) { return enum_name(kPromptInit, v); }
std::string to_string(InjectVariant v) { return enum_name(kVariant, v); }
std::string to_string(InjectPlacement v) { return enum_name(kPlacement, v); }
std::string to_string(TokenSpace v) { return enum_name(kSpace, v); }
std::string to_string(HeadInput v) { return enum_name(kHeadInput, v); }
std::string to_string(TrainMode v) { return enum_name(kMode, v); }
std::string to_string(Variant v) { return enum_name(kDataVariant, v); }

const std::vector<std::string>& shape_generators() {
  static const std::vector<std::string> names{"sphere", "cube",  "cylinder", "cone",
                                              "torus",  "plane", "capsule",  "ellipsoid"};
  return names;
}

bool HeadConfig::uses(HeadInput in) const { return std::find(inputs.begin(), inputs.end(), in) != inputs.end(); }

void ModelConfig::validate(const std::string& at) const {
  const std::string bb = at + "/backbone";
  require(backbone.dim > 0, bb + "/dim", "must be > 0");
  require(backbone.depth >= 1, bb + "/depth", "must be >= 1");
  require(backbone.heads >= 1, bb + "/heads", "must be >= 1");
  require(backbone.dim % backbone.heads == 0, bb + "/heads", "must divide dim");
  require(backbone.mlp_ratio >= 1, bb + "/mlp_ratio", "must be >= 1");
  require(backbone.n_patches >= 1, bb + "/n_patches", "must be >= 1");
  require(backbone.patch_size >= 1, bb + "/patch_size", "must be >= 1");
  require(backbone.embed_hidden >= 1, bb + "/embed_hidden", "must be >= 1");
  require(backbone.pos_hidden >= 1, bb + "/pos_hidden", "must be >= 1");

  const std::string sp = at + "/prompter";
  if (prompter.enabled) {
    const std::size_t k = prompter.centers.size();
    require(k >= 1, sp + "/centers", "needs at least one level");
    require(prompter.neighbors.size() == k, sp + "/neighbors", "must have one entry per level");
    require(prompter.widths.size() == k, sp + "/widths", "must have one entry per level");
    for (std::size_t j = 0; j < k; ++j) {
      const std::string idx = "/" + std::to_string(j);
      require(prompter.centers[j] >= 1, sp + "/centers" + idx, "must be >= 1");
      require(prompter.neighbors[j] >= 1, sp + "/neighbors" + idx, "must be >= 1");
      require(prompter.widths[j] >= 1, sp + "/widths" + idx, "must be >= 1");
      if (j > 0) {
        require(prompter.centers[j] < prompter.centers[j - 1], sp + "/centers" + idx, "must shrink level to level");
        require(prompter.neighbors[j] <= prompter.centers[j - 1], sp + "/neighbors" + idx,
                "exceeds the previous level's center count");
      }
    }
    require(prompter.centers.back() * prompter.widths.back() == backbone.dim, sp + "/widths/" + std::to_string(k - 1),
            "last level centers x width must equal backbone dim");
    require(prompter.shift_scale >= 0, sp + "/shift_scale", "must be >= 0");
    require(prompter.head_hidden >= 1, sp + "/head_hidden", "must be >= 1");
    require(prompter.decode_neighbors >= 1, sp + "/decode_neighbors", "must be >= 1");
  }

  require(point_prompt.count >= 0, at + "/point_prompt/count", "must be >= 0");
  require(point_prompt.range > 0, at + "/point_prompt/range", "must be > 0");
  require(prompt_tokens.count >= 0, at + "/prompt_tokens/count", "must be >= 0");
  require(adapter.bottleneck >= 0, at + "/adapter/bottleneck", "must be >= 0");
  require(adapter_bottleneck() >= 1, at + "/adapter/bottleneck", "dim / 8 is zero; set it explicitly");

  const std::string pp = at + "/propagation";
  if (propagation.enabled) {
    require(propagation.centers >= 0, pp + "/centers", "must be >= 0");
    require(propagation_centers() >= 1, pp + "/centers", "resolves to zero centers");
    require(propagation_centers() <= backbone.n_patches, pp + "/centers", "exceeds the patch token count");
    require(prompt_tokens.count == 0 || propagation_centers() >= prompt_tokens.count, pp + "/centers",
            "must be >= prompt token count");
    require(propagation.neighbors >= 1, pp + "/neighbors", "must be >= 1");
    require(propagation.neighbors <= backbone.n_patches, pp + "/neighbors", "exceeds the patch token count");
    require(propagation.interp.k_interp >= 1, pp + "/k_interp", "must be >= 1");
    require(propagation.interp.power > 0, pp + "/power", "must be > 0");
    require(propagation.interp.epsilon > 0, pp + "/epsilon", "must be > 0");
    require(propagation.blocks.empty() || static_cast<Index>(propagation.blocks.size()) == backbone.depth,
            pp + "/blocks", "must be empty or have one entry per block");
  }

  const std::string hd = at + "/head";
  require(!head.inputs.empty(), hd + "/inputs", "must not be empty");
  std::set<HeadInput> unique(head.inputs.begin(), head.inputs.end());
  require(unique.size() == head.inputs.size(), hd + "/inputs", "lists an input twice");
  require(!head.uses(HeadInput::max_prompt) || prompt_tokens.count > 0, hd + "/inputs",
          "max_prompt needs prompt tokens");
  require(!head.uses(HeadInput::shape_feature) || prompter.enabled, hd + "/inputs",
          "shape_feature needs the prompter");
  require(head.hidden >= 0, hd + "/hidden", "must be >= 0 (0 is a single linear layer)");
  require(num_classes >= 2, at + "/num_classes", "must be >= 2");
}

ModelConfig backbone_only(const ModelConfig& cfg) {
  ModelConfig out = cfg;
  out.prompter.enabled = false;
  out.point_prompt.count = 0;
  out.prompt_tokens.count = 0;
  out.adapter.enabled = false;
  out.propagation.enabled = false;
  out.head.inputs.erase(std::remove_if(out.head.inputs.begin(), out.head.inputs.end(),
                                       [](HeadInput in) {
                                         return in == HeadInput::max_prompt || in == HeadInput::shape_feature;
                                       }),
                        out.head.inputs.end());
  if (out.head.inputs.empty()) out.head.inputs = {HeadInput::cls, HeadInput::max_patch};
  return out;
}

void TrainConfig::validate(const std::string& at) const {
  require(epochs >= 0, at + "/epochs", "must be >= 0");
  require(batch_size >= 1, at + "/batch_size", "must be >= 1");
  require(lr > 0, at + "/lr", "must be > 0");
  require(weight_decay >= 0, at + "/weight_decay", "must be >= 0");
  require(warmup_epochs >= 0, at + "/warmup_epochs", "must be >= 0");
  require(epochs == 0 || warmup_epochs < epochs, at + "/warmup_epochs", "must be < epochs");
  require(beta1 >= 0 && beta1 < 1, at + "/beta1", "must be in [0, 1)");
  require(beta2 >= 0 && beta2 < 1, at + "/beta2", "must be in [0, 1)");
  require(eps > 0, at + "/eps", "must be > 0");
  require(scale_low > 0, at + "/scale_low", "must be > 0");
  require(scale_high >= scale_low, at + "/scale_high", "must be >= scale_low");
  require(translate >= 0, at + "/translate", "must be >= 0");
}

void DatasetSpec::validate(const std::string& at) const {
  require(!classes.empty(), at + "/classes", "must not be empty");
  std::set<std::string> unique;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto& known = shape_generators();
    require(std::find(known.begin(), known.end(), classes[i]) != known.end(), at + "/classes/" + std::to_string(i),
            "unknown generator '" + classes[i] + "'");
    require(unique.insert(classes[i]).second, at + "/classes/" + std::to_string(i), "listed twice");
  }
  require(per_class >= 2, at + "/per_class", "must be >= 2");
  require(test_fraction > 0 && test_fraction < 1, at + "/test_fraction", "must be in (0, 1)");
  const auto test_count = static_cast<Index>(std::lround(static_cast<double>(per_class) * test_fraction));
  require(test_count >= 1 && test_count < per_class, at + "/test_fraction",
          "leaves a split empty for per_class=" + std::to_string(per_class));
  require(points >= 1, at + "/points", "must be >= 1");
  require(noise_sigma >= 0, at + "/noise_sigma", "must be >= 0");
  require(crop_fraction >= 0 && crop_fraction < 1, at + "/crop_fraction", "must be in [0, 1)");
  require(clutter_points >= 0, at + "/clutter_points", "must be >= 0");
}

void RunConfig::validate() const {
  model.validate("/model");
  train.validate("/train");
  data.validate("/data");
  require(model.num_classes == static_cast<Index>(data.classes.size()), "/model/num_classes",
          "must equal the number of data classes");
  const Index hybrid = data.points + model.point_prompt.count;
  require(model.backbone.n_patches <= hybrid, "/model/backbone/n_patches", "exceeds points plus prompt points");
  require(model.backbone.patch_size <= hybrid, "/model/backbone/patch_size", "exceeds points plus prompt points");
  if (model.prompter.enabled) {
    require(model.prompter.centers.front() <= data.points, "/model/prompter/centers/0", "exceeds the point count");
    require(model.prompter.neighbors.front() <= data.points, "/model/prompter/neighbors/0", "exceeds the point count");
  }
  require(gradcheck.step > 0, "/gradcheck/step", "must be > 0");
  require(gradcheck.tolerance > 0, "/gradcheck/tolerance", "must be > 0");
  require(gradcheck.samples >= 1, "/gradcheck/samples", "must be >= 1");
  require(gradcheck.max_coords >= 0, "/gradcheck/max_coords", "must be >= 0");
}

Json to_json(const ModelConfig& c) {
  Json head_inputs = Json::array();
  for (auto in : c.head.inputs) head_inputs.push_back(to_string(in));
  return Json{
      {"backbone",
       {{"dim", c.backbone.dim},
        {"depth", c.backbone.depth},
        {"heads", c.backbone.heads},
        {"mlp_ratio", c.backbone.mlp_ratio},
        {"n_patches", c.backbone.n_patches},
        {"patch_size", c.backbone.patch_size},
        {"embed_hidden", c.backbone.embed_hidden},
        {"pos_hidden", c.backbone.pos_hidden}}},
      {"prompter",
       {{"enabled", c.prompter.enabled},
        {"centers", c.prompter.centers},
        {"neighbors", c.prompter.neighbors},
        {"widths", c.prompter.widths},
        {"shift_scale", c.prompter.shift_scale},
        {"beta_p", c.prompter.beta_p},
        {"beta_a", c.prompter.beta_a},
        {"absolute_channel", c.prompter.absolute_channel},
        {"head_hidden", c.prompter.head_hidden},
        {"decode_neighbors", c.prompter.decode_neighbors}}},
      {"point_prompt",
       {{"count", c.point_prompt.count}, {"range", c.point_prompt.range}, {"init", to_string(c.point_prompt.init)}}},
      {"prompt_tokens", {{"count", c.prompt_tokens.count}}},
      {"adapter", {{"enabled", c.adapter.enabled}, {"bottleneck", c.adapter.bottleneck}}},
      {"propagation",
       {{"enabled", c.propagation.enabled},
        {"variant", to_string(c.propagation.variant)},
        {"placement", to_string(c.propagation.placement)},
        {"centers", c.propagation.centers},
        {"neighbors", c.propagation.neighbors},
        {"k_interp", c.propagation.interp.k_interp},
        {"power", c.propagation.interp.power},
        {"epsilon", c.propagation.interp.epsilon},
        {"space", to_string(c.propagation.space)},
        {"residual", c.propagation.residual},
        {"blocks", c.propagation.blocks}}},
      {"head", {{"inputs", head_inputs}, {"hidden", c.head.hidden}}},
      {"num_classes", c.num_classes},
      {"zero_init", c.zero_init},
  };
}

Json to_json(const TrainConfig& c) {
  return Json{{"mode", to_string(c.mode)},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"warmup_epochs", c.warmup_epochs},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"eps", c.eps},
              {"augment", c.augment},
              {"scale_low", c.scale_low},
              {"scale_high", c.scale_high},
              {"translate", c.translate},
              {"eval_seed", c.eval_seed}};
}

Json to_json(const DatasetSpec& s) {
  return Json{{"classes", s.classes},
              {"per_class", s.per_class},
              {"test_fraction", s.test_fraction},
              {"points", s.points},
              {"variant", to_string(s.variant)},
              {"noise_sigma", s.noise_sigma},
              {"crop_fraction", s.crop_fraction},
              {"clutter_points", s.clutter_points},
              {"rotate", s.rotate},
              {"split_seed", s.split_seed}};
}

Json to_json(const GradCheckConfig& c) {
  return Json{{"step", c.step},
              {"tolerance", c.tolerance},
              {"samples", c.samples},
              {"randomize_zero_init", c.randomize_zero_init},
              {"max_coords", c.max_coords}};
}

Json to_json(const RunConfig& c) {
  return Json{{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"data", to_json(c.data)},
              {"gradcheck", to_json(c.gradcheck)}};
}

ModelConfig model_config_from_json(const Json& j, const std::string& at) {
  ModelConfig c;
  Reader r(j, at);
  if (const Json* b = r.field("backbone")) {
    Reader s(*b, r.path("backbone"));
    s.get("dim", c.backbone.dim);
    s.get("depth", c.backbone.depth);
    s.get("heads", c.backbone.heads);
    s.get("mlp_ratio", c.backbone.mlp_ratio);
    s.get("n_patches", c.backbone.n_patches);
    s.get("patch_size", c.backbone.patch_size);
    s.get("embed_hidden", c.backbone.embed_hidden);
    s.get("pos_hidden", c.backbone.pos_hidden);
    s.finish();
  }
  if (const Json* p = r.field("prompter")) {
    Reader s(*p, r.path("prompter"));
    s.get("enabled", c.prompter.enabled);
    s.get("centers", c.prompter.centers);
    s.get("neighbors", c.prompter.neighbors);
    s.get("widths", c.prompter.widths);
    s.get("shift_scale", c.prompter.shift_scale);
    s.get("beta_p", c.prompter.beta_p);
    s.get("beta_a", c.prompter.beta_a);
    s.get("absolute_channel", c.prompter.absolute_channel);
    s.get("head_hidden", c.prompter.head_hidden);
    s.get("decode_neighbors", c.prompter.decode_neighbors);
    s.finish();
  }
  if (const Json* p = r.field("point_prompt")) {
    Reader s(*p, r.path("point_prompt"));
    s.get("count", c.point_prompt.count);
    s.get("range", c.point_prompt.range);
    s.get_enum("init", kPromptInit, c.point_prompt.init);
    s.finish();
  }
  if (const Json* p = r.field("prompt_tokens")) {
    Reader s(*p, r.path("prompt_tokens"));
    s.get("count", c.prompt_tokens.count);
    s.finish();
  }
  if (const Json* p = r.field("adapter")) {
    Reader s(*p, r.path("adapter"));
    s.get("enabled", c.adapter.enabled);
    s.get("bottleneck", c.adapter.bottleneck);
    s.finish();
  }
  if (const Json* p = r.field("propagation")) {
    Reader s(*p, r.path("propagation"));
    s.get("enabled", c.propagation.enabled);
    s.get_enum("variant", kVariant, c.propagation.variant);
    s.get_enum("placement", kPlacement, c.propagation.placement);
    s.get("centers", c.propagation.centers);
    s.get("neighbors", c.propagation.neighbors);
    s.get("k_interp", c.propagation.interp.k_interp);
    s.get("power", c.propagation.interp.power);
    s.get("epsilon", c.propagation.interp.epsilon);
    s.get_enum("space", kSpace, c.propagation.space);
    s.get("residual", c.propagation.residual);
    s.get("blocks", c.propagation.blocks);
    s.finish();
  }
  if (const Json* h = r.field("head")) {
    Reader s(*h, r.path("head"));
    if (const Json* in = s.field("inputs")) {
      if (!in->is_array()) throw ConfigError(s.path("inputs"), "expected an array of strings");
      c.head.inputs.clear();
      for (std::size_t i = 0; i < in->size(); ++i) {
        const std::string where = s.path("inputs") + "/" + std::to_string(i);
        if (!(*in)[i].is_string()) throw ConfigError(where, "expected a string");
        c.head.inputs.push_back(enum_value(kHeadInput, (*in)[i].get<std::string>(), where));
      }
    }
    s.get("hidden", c.head.hidden);
    s.finish();
  }
  r.get("num_classes", c.num_classes);
  r.get("zero_init", c.zero_init);
  r.finish();
  return c;
}

TrainConfig train_config_from_json(const Json& j, const std::string& at) {
  TrainConfig c;
  Reader r(j, at);
  r.get_enum("mode", kMode, c.mode);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.lr);
  r.get("weight_decay", c.weight_decay);
  r.get("warmup_epochs", c.warmup_epochs);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("eps", c.eps);
  r.get("augment", c.augment);
  r.get("scale_low", c.scale_low);
  r.get("scale_high", c.scale_high);
  r.get("translate", c.translate);
  r.get("eval_seed", c.eval_seed);
  r.finish();
  return c;
}

DatasetSpec dataset_spec_from_json(const Json& j, const std::string& at) {
  DatasetSpec s;
  Reader r(j, at);
  r.get("classes", s.classes);
  r.get("per_class", s.per_class);
  r.get("test_fraction", s.test_fraction);
  r.get("points", s.points);
  r.get_enum("variant", kDataVariant, s.variant);
  r.get("noise_sigma", s.noise_sigma);
  r.get("crop_fraction", s.crop_fraction);
  r.get("clutter_points", s.clutter_points);
  r.get("rotate", s.rotate);
  r.get("split_seed", s.split_seed);
  r.finish();
  return s;
}

GradCheckConfig gradcheck_config_from_json(const Json& j, const std::string& at) {
  GradCheckConfig c;
  Reader r(j, at);
  r.get("step", c.step);
  r.get("tolerance", c.tolerance);
  r.get("samples", c.samples);
  r.get("randomize_zero_init", c.randomize_zero_init);
  r.get("max_coords", c.max_coords);
  r.finish();
  return c;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  Reader r(j, "");
  if (const Json* m = r.field("model")) c.model = model_config_from_json(*m, "/model");
  if (const Json* t = r.field("train")) c.train = train_config_from_json(*t, "/train");
  if (const Json* d = r.field("data")) c.data = dataset_spec_from_json(*d, "/data");
  if (const Json* g = r.field("gradcheck")) c.gradcheck = gradcheck_config_from_json(*g, "/gradcheck");
  r.finish();
  c.validate();
  return c;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingFile(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace geoprompt
