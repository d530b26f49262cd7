#include "geoprompt/cli.hpp"

#include "geoprompt/checkpoint.hpp"
#include "geoprompt/data.hpp"
#include "geoprompt/gradcheck.hpp"
#include "geoprompt/random.hpp"
#include "geoprompt/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>

namespace geoprompt::cli {

namespace {

RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

Dataset load_or_generate(const std::optional<std::string>& manifest, const DatasetSpec& spec) {
  if (!manifest) return generate(spec);
  Dataset d = read_dataset(*manifest);
  if (d.classes != spec.classes) {
    throw ConfigError("/data/classes", "does not match the classes of " + *manifest);
  }
  return d;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("short write to " + path);
}

std::string config_sidecar(const std::string& ckpt) { return ckpt + ".config.json"; }
std::string metrics_sidecar(const std::string& ckpt) { return ckpt + ".metrics.jsonl"; }

Json budget_json(const ParameterBudget& b) {
  return Json{{"trainable", b.trainable}, {"total", b.total}, {"ratio", b.ratio}, {"flops", b.flops}};
}

// Trains `model` and writes the checkpoint plus its config and metrics sidecars.
Json train_and_save(Model<float>& model, const RunConfig& effective, const Dataset& data, std::uint64_t seed,
                    const std::string& out_path, const std::string& kind) {
  std::ofstream metrics(metrics_sidecar(out_path), std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_sidecar(out_path));
  write_text_file(config_sidecar(out_path), to_json(effective).dump(2) + "\n");

  const TrainHistory h = train(model, data, effective.train, seed, [&](const MetricRecord& r) {
    metrics << to_json(r).dump() << "\n";
    metrics.flush();
  });
  double max_shift = 0.0;
  for (double s : h.batch_max_shift) max_shift = std::max(max_shift, s);
  const ParameterBudget budget = count_trainable(model, effective.data.points);

  Json meta{{"kind", kind},
            {"seed", seed},
            {"config", to_json(effective)},
            {"model", to_json(model.config())},
            {"budget", budget_json(budget)},
            {"max_shift", max_shift},
            {"prompt_drift", h.prompt_drift},
            {"frozen_intact", h.frozen_intact}};
  save_checkpoint(out_path, make_checkpoint(model.parameters(), meta));

  const MetricRecord& last = h.records.back();
  return Json{{"checkpoint", out_path},
              {"epochs", effective.train.epochs},
              {"test_accuracy", last.accuracy},
              {"test_loss", last.loss},
              {"budget", budget_json(budget)},
              {"max_shift", max_shift},
              {"prompt_drift", h.prompt_drift},
              {"frozen_intact", h.frozen_intact}};
}

void cmd_gen_data(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
  const DatasetSpec spec = dataset_spec_from_json(read_json_file(spec_path), "");
  spec.validate("");
  const Dataset d = generate(spec);
  write_dataset(out_dir, d, spec);
  out << Json{{"manifest", out_dir + "/manifest.json"}, {"train", d.train.size()}, {"test", d.test.size()}}.dump()
      << "\n";
}

void cmd_pretrain(const std::string& config_path, const std::optional<std::string>& data_path,
                  const std::string& out_path, std::uint64_t seed, std::ostream& out) {
  RunConfig cfg = load_run_config(config_path);
  cfg.model = backbone_only(cfg.model);
  cfg.train.mode = TrainMode::pretrain;
  const Dataset data = load_or_generate(data_path, cfg.data);
  Model<float> model(cfg.model, seed);
  apply_freeze(model.parameters(), TrainMode::pretrain);
  out << train_and_save(model, cfg, data, seed, out_path, "pretrain").dump() << "\n";
}

void cmd_adapt(const std::string& config_path, const std::string& backbone_path,
               const std::optional<std::string>& data_path, const std::string& out_path, std::uint64_t seed,
               std::ostream& out) {
  RunConfig cfg = load_run_config(config_path);
  if (cfg.train.mode == TrainMode::pretrain) {
    throw ConfigError("/train/mode", "adapt needs mode \"adapt\" or \"linear_probe\"");
  }
  // A linear probe is the bare frozen backbone with a trained head.
  if (cfg.train.mode == TrainMode::linear_probe) cfg.model = backbone_only(cfg.model);
  const Checkpoint backbone = load_checkpoint(backbone_path);
  const Dataset data = load_or_generate(data_path, cfg.data);
  Model<float> model(cfg.model, seed);
  if (restore_parameters(model.parameters(), backbone, "backbone.") == 0) {
    throw std::runtime_error(backbone_path + " holds no backbone tensors");
  }
  apply_freeze(model.parameters(), cfg.train.mode);
  out << train_and_save(model, cfg, data, seed, out_path, "adapt").dump() << "\n";
}

// Rebuilds the model a checkpoint was trained with and loads every tensor.
Model<float> load_model(const Checkpoint& ckpt, const std::string& path) {
  if (!ckpt.meta.contains("model")) throw std::runtime_error(path + ": checkpoint has no model config");
  Model<float> model(model_config_from_json(ckpt.meta.at("model"), "/model"), ckpt.meta.value("seed", std::uint64_t{0}));
  restore_parameters(model.parameters(), ckpt, "");
  for (const auto& t : ckpt.tensors) model.parameters().at(t.name).frozen = t.frozen;
  return model;
}

RunConfig config_for(const std::optional<std::string>& config_path, const Checkpoint& ckpt) {
  if (config_path) return load_run_config(*config_path);
  if (!ckpt.meta.contains("config")) return RunConfig{};
  return run_config_from_json(ckpt.meta.at("config"));
}

void cmd_eval(const std::optional<std::string>& config_path, const std::string& ckpt_path,
              const std::optional<std::string>& data_path, const std::string& split, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const RunConfig cfg = config_for(config_path, ckpt);
  const Model<float> model = load_model(ckpt, ckpt_path);
  const Dataset data = load_or_generate(data_path, cfg.data);
  if (model.config().num_classes != static_cast<Index>(data.classes.size())) {
    throw ConfigError("/data/classes", "checkpoint head has " + std::to_string(model.config().num_classes) + " classes");
  }
  const auto& samples = split == "train" ? data.train : data.test;
  const EvalResult r = evaluate(model, samples, cfg.train.eval_seed);
  out << Json{{"split", split}, {"samples", samples.size()}, {"loss", r.loss}, {"accuracy", r.accuracy}}.dump()
      << "\n";
}

std::string parameter_group(const std::string& name) {
  if (name.rfind("peft.prompter.", 0) == 0) return "shift_prompter";
  if (name == "peft.point_prompt") return "point_prompt";
  if (name.rfind("peft.", 0) == 0 && name.find(".adapter.") != std::string::npos) return "adapter";
  if (name.rfind("peft.", 0) == 0 && name.size() > 7 && name.compare(name.size() - 7, 7, ".prompt") == 0) {
    return "prompt_tokens";
  }
  if (name.rfind("head.", 0) == 0) return "head";
  if (name.rfind("backbone.", 0) == 0) return "backbone";
  return "other";
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, std::ostream& out) {
  RunConfig cfg = load_run_config(config_path);
  if (cfg.gradcheck.randomize_zero_init) cfg.model.zero_init = false;
  Model<double> model(cfg.model, seed);
  apply_freeze(model.parameters(), cfg.train.mode == TrainMode::pretrain ? TrainMode::pretrain : cfg.train.mode);

  std::vector<RowMatrix<double>> clouds;
  std::vector<Index> labels;
  const auto classes = static_cast<Index>(cfg.data.classes.size());
  for (Index i = 0; i < cfg.gradcheck.samples; ++i) {
    const ShapeSample s = make_sample(cfg.data, i % classes, i / classes);
    clouds.push_back(s.cloud.coords());
    labels.push_back(s.label);
  }
  auto loss = [&](Tape<double>& t) {
    Var<double> total;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      auto r = model.forward(t, clouds[i], mix_seed(seed, i));
      Var<double> l = cross_entropy(r.logits, {labels[i]});
      total = total.valid() ? add(total, l) : l;
    }
    return total;
  };
  const auto checks =
      grad_check_parameters(loss, model.parameters().trainable(), cfg.gradcheck.step, cfg.gradcheck.max_coords);

  std::map<std::string, GradCheckResult> groups;
  double worst = 0.0;
  for (const auto& c : checks) {
    auto& g = groups[parameter_group(c.name)];
    g.max_relative_error = std::max(g.max_relative_error, c.result.max_relative_error);
    g.checked += c.result.checked;
    g.skipped += c.result.skipped;
    worst = std::max(worst, c.result.max_relative_error);
  }
  Json jg = Json::object();
  for (const auto& [name, g] : groups) {
    jg[name] = Json{{"max_relative_error", g.max_relative_error}, {"checked", g.checked}, {"skipped", g.skipped}};
  }
  const bool pass = worst <= cfg.gradcheck.tolerance;
  out << Json{{"max_relative_error", worst}, {"tolerance", cfg.gradcheck.tolerance}, {"step", cfg.gradcheck.step},
              {"pass", pass}, {"groups", jg}}
             .dump()
      << "\n";
  return pass ? 0 : kExitFailure;
}

void cmd_inspect(const std::string& ckpt_path, const std::optional<std::string>& data_path,
                 const std::optional<std::string>& attention_path, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const RunConfig cfg = config_for(std::nullopt, ckpt);
  const Model<float> model = load_model(ckpt, ckpt_path);

  out << std::left << std::setw(40) << "name" << std::setw(16) << "shape" << std::setw(10) << "count"
      << "frozen\n";
  model.parameters().for_each([&](const Parameter<float>& p) {
    out << std::left << std::setw(40) << p.name << std::setw(16) << shape_string(p.value.shape()) << std::setw(10)
        << p.value.size() << (p.frozen ? "yes" : "no") << "\n";
  });
  const ParameterBudget b = count_trainable(model, cfg.data.points);
  out << "trainable " << b.trainable << " / " << b.total << " (" << std::setprecision(4) << 100.0 * b.ratio
      << "%)\n";
  out << "forward flops " << std::setprecision(6) << b.flops << "\n";

  const Dataset data = load_or_generate(data_path, cfg.data);
  const auto& samples = data.test.empty() ? data.train : data.test;
  if (samples.empty()) return;
  Tape<float> t;
  const RowMatrix<float> x = samples.front().cloud.coords().cast<float>();
  const auto r = model.forward(t, x, mix_seed(cfg.train.eval_seed, 0));
  const std::string csv_path = attention_path.value_or(ckpt_path + ".attention.csv");
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << "block,query,key,weight\n" << std::setprecision(9);
  for (std::size_t blk = 0; blk < r.cls_attention.size(); ++blk)
    for (std::size_t k = 0; k < r.cls_attention[blk].size(); ++k)
      csv << blk << ",0," << k << "," << r.cls_attention[blk][k] << "\n";
  out << "cls attention " << csv_path << "\n";
}

std::string error_line(const std::string& kind, Json fields) {
  Json j{{"error", kind}};
  for (auto& [k, v] : fields.items()) j[k] = v;
  return j.dump();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"geoprompt: prompt-based adaptation of a frozen point-cloud transformer"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string config, out_path, ckpt, spec, backbone, split = "test";
  std::optional<std::string> data, attention, config_opt;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset (XYZ files + manifest.json)");
  gen->add_option("--spec", spec, "dataset spec JSON")->required();
  gen->add_option("--out", out_path, "output directory")->required();

  auto* pre = app.add_subcommand("pretrain", "supervised pre-training of the backbone on the config's classes");
  pre->add_option("--config", config, "run config JSON")->required();
  pre->add_option("--out", out_path, "checkpoint path")->required();
  pre->add_option("--data", data, "dataset manifest (default: generate from the config)");
  pre->add_option("--seed", seed, "init and training seed");

  auto* adapt = app.add_subcommand("adapt", "train prompts/adapters/head on a frozen backbone");
  adapt->add_option("--config", config, "run config JSON")->required();
  adapt->add_option("--backbone", backbone, "pre-trained checkpoint")->required();
  adapt->add_option("--out", out_path, "checkpoint path")->required();
  adapt->add_option("--data", data, "dataset manifest (default: generate from the config)");
  adapt->add_option("--seed", seed, "init and training seed");

  auto* ev = app.add_subcommand("eval", "accuracy of a checkpoint");
  ev->add_option("--config", config_opt, "run config JSON (default: the one stored in the checkpoint)");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data, "dataset manifest (default: generate from the config)");
  ev->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every trainable parameter group");
  gc->add_option("--config", config, "run config JSON")->required();
  gc->add_option("--seed", seed, "init seed");

  auto* ins = app.add_subcommand("inspect", "parameter table, budget and CLS attention CSV");
  ins->add_option("--ckpt", ckpt, "checkpoint")->required();
  ins->add_option("--data", data, "dataset manifest for the attention sample");
  ins->add_option("--attention", attention, "CSV path (default: <ckpt>.attention.csv)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", {{"message", e.what()}}) << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) cmd_gen_data(spec, out_path, out);
    else if (pre->parsed()) cmd_pretrain(config, data, out_path, seed, out);
    else if (adapt->parsed()) cmd_adapt(config, backbone, data, out_path, seed, out);
    else if (ev->parsed()) cmd_eval(config_opt, ckpt, data, split, out);
    else if (gc->parsed()) return cmd_gradcheck(config, seed, out);
    else if (ins->parsed()) cmd_inspect(ckpt, data, attention, out);
    return 0;
  } catch (const ConfigError& e) {
    err << error_line("config", {{"pointer", e.pointer()}, {"message", e.message()}}) << "\n";
    return kExitConfig;
  } catch (const MissingFile& e) {
    err << error_line("missing_file", {{"path", e.path()}}) << "\n";
    return kExitMissingFile;
  } catch (const std::exception& e) {
    err << error_line("runtime", {{"message", e.what()}}) << "\n";
    return kExitFailure;
  }
}

}  // namespace geoprompt::cli
