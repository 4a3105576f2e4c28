// grcn: generate data, train, evaluate and inspect recurrent convolutional
// video models from a flat key=value config.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "grcn/error.hpp"
#include "grcn/experiment.hpp"
#include "grcn/rng.hpp"

namespace {

using namespace grcn;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the seed key");
  cmd->add_option("--out", c.out, "output directory (overrides the out key)");
}

ExperimentConfig load(const Common& c) {
  FlatConfig flat = FlatConfig::load(c.config);
  if (c.seed) flat.set("seed", std::to_string(*c.seed));
  if (!c.out.empty()) flat.set("out", c.out);
  return experiment_config(flat);
}

void progress(const std::string& line) { std::cerr << line << "\n"; }

void print_eval(const std::string& label, const EvalResult& e, const std::vector<std::string>& names) {
  std::printf("%s test accuracy %.4f\n", label.c_str(), e.accuracy);
  for (std::size_t k = 0; k < e.per_class_accuracy.size(); ++k)
    std::printf("  %-16s %.4f\n", k < names.size() ? names[k].c_str() : std::to_string(k).c_str(),
                e.per_class_accuracy[k]);
}

int cmd_generate(const Common& c) {
  const auto cfg = load(c);
  const Dataset d = load_or_generate(cfg, cfg.require_seed());
  write_dataset(cfg.out, d);
  std::printf("wrote %zu/%zu/%zu clips (%zu classes) to %s\n", d.train.size(), d.val.size(), d.test.size(),
              d.spec.classes(), cfg.out.string().c_str());
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = load(c);
  const Report r = run_train(cfg, progress);
  print_eval(r.runs.front().name, r.runs.front().test, r.class_names);
  std::printf("metrics: %s\n", (cfg.out / "metrics.json").string().c_str());
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint) {
  const auto cfg = load(c);
  const Dataset d = load_or_generate(cfg, cfg.require_seed());
  const std::filesystem::path dir = checkpoint.empty() ? cfg.out / "checkpoint" : std::filesystem::path(checkpoint);
  const Model model = load_checkpoint(dir);
  if (model.config.classes != d.spec.classes())
    throw ConfigError("data", "checkpoint has " + std::to_string(model.config.classes) + " classes, data has " +
                                  std::to_string(d.spec.classes()));
  const EvalResult e = evaluate_model(model, d.test, cfg.eval);
  nlohmann::ordered_json j;
  j["format"] = "grcn-evaluation";
  j["version"] = 1;
  j["architecture"] = to_string(model.config.architecture);
  j["stream"] = to_string(model.config.stream);
  j["test_accuracy"] = e.accuracy;
  j["per_class_accuracy"] = e.per_class_accuracy;
  j["confusion"] = e.confusion;
  write_text(cfg.out / "evaluation.json", j.dump(2) + "\n");
  print_eval(to_string(model.config.architecture), e, d.spec.class_names());
  return 0;
}

int cmd_describe(const Common& c, bool json) {
  const auto cfg = load(c);
  SynthSpec spec = cfg.data;
  if (!cfg.data_path.empty()) spec = read_dataset(cfg.data_path).spec;
  const Model model = zero_model(model_for(cfg, spec, cfg.model.architecture, cfg.model.stream));
  if (json)
    std::cout << describe_json(model, cfg.train.crop.t_crop).dump(2) << "\n";
  else
    std::cout << describe_text(model, cfg.train.crop.t_crop);
  return 0;
}

int cmd_gradcheck(const Common& c) {
  const auto cfg = load(c);
  const std::uint64_t seed = cfg.require_seed();
  const Model model = [&] {
    Rng rng(mix_seed(mix_seed(seed) + 1));
    return init_model(model_for(cfg, cfg.data, cfg.model.architecture, cfg.model.stream), rng);
  }();
  Rng rng(mix_seed(mix_seed(seed) + 3));
  const auto& b = model.config.backbone;
  Tensor clip({cfg.train.crop.t_crop, b.input_channels, b.height, b.width});
  for (auto& v : clip.data()) v = rng.uniform();
  GradCheckOptions o = cfg.gradcheck;
  o.seed = seed;
  const auto report = grad_check_model(model, clip, rng.below(model.config.classes), o);
  for (const auto& blk : report.blocks)
    std::printf("  %-28s %5zu entries  max rel %.3e  max abs %.3e\n", blk.name.c_str(), blk.checked, blk.max_rel_error,
                blk.max_abs_error);
  std::printf("max relative error %.3e (tolerance %.1e), max absolute error %.3e: %s\n", report.max_rel_error,
              report.tolerance, report.max_abs_error, report.passed() ? "pass" : "FAIL");
  return report.passed() ? 0 : 3;
}

int cmd_compare(const Common& c) {
  const auto cfg = load(c);
  const Report r = run_compare(cfg, progress);
  for (const auto& run : r.runs) std::printf("%-36s %.4f\n", run.name.c_str(), run.test.accuracy);
  for (const auto& f : r.fusions)
    std::printf("%-36s %.4f\n", (to_string(f.architecture) + "_fused_s" + std::to_string(f.seed)).c_str(),
                f.test.accuracy);
  std::printf("metrics: %s\n", (cfg.out / "metrics.json").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent convolutional networks for synthetic video classification"};
  app.require_subcommand(1);
  Common common;
  std::string checkpoint;
  bool json = false;

  auto* gen = app.add_subcommand("generate", "synthesise a dataset into --out");
  add_common(gen, common);
  auto* trn = app.add_subcommand("train", "train one model, evaluate it, write metrics and a checkpoint");
  add_common(trn, common);
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory (default <out>/checkpoint)");
  auto* desc = app.add_subcommand("describe", "layer shapes, parameter counts and multiplication estimates");
  add_common(desc, common);
  desc->add_flag("--json", json, "print JSON");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter block");
  add_common(gc, common);
  auto* cmp = app.add_subcommand("compare", "train several architectures and seeds, with optional fusion");
  add_common(cmp, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_generate(common);
    if (*trn) return cmd_train(common);
    if (*ev) return cmd_evaluate(common, checkpoint);
    if (*desc) return cmd_describe(common, json);
    if (*gc) return cmd_gradcheck(common);
    if (*cmp) return cmd_compare(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
