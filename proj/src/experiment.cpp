#include "grcn/experiment.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "grcn/backbone.hpp"
#include "grcn/cells.hpp"
#include "grcn/error.hpp"
#include "grcn/json_io.hpp"
#include "grcn/rng.hpp"

namespace grcn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) throw ConfigError(key, "not a valid number: '" + text + "'");
  return v;
}

}  // namespace

// ---------------------------------------------------------------- FlatConfig

FlatConfig FlatConfig::parse(const std::string& text) {
  FlatConfig c;
  std::stringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config", "line " + std::to_string(number) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config", "line " + std::to_string(number) + ": empty key");
    c.set(key, trim(line.substr(eq + 1)));
  }
  return c;
}

FlatConfig FlatConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void FlatConfig::set(const std::string& key, const std::string& value) { values_[key] = value; }

const std::string* FlatConfig::lookup(const std::string& key) const {
  used_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string FlatConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto* v = lookup(key);
  return v ? *v : fallback;
}

std::size_t FlatConfig::get_size(const std::string& key, std::size_t fallback) const {
  const auto* v = lookup(key);
  return v ? parse_number<std::size_t>(key, *v) : fallback;
}

std::uint64_t FlatConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto* v = lookup(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

double FlatConfig::get_double(const std::string& key, double fallback) const {
  const auto* v = lookup(key);
  if (!v) return fallback;
  const double d = parse_number<double>(key, *v);
  if (!std::isfinite(d)) throw ConfigError(key, "must be finite");
  return d;
}

bool FlatConfig::get_bool(const std::string& key, bool fallback) const {
  const auto* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + *v + "'");
}

std::vector<std::size_t> FlatConfig::get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const {
  const auto* v = lookup(key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : split_list(*v)) out.push_back(parse_number<std::size_t>(key, item));
  return out;
}

std::vector<std::string> FlatConfig::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
  const auto* v = lookup(key);
  return v ? split_list(*v) : fallback;
}

void FlatConfig::reject_unknown() const {
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) throw ConfigError(k, "unknown key");
}

// ---------------------------------------------------------------- ExperimentConfig

std::uint64_t ExperimentConfig::require_seed() const {
  if (!seed) throw ConfigError("seed", "an explicit seed is required (config key or --seed)");
  return *seed;
}

namespace {

template <class E>
std::vector<E> parse_enums(const FlatConfig& f, const std::string& key, const std::vector<E>& fallback,
                           std::initializer_list<E> options) {
  std::vector<std::string> names;
  for (E e : fallback) names.push_back(to_string(e));
  std::vector<E> out;
  for (const auto& name : f.get_list(key, names)) {
    bool found = false;
    for (E e : options)
      if (to_string(e) == name) out.push_back(e), found = true;
    if (!found) throw ConfigError(key, "unknown value '" + name + "'");
  }
  return out;
}

}  // namespace

ExperimentConfig experiment_config(const FlatConfig& f) {
  ExperimentConfig c;
  c.entries = f.entries();
  c.entries.erase("out");
  if (f.has("seed")) c.seed = f.get_u64("seed", 0);
  c.out = f.get_string("out", c.out.string());

  c.data_path = f.get_string("data.path", "");
  if (f.has("data.seed")) c.data_seed = f.get_u64("data.seed", 0);
  auto& d = c.data;
  d.canvas = f.get_size("data.canvas", d.canvas);
  d.frames = f.get_size("data.frames", d.frames);
  d.shapes = parse_enums(f, "data.shapes", d.shapes,
                         {SpriteShape::square, SpriteShape::disk, SpriteShape::cross, SpriteShape::ring});
  d.sizes = f.get_sizes("data.sizes", d.sizes);
  d.min_intensity = f.get_double("data.min_intensity", d.min_intensity);
  d.max_intensity = f.get_double("data.max_intensity", d.max_intensity);
  d.noise = f.get_double("data.noise", d.noise);
  d.appearance_independent = f.get_bool("data.appearance_independent", d.appearance_independent);
  d.border = parse_enums(f, "data.border", std::vector{d.border}, {Border::bounce, Border::wrap}).at(0);
  d.include_still = f.get_bool("data.include_still", d.include_still);
  d.motions = parse_enums(f, "data.motions", d.motions,
                          {Motion::horizontal, Motion::vertical, Motion::diagonal, Motion::circular});
  d.speeds = f.get_sizes("data.speeds", d.speeds);
  c.split.train = f.get_size("data.train", c.split.train);
  c.split.val = f.get_size("data.val", c.split.val);
  c.split.test = f.get_size("data.test", c.split.test);
  if (c.data_path.empty()) d.validate();

  // One input size and clip length shared by the backbone, training crops
  // and evaluation views.
  const std::size_t input = f.get_size("input.size", 32);
  const std::size_t frames = f.get_size("input.frames", 10);
  if (input == 0) throw ConfigError("input.size", "must be positive");
  if (frames == 0) throw ConfigError("input.frames", "must be positive");

  auto& m = c.model;
  m.architecture = parse_architecture(f.get_string("model.architecture", to_string(m.architecture)));
  m.stream = parse_stream(f.get_string("model.stream", to_string(m.stream)));
  m.hidden = f.get_sizes("model.hidden", m.hidden);
  m.kernel = f.get_size("model.kernel", m.kernel);
  m.dropout = f.get_double("model.dropout", m.dropout);
  m.stacked_candidate_input = f.get_bool("model.stacked_candidate_input", m.stacked_candidate_input);
  m.fc_hidden = f.get_size("model.fc_hidden", m.fc_hidden);
  m.backbone.height = m.backbone.width = input;
  m.backbone.channels = f.get_sizes("model.backbone.channels", m.backbone.channels);
  m.backbone.pool = f.get_sizes("model.backbone.pool", std::vector<std::size_t>(m.backbone.channels.size(), 2));
  m.backbone.levels = f.get_size("model.backbone.levels", m.hidden.size());
  m.backbone.frozen = f.get_bool("model.backbone.frozen", m.backbone.frozen);
  m.backbone.validate();
  m.validate();

  auto& t = c.train;
  t.batch = f.get_size("train.batch", t.batch);
  t.max_epochs = f.get_size("train.epochs", t.max_epochs);
  t.patience = f.get_size("train.patience", t.patience);
  t.adam.alpha = f.get_double("train.adam.alpha", t.adam.alpha);
  t.adam.beta1 = f.get_double("train.adam.beta1", t.adam.beta1);
  t.adam.beta2 = f.get_double("train.adam.beta2", t.adam.beta2);
  t.adam.epsilon = f.get_double("train.adam.epsilon", t.adam.epsilon);
  t.crop.ladder = f.get_sizes("train.crop_ladder", t.crop.ladder);
  t.crop.t_crop = frames;
  t.crop.out_h = t.crop.out_w = input;
  t.validation.subvolumes = f.get_size("train.val_subvolumes", t.validation.subvolumes);
  t.validation.t_crop = frames;
  t.validation.crop = f.get_size("eval.crop", c.data_path.empty() ? std::min<std::size_t>(32, d.canvas) : 32);
  t.validation.out = input;
  t.validation.corners = t.validation.flips = false;
  t.validate();

  auto& e = c.eval;
  e.subvolumes = f.get_size("eval.subvolumes", e.subvolumes);
  e.t_crop = frames;
  e.crop = t.validation.crop;
  e.out = input;
  e.corners = f.get_bool("eval.corners", e.corners);
  e.flips = f.get_bool("eval.flips", e.flips);
  if (e.subvolumes == 0) throw ConfigError("eval.subvolumes", "must be >= 1");
  if (e.crop == 0) throw ConfigError("eval.crop", "must be positive");

  c.compare_architectures = parse_enums(
      f, "compare.architectures", c.compare_architectures,
      {Architecture::gru_rcn, Architecture::stacked_gru_rcn, Architecture::bidir_gru_rcn, Architecture::fc_gru_baseline});
  if (f.has("compare.seeds"))
    for (auto s : f.get_sizes("compare.seeds", {})) c.compare_seeds.push_back(s);
  c.fusion.enabled = f.get_bool("compare.fusion", c.fusion.enabled);
  c.fusion.architecture = parse_architecture(f.get_string("compare.fusion_architecture", to_string(c.fusion.architecture)),
                                             "compare.fusion_architecture");
  c.fusion.rgb_weight = f.get_double("compare.fusion_rgb_weight", c.fusion.rgb_weight);
  c.fusion.framediff_weight = f.get_double("compare.fusion_framediff_weight", c.fusion.framediff_weight);
  if (c.fusion.rgb_weight < 0 || c.fusion.framediff_weight < 0 || c.fusion.rgb_weight + c.fusion.framediff_weight <= 0)
    throw ConfigError("compare.fusion_rgb_weight", "fusion weights must be non-negative with a positive sum");

  c.gradcheck.h = f.get_double("gradcheck.h", c.gradcheck.h);
  c.gradcheck.tolerance = f.get_double("gradcheck.tolerance", c.gradcheck.tolerance);
  c.gradcheck.max_entries = f.get_size("gradcheck.entries", 20);
  if (!(c.gradcheck.h > 0)) throw ConfigError("gradcheck.h", "must be positive");

  f.reject_unknown();
  return c;
}

// ---------------------------------------------------------------- runs

Dataset load_or_generate(const ExperimentConfig& c, std::uint64_t seed) {
  if (!c.data_path.empty()) {
    if (!std::filesystem::exists(c.data_path)) throw ConfigError("data.path", "no dataset at " + c.data_path.string());
    return read_dataset(c.data_path);
  }
  return generate_dataset(c.data, c.split, c.data_seed.value_or(seed));
}

ModelConfig model_for(const ExperimentConfig& c, const SynthSpec& data, Architecture architecture, Stream stream) {
  ModelConfig m = c.model;
  m.architecture = architecture;
  m.stream = stream;
  m.classes = data.classes();
  m.validate();
  return m;
}

namespace {

std::string run_name(const ModelConfig& m, std::uint64_t seed) {
  return to_string(m.architecture) + "_" + to_string(m.stream) + "_s" + std::to_string(seed);
}

std::vector<std::size_t> labels_of(std::span<const VideoClip> clips) {
  std::vector<std::size_t> out;
  for (const auto& c : clips) out.push_back(c.label);
  return out;
}

void check_sizes(const ExperimentConfig& c, const SynthSpec& data, Stream stream) {
  for (std::size_t s : c.train.crop.ladder)
    if (s > data.canvas) throw ConfigError("train.crop_ladder", "crop side " + std::to_string(s) + " exceeds the canvas");
  if (c.eval.crop > data.canvas) throw ConfigError("eval.crop", "exceeds the canvas");
  const std::size_t usable = stream == Stream::framediff ? data.frames - 1 : data.frames;
  if (c.train.crop.t_crop > usable)
    throw ConfigError("input.frames", "longer than the clips (framediff drops one frame)");
}

}  // namespace

RunResult run_model(const ExperimentConfig& c, const Dataset& data, const ModelConfig& model, std::uint64_t seed,
                    const std::filesystem::path& dir, const Progress& progress) {
  check_sizes(c, data.spec, model.stream);
  RunResult r;
  r.name = run_name(model, seed);
  r.seed = seed;
  Rng init_rng(mix_seed(mix_seed(seed) + 1));
  const Model initial = init_model(model, init_rng);
  auto on_epoch = [&](const EpochRecord& e) {
    if (!progress) return;
    std::ostringstream s;
    s << r.name << " epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << " val_acc "
      << e.val_acc;
    progress(s.str());
  };
  TrainResult trained = train(initial, c.train, data.train, data.val, mix_seed(mix_seed(seed) + 2), on_epoch);
  r.model = std::move(trained.model);
  r.log = std::move(trained.log);
  r.test = evaluate_model(r.model, data.test, c.eval);
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    write_text(dir / "trainlog.jsonl", r.log.to_jsonl(true));
    save_checkpoint(dir / "checkpoint", r.model);
  }
  if (progress) progress(r.name + " test_accuracy " + std::to_string(r.test.accuracy));
  return r;
}

FusionResult fuse_runs(const RunResult& rgb, const RunResult& framediff, const std::vector<std::size_t>& labels,
                       std::size_t classes, double rgb_weight, double framediff_weight) {
  if (rgb.test.scores.size() != framediff.test.scores.size())
    throw DimensionError("fusion needs scores for the same clips");
  std::vector<Tensor> fused;
  for (std::size_t i = 0; i < rgb.test.scores.size(); ++i)
    fused.push_back(fuse_streams(rgb.test.scores[i], framediff.test.scores[i], rgb_weight, framediff_weight));
  FusionResult f;
  f.seed = rgb.seed;
  f.architecture = rgb.model.config.architecture;
  f.rgb_weight = rgb_weight;
  f.framediff_weight = framediff_weight;
  f.test = score_predictions(std::move(fused), labels, classes);
  return f;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

namespace {

nlohmann::ordered_json eval_json(const EvalResult& e) {
  nlohmann::ordered_json j;
  j["test_accuracy"] = e.accuracy;
  j["per_class_accuracy"] = e.per_class_accuracy;
  j["confusion"] = e.confusion;
  return j;
}

}  // namespace

nlohmann::ordered_json metrics_json(const ExperimentConfig& c, const Report& report,
                                    const std::map<std::string, std::string>& run_dirs) {
  nlohmann::ordered_json j;
  j["format"] = "grcn-metrics";
  j["version"] = 1;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : c.entries) cfg[k] = v;
  j["config"] = cfg;
  j["class_names"] = report.class_names;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : report.runs) {
    nlohmann::ordered_json run;
    run["name"] = r.name;
    run["architecture"] = to_string(r.model.config.architecture);
    run["stream"] = to_string(r.model.config.stream);
    run["seed"] = r.seed;
    run["parameters"] = total_parameters(r.model.params);
    run["epochs"] = r.log.epochs.size();
    run["best_epoch"] = r.log.best_epoch;
    if (r.log.best_epoch > 0) {
      const auto& best = r.log.epochs[r.log.best_epoch - 1];
      run["val_loss"] = best.val_loss;
      run["val_accuracy"] = best.val_acc;
    } else {
      run["val_loss"] = nullptr;
      run["val_accuracy"] = nullptr;
    }
    run.update(eval_json(r.test));
    const auto dir = run_dirs.count(r.name) ? run_dirs.at(r.name) : std::string();
    run["trainlog"] = dir.empty() ? "trainlog.jsonl" : dir + "/trainlog.jsonl";
    run["checkpoint"] = dir.empty() ? "checkpoint" : dir + "/checkpoint";
    j["runs"].push_back(run);
  }
  j["fusion"] = nlohmann::ordered_json::array();
  for (const auto& f : report.fusions) {
    nlohmann::ordered_json fj;
    fj["architecture"] = to_string(f.architecture);
    fj["seed"] = f.seed;
    fj["rgb_weight"] = f.rgb_weight;
    fj["framediff_weight"] = f.framediff_weight;
    fj.update(eval_json(f.test));
    j["fusion"].push_back(fj);
  }
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  std::vector<std::pair<Architecture, Stream>> seen;
  for (const auto& r : report.runs) {
    const std::pair key{r.model.config.architecture, r.model.config.stream};
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    nlohmann::ordered_json s;
    s["architecture"] = to_string(key.first);
    s["stream"] = to_string(key.second);
    std::size_t n = 0;
    for (const auto& o : report.runs) n += o.model.config.architecture == key.first && o.model.config.stream == key.second;
    s["runs"] = n;
    s["mean_test_accuracy"] = mean_accuracy(report, key.first, key.second);
    summary.push_back(s);
  }
  if (!report.fusions.empty()) {
    nlohmann::ordered_json s;
    s["architecture"] = to_string(report.fusions.front().architecture);
    s["stream"] = "fused";
    s["runs"] = report.fusions.size();
    s["mean_test_accuracy"] = mean_fusion_accuracy(report);
    summary.push_back(s);
  }
  j["summary"] = summary;
  return j;
}

double mean_accuracy(const Report& report, Architecture architecture, Stream stream) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : report.runs)
    if (r.model.config.architecture == architecture && r.model.config.stream == stream) sum += r.test.accuracy, ++n;
  return n ? sum / static_cast<double>(n) : 0.0;
}

double mean_fusion_accuracy(const Report& report) {
  double sum = 0.0;
  for (const auto& f : report.fusions) sum += f.test.accuracy;
  return report.fusions.empty() ? 0.0 : sum / static_cast<double>(report.fusions.size());
}

Report run_train(const ExperimentConfig& c, const Progress& progress) {
  const std::uint64_t seed = c.require_seed();
  const Dataset data = load_or_generate(c, seed);
  Report report;
  report.class_names = data.spec.class_names();
  const ModelConfig m = model_for(c, data.spec, c.model.architecture, c.model.stream);
  report.runs.push_back(run_model(c, data, m, seed, c.out, progress));
  write_text(c.out / "metrics.json", metrics_json(c, report, {}).dump(2) + "\n");
  return report;
}

Report run_compare(const ExperimentConfig& c, const Progress& progress) {
  std::vector<std::uint64_t> seeds = c.compare_seeds;
  if (seeds.empty()) seeds.push_back(c.require_seed());
  Report report;
  std::map<std::string, std::string> dirs;
  for (std::uint64_t seed : seeds) {
    const Dataset data = load_or_generate(c, seed);
    report.class_names = data.spec.class_names();
    auto run = [&](Architecture a, Stream s) -> const RunResult& {
      const ModelConfig m = model_for(c, data.spec, a, s);
      const std::string name = run_name(m, seed);
      for (const auto& r : report.runs)
        if (r.name == name) return r;
      dirs[name] = name;
      report.runs.push_back(run_model(c, data, m, seed, c.out / name, progress));
      return report.runs.back();
    };
    for (Architecture a : c.compare_architectures) run(a, c.model.stream);
    if (c.fusion.enabled) {
      const std::size_t rgb = &run(c.fusion.architecture, Stream::rgb) - report.runs.data();
      const std::size_t fd = &run(c.fusion.architecture, Stream::framediff) - report.runs.data();
      report.fusions.push_back(fuse_runs(report.runs[rgb], report.runs[fd], labels_of(data.test), data.spec.classes(),
                                         c.fusion.rgb_weight, c.fusion.framediff_weight));
      if (progress)
        progress(to_string(c.fusion.architecture) + "_fused_s" + std::to_string(seed) + " test_accuracy " +
                 std::to_string(report.fusions.back().test.accuracy));
    }
  }
  write_text(c.out / "metrics.json", metrics_json(c, report, dirs).dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------- describe

double conv_recurrence_estimate(const LevelDims& d, std::size_t kernel, std::size_t frames) {
  return 3.0 * static_cast<double>(frames) * static_cast<double>(d.n1 * d.n2) * static_cast<double>(kernel * kernel) *
         static_cast<double>(d.input_channels * d.hidden_channels + d.hidden_channels * d.hidden_channels);
}

double fc_recurrence_estimate(const LevelDims& d, std::size_t frames) {
  const double n = static_cast<double>(d.n1 * d.n2);
  return 3.0 * static_cast<double>(frames) * n * n *
         static_cast<double>(d.input_channels * d.hidden_channels + d.hidden_channels * d.hidden_channels);
}

std::vector<LevelSummary> summarize_levels(const std::vector<LevelDims>& levels, std::size_t kernel, std::size_t frames,
                                           bool biases) {
  std::vector<LevelSummary> out;
  for (const auto& d : levels) {
    LevelSummary s;
    s.dims = d;
    s.kernel = kernel;
    s.parameters = param_count(ConvGruDims{kernel, kernel, d.input_channels, d.hidden_channels}, biases);
    s.conv_multiplications = conv_recurrence_estimate(d, kernel, frames);
    s.fc_multiplications = fc_recurrence_estimate(d, frames);
    out.push_back(s);
  }
  return out;
}

std::vector<LevelDims> model_levels(const ModelConfig& m) {
  std::vector<LevelDims> out;
  const auto shapes = percept_shapes(m.backbone);
  for (std::size_t l = 0; l < shapes.size(); ++l)
    out.push_back({"level" + std::to_string(l), shapes[l][1], shapes[l][2], shapes[l][0], m.hidden.at(l)});
  return out;
}

namespace {

struct Group {
  std::string name;
  std::size_t parameters = 0;
};

// Inventory entries grouped by everything before the last dot.
std::vector<Group> parameter_groups(const ModelParams& p) {
  std::vector<Group> out;
  for (const auto& [name, n] : parameter_inventory(p)) {
    const std::string g = name.substr(0, name.rfind('.'));
    if (out.empty() || out.back().name != g) out.push_back({g, 0});
    out.back().parameters += n;
  }
  return out;
}

std::string shape_text(std::size_t c, std::size_t h, std::size_t w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

}  // namespace

nlohmann::ordered_json describe_json(const Model& model, std::size_t frames) {
  const auto& m = model.config;
  nlohmann::ordered_json j;
  j["model"] = to_json(m);
  j["frames"] = frames;
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  std::size_t c = m.backbone.input_channels, h = m.backbone.height, w = m.backbone.width;
  for (std::size_t s = 0; s < m.backbone.stages(); ++s) {
    nlohmann::ordered_json st;
    st["name"] = "backbone.stage" + std::to_string(s);
    st["input"] = shape_text(c, h, w);
    c = m.backbone.channels[s];
    h /= m.backbone.pool[s];
    w /= m.backbone.pool[s];
    st["output"] = shape_text(c, h, w);
    stages.push_back(st);
  }
  j["backbone"] = stages;
  nlohmann::ordered_json levels = nlohmann::ordered_json::array();
  if (m.architecture != Architecture::fc_gru_baseline) {
    for (const auto& s : summarize_levels(model_levels(m), m.kernel, frames)) {
      nlohmann::ordered_json l;
      l["name"] = s.dims.name;
      l["percept"] = shape_text(s.dims.input_channels, s.dims.n1, s.dims.n2);
      l["hidden"] = shape_text(s.dims.hidden_channels * (m.architecture == Architecture::bidir_gru_rcn ? 2 : 1),
                               s.dims.n1, s.dims.n2);
      l["recurrence_parameters"] = s.parameters;
      l["estimated_conv_multiplications"] = s.conv_multiplications;
      l["estimated_fc_multiplications"] = s.fc_multiplications;
      levels.push_back(l);
    }
  }
  j["levels"] = levels;
  nlohmann::ordered_json groups = nlohmann::ordered_json::array();
  for (const auto& g : parameter_groups(model.params)) {
    nlohmann::ordered_json gj;
    gj["name"] = g.name;
    gj["parameters"] = g.parameters;
    groups.push_back(gj);
  }
  j["parameter_groups"] = groups;
  j["total_parameters"] = total_parameters(model.params);
  return j;
}

std::string describe_text(const Model& model, std::size_t frames) {
  const auto j = describe_json(model, frames);
  std::ostringstream out;
  const auto& m = model.config;
  out << "architecture " << to_string(m.architecture) << ", stream " << to_string(m.stream) << ", " << m.classes
      << " classes, T = " << frames << "\n\nbackbone\n";
  for (const auto& s : j["backbone"])
    out << "  " << s["name"].get<std::string>() << "  " << s["input"].get<std::string>() << " -> "
        << s["output"].get<std::string>() << "\n";
  if (!j["levels"].empty()) {
    out << "\nrecurrent levels (k = " << m.kernel << ")\n";
    for (const auto& l : j["levels"])
      out << "  " << l["name"].get<std::string>() << "  percept " << l["percept"].get<std::string>() << "  hidden "
          << l["hidden"].get<std::string>() << "  params/direction " << l["recurrence_parameters"].get<std::size_t>()
          << "\n    estimated multiplications: convolutional " << l["estimated_conv_multiplications"].get<double>()
          << ", fully connected " << l["estimated_fc_multiplications"].get<double>() << "\n";
    out << "  (estimates: 3 T N1 N2 k1 k2 (Ox Oh + Oh Oh) against 3 T (N1 N2)^2 (Ox Oh + Oh Oh))\n";
  }
  out << "\nparameters\n";
  for (const auto& g : j["parameter_groups"])
    out << "  " << g["name"].get<std::string>() << "  " << g["parameters"].get<std::size_t>() << "\n";
  out << "  total  " << j["total_parameters"].get<std::size_t>() << "\n";
  return out.str();
}

}  // namespace grcn
