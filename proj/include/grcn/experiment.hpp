#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "grcn/model.hpp"
#include "grcn/synth.hpp"
#include "grcn/training.hpp"

namespace grcn {

// ---------------------------------------------------------------- flat config

// key=value lines with dotted keys; '#' starts a comment. Later lines win.
class FlatConfig {
 public:
  static FlatConfig parse(const std::string& text);
  static FlatConfig load(const std::filesystem::path& path);  // ConfigError "config" if unreadable

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;

  // ConfigError naming the first key nobody asked for.
  void reject_unknown() const;

 private:
  const std::string* lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

// ---------------------------------------------------------------- experiment

struct FusionConfig {
  bool enabled = false;
  Architecture architecture = Architecture::gru_rcn;
  double rgb_weight = 1.0, framediff_weight = 2.0;
};

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;  // must be given for anything random
  std::filesystem::path out = "runs";
  std::filesystem::path data_path;      // empty: synthesise
  std::optional<std::uint64_t> data_seed;  // defaults to the run seed
  SynthSpec data;
  SplitCounts split;
  ModelConfig model;  // classes filled in from the dataset
  TrainConfig train;
  EvalProtocol eval;
  std::vector<Architecture> compare_architectures{Architecture::fc_gru_baseline, Architecture::gru_rcn,
                                                  Architecture::bidir_gru_rcn};
  std::vector<std::uint64_t> compare_seeds;  // defaults to {seed}
  FusionConfig fusion;
  GradCheckOptions gradcheck;
  std::map<std::string, std::string> entries;  // as given, for the report

  std::uint64_t require_seed() const;  // ConfigError "seed"
};

// Reads every known key; ConfigError names a bad or unknown one.
ExperimentConfig experiment_config(const FlatConfig& flat);

// The dataset the config describes for a run seed.
Dataset load_or_generate(const ExperimentConfig& config, std::uint64_t seed);

// ModelConfig with the class count and input size of the dataset.
ModelConfig model_for(const ExperimentConfig& config, const SynthSpec& data, Architecture architecture,
                      Stream stream);

struct RunResult {
  std::string name;  // <architecture>_<stream>_s<seed>
  Model model;
  std::uint64_t seed = 0;
  TrainLog log;
  EvalResult test;
};

using Progress = std::function<void(const std::string& line)>;

// Train one model and evaluate it on the test split. Writes trainlog.jsonl
// and checkpoint/ under `dir` when it is not empty.
RunResult run_model(const ExperimentConfig& config, const Dataset& data, const ModelConfig& model,
                    std::uint64_t seed, const std::filesystem::path& dir, const Progress& progress = {});

struct FusionResult {
  std::uint64_t seed = 0;
  Architecture architecture = Architecture::gru_rcn;
  double rgb_weight = 1.0, framediff_weight = 2.0;
  EvalResult test;
};

FusionResult fuse_runs(const RunResult& rgb, const RunResult& framediff, const std::vector<std::size_t>& labels,
                       std::size_t classes, double rgb_weight, double framediff_weight);

struct Report {
  std::vector<std::string> class_names;
  std::vector<RunResult> runs;
  std::vector<FusionResult> fusions;
};

// The metrics.json document (format grcn-metrics, version 1). Paths are
// relative to the output directory; wall-clock times are left out.
nlohmann::ordered_json metrics_json(const ExperimentConfig& config, const Report& report,
                                    const std::map<std::string, std::string>& run_dirs);

// Mean test accuracy over runs matching the architecture and stream.
double mean_accuracy(const Report& report, Architecture architecture, Stream stream);
double mean_fusion_accuracy(const Report& report);

// train: one model from model.architecture at the config seed.
Report run_train(const ExperimentConfig& config, const Progress& progress = {});
// compare: every compare architecture for every compare seed, plus the
// optional two-stream fusion, one after another.
Report run_compare(const ExperimentConfig& config, const Progress& progress = {});

void write_text(const std::filesystem::path& path, const std::string& text);

// ---------------------------------------------------------------- describe

struct LevelDims {
  std::string name;
  std::size_t n1 = 1, n2 = 1;  // map height, width
  std::size_t input_channels = 1;
  std::size_t hidden_channels = 1;
};

struct LevelSummary {
  LevelDims dims;
  std::size_t kernel = 3;
  std::size_t parameters = 0;        // recurrent weights and biases
  std::size_t extra_parameters = 0;  // stacked bottom-up kernels
  double conv_multiplications = 0.0;  // estimate, one direction
  double fc_multiplications = 0.0;    // estimate, fully connected recurrence
};

// 3 T N1 N2 k1 k2 (Ox Oh + Oh Oh) and 3 T (N1 N2)^2 (Ox Oh + Oh Oh).
double conv_recurrence_estimate(const LevelDims& d, std::size_t kernel, std::size_t frames);
double fc_recurrence_estimate(const LevelDims& d, std::size_t frames);

std::vector<LevelSummary> summarize_levels(const std::vector<LevelDims>& levels, std::size_t kernel,
                                           std::size_t frames, bool biases = true);

// Percept levels of a model config, lowest level first.
std::vector<LevelDims> model_levels(const ModelConfig& config);

std::string describe_text(const Model& model, std::size_t frames);
nlohmann::ordered_json describe_json(const Model& model, std::size_t frames);

}  // namespace grcn
