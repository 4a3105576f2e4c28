#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grcn/model.hpp"
#include "grcn/synth.hpp"
#include "grcn/tape.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

// ---------------------------------------------------------------- loss

// Mean negative log-likelihood of `labels` under a batch x classes
// probability tensor (a classes vector is a batch of one). Probabilities are
// clamped below at `floor` before the log.
double nll_loss(const Tensor& probabilities, std::span<const std::size_t> labels, double floor = 1e-12);
Var nll_loss(std::span<const Var> probabilities, std::span<const std::size_t> labels, double floor = 1e-12);

// ---------------------------------------------------------------- Adam

struct AdamConfig {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;  // ConfigError keys train.adam.*
};

struct AdamState {
  AdamConfig config;
  std::size_t t = 0;
  std::vector<Tensor> m, v;  // one per parameter
};

AdamState adam_init(std::span<const Shape> shapes, const AdamConfig& config = {});

// One bias-corrected Adam update in place. Throws NumericalError on a
// non-finite gradient, DimensionError on shape mismatch.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);

// ---------------------------------------------------------------- gradient check

struct GradCheckOptions {
  double h = 1e-5;
  double tolerance = 1e-5;
  std::size_t max_entries = 0;  // per block; 0 checks every entry
  std::uint64_t seed = 0;       // picks the entries when sampling
  std::string fault_op;         // corrupt this op's backward rule
  double fault_factor = 1.0;
};

struct BlockError {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;  // |analytic - numeric|
};

struct GradCheckReport {
  std::vector<BlockError> blocks;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

using LossFn = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;

// Central differences against reverse-mode gradients for every named input.
GradCheckReport grad_check(const LossFn& loss, std::vector<std::pair<std::string, Tensor>> inputs,
                           const GradCheckOptions& options = {});

// The same for every trainable parameter of a model under the inference-mode
// negative log-likelihood of `label`.
GradCheckReport grad_check_model(const Model& model, const Tensor& clip, std::size_t label,
                                 const GradCheckOptions& options = {});

// ---------------------------------------------------------------- training

struct TrainConfig {
  std::size_t batch = 16;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;  // epochs without a better validation loss
  AdamConfig adam;
  CropSpec crop;
  EvalProtocol validation{1, 10, 32, 32, false, false};  // one centre view

  void validate() const;  // ConfigError keys train.*
};

struct EpochRecord {
  std::size_t epoch = 0;  // from 1
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;  // wall time, the only non-deterministic field
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0: nothing trained

  // One JSON object per line.
  std::string to_jsonl(bool with_seconds = true) const;
};

struct TrainResult {
  Model model;  // parameters from the best validation epoch
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam on random crops. Each clip gets its own tape; gradients
// are summed in batch order, averaged and applied once per batch. Stops
// after `max_epochs` or once `patience` epochs pass without a lower
// validation loss. Clips are raw frames; the framediff stream is derived
// here when the model asks for it.
TrainResult train(const Model& initial, const TrainConfig& config, std::span<const VideoClip> train_clips,
                  std::span<const VideoClip> val_clips, std::uint64_t seed, const EpochCallback& on_epoch = {});

// Clips as the model's input stream sees them.
std::vector<VideoClip> prepare_stream(std::span<const VideoClip> clips, Stream stream);

// Multi-view evaluation of raw clips.
EvalResult evaluate_model(const Model& model, std::span<const VideoClip> clips, const EvalProtocol& protocol);

// Mean negative log-likelihood of the labels under per-clip scores.
double mean_nll(const EvalResult& result, std::span<const VideoClip> clips);

// ---------------------------------------------------------------- checkpoints

// checkpoint.json (config and parameter inventory) plus params.grcn (every
// tensor in inventory order).
void save_checkpoint(const std::filesystem::path& dir, const Model& model);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace grcn
