#include "grcn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "grcn/error.hpp"
#include "grcn/json_io.hpp"
#include "grcn/ops.hpp"
#include "grcn/serialize.hpp"

namespace grcn {

// ---------------------------------------------------------------- loss

double nll_loss(const Tensor& p, std::span<const std::size_t> labels, double floor) {
  if (p.rank() != 1 && p.rank() != 2) throw DimensionError("nll_loss expects batch x classes, got " + shape_string(p.shape()));
  const std::size_t batch = p.rank() == 1 ? 1 : p.dim(0), classes = p.shape().back();
  if (labels.size() != batch)
    throw DimensionError(std::to_string(labels.size()) + " labels for a batch of " + std::to_string(batch));
  if (batch == 0) throw DimensionError("nll_loss of an empty batch");
  double total = 0.0;
  for (std::size_t n = 0; n < batch; ++n) {
    if (labels[n] >= classes)
      throw DimensionError("label " + std::to_string(labels[n]) + " out of range for " + std::to_string(classes) +
                           " classes");
    total -= std::log(std::max(p[n * classes + labels[n]], floor));
  }
  return total / static_cast<double>(batch);
}

Var nll_loss(std::span<const Var> probabilities, std::span<const std::size_t> labels, double floor) {
  if (probabilities.size() != labels.size())
    throw DimensionError(std::to_string(labels.size()) + " labels for a batch of " +
                         std::to_string(probabilities.size()));
  if (probabilities.empty()) throw DimensionError("nll_loss of an empty batch");
  std::vector<Var> terms;
  for (std::size_t n = 0; n < labels.size(); ++n) terms.push_back(neg_log_prob(probabilities[n], labels[n], floor));
  return terms.size() == 1 ? terms[0] : mean(terms);
}

// ---------------------------------------------------------------- Adam

void AdamConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("train.adam.alpha", "must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.adam.beta1", "must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.adam.beta2", "must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train.adam.epsilon", "must be > 0");
}

AdamState adam_init(std::span<const Shape> shapes, const AdamConfig& config) {
  config.validate();
  AdamState s;
  s.config = config;
  for (const auto& shape : shapes) {
    s.m.emplace_back(shape);
    s.v.emplace_back(shape);
  }
  return s;
}

void adam_step(AdamState& s, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != s.m.size() || grads.size() != s.m.size())
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters and " +
                         std::to_string(grads.size()) + " gradients for a state of " + std::to_string(s.m.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != s.m[i].shape() || grads[i].shape() != s.m[i].shape())
      throw DimensionError("adam_step: shape mismatch at parameter " + std::to_string(i));
    if (!grads[i].all_finite()) throw NumericalError("adam_step: non-finite gradient at parameter " + std::to_string(i));
  }
  const AdamConfig& c = s.config;
  ++s.t;
  const double t = static_cast<double>(s.t);
  const double correct1 = 1.0 - std::pow(c.beta1, t), correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = s.m[i].data(), v = s.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correct1, v_hat = v[k] / correct2;
      p[k] -= c.alpha * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

// ---------------------------------------------------------------- gradient check

double relative_error(double a, double n) { return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n)); }

namespace {

std::vector<std::size_t> pick_entries(std::size_t size, const GradCheckOptions& o, std::size_t block) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (o.max_entries == 0 || o.max_entries >= size) return idx;
  Rng rng(mix_seed(o.seed + block));
  for (std::size_t i = 0; i < o.max_entries; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
  idx.resize(o.max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

BlockError check_block(const std::string& name, const Tensor& analytic, Tensor& x, const std::function<double()>& f,
                       const GradCheckOptions& o, std::size_t block) {
  BlockError b{name, 0, 0.0};
  for (std::size_t k : pick_entries(x.size(), o, block)) {
    const double orig = x[k];
    x[k] = orig + o.h;
    const double up = f();
    x[k] = orig - o.h;
    const double down = f();
    x[k] = orig;
    const double numeric = (up - down) / (2.0 * o.h);
    b.max_rel_error = std::max(b.max_rel_error, relative_error(analytic[k], numeric));
    b.max_abs_error = std::max(b.max_abs_error, std::abs(analytic[k] - numeric));
    ++b.checked;
  }
  return b;
}

void finish(GradCheckReport& r, const GradCheckOptions& o) {
  r.tolerance = o.tolerance;
  for (const auto& b : r.blocks) {
    r.max_rel_error = std::max(r.max_rel_error, b.max_rel_error);
    r.max_abs_error = std::max(r.max_abs_error, b.max_abs_error);
  }
}

double scalar_of(Var v) {
  if (v.value().size() != 1) throw DimensionError("gradient check needs a scalar loss, got " + shape_string(v.shape()));
  return v.value()[0];
}

}  // namespace

GradCheckReport grad_check(const LossFn& loss, std::vector<std::pair<std::string, Tensor>> inputs,
                           const GradCheckOptions& o) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    if (!o.fault_op.empty()) tape.inject_gradient_fault(o.fault_op, o.fault_factor);
    std::vector<Var> vars;
    for (const auto& [name, t] : inputs) vars.push_back(tape.variable(t, name));
    const Var l = loss(tape, vars);
    scalar_of(l);
    const Gradients g = tape.backward(l);
    for (Var v : vars) analytic.push_back(g[v]);
  }
  auto f = [&] {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& in : inputs) vars.push_back(tape.constant(in.second));
    return scalar_of(loss(tape, vars));
  };
  GradCheckReport r;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    r.blocks.push_back(check_block(inputs[i].first, analytic[i], inputs[i].second, f, o, i));
  finish(r, o);
  return r;
}

namespace {

bool is_trainable(const ModelConfig& cfg, const std::string& name) {
  return !(cfg.backbone.frozen && name.rfind("backbone.", 0) == 0);
}

// Trainable parameter tensors in checkpoint order.
std::vector<std::pair<std::string, Tensor*>> trainable(Model& model) {
  std::vector<std::pair<std::string, Tensor*>> out;
  ModelParams::visit(model.params, [&](const std::string& name, Tensor& t) {
    if (is_trainable(model.config, name)) out.emplace_back(name, &t);
  });
  return out;
}

std::vector<Var> trainable_vars(const ModelConfig& cfg, ModelState<Var>& bound) {
  std::vector<Var> out;
  ModelState<Var>::visit(bound, [&](const std::string& name, Var& v) {
    if (is_trainable(cfg, name)) out.push_back(v);
  });
  return out;
}

}  // namespace

GradCheckReport grad_check_model(const Model& model, const Tensor& clip, std::size_t label, const GradCheckOptions& o) {
  Model m = model;
  auto params = trainable(m);
  std::vector<Tensor> analytic;
  {
    Tape tape;
    if (!o.fault_op.empty()) tape.inject_gradient_fault(o.fault_op, o.fault_factor);
    auto bound = bind(tape, m, true);
    const Var l = neg_log_prob(forward(m, bound, tape.constant(clip), false, nullptr), label);
    const Gradients g = tape.backward(l);
    for (Var v : trainable_vars(m.config, bound)) analytic.push_back(g[v]);
  }
  auto f = [&] {
    Tape tape;
    return neg_log_prob(forward(m, bind(tape, m, false), tape.constant(clip), false, nullptr), label).value()[0];
  };
  GradCheckReport r;
  for (std::size_t i = 0; i < params.size(); ++i)
    r.blocks.push_back(check_block(params[i].first, analytic[i], *params[i].second, f, o, i));
  finish(r, o);
  return r;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (batch == 0) throw ConfigError("train.batch", "must be >= 1");
  adam.validate();
  if (crop.ladder.empty()) throw ConfigError("train.crop_ladder", "empty crop ladder");
  for (std::size_t s : crop.ladder)
    if (s == 0) throw ConfigError("train.crop_ladder", "crop sides must be positive");
  if (crop.t_crop == 0) throw ConfigError("train.t_crop", "must be >= 1");
  if (validation.subvolumes == 0) throw ConfigError("train.val_subvolumes", "must be >= 1");
}

std::string TrainLog::to_jsonl(bool with_seconds) const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss;
    j["val_acc"] = e.val_acc;
    if (with_seconds) j["seconds"] = e.seconds;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<VideoClip> prepare_stream(std::span<const VideoClip> clips, Stream stream) {
  std::vector<VideoClip> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(stream == Stream::framediff ? framediff_stream(c) : c);
  return out;
}

EvalResult evaluate_model(const Model& model, std::span<const VideoClip> clips, const EvalProtocol& protocol) {
  const auto prepared = prepare_stream(clips, model.config.stream);
  return evaluate([&](const Tensor& view) { return predict(model, view); }, prepared, protocol, model.config.classes);
}

double mean_nll(const EvalResult& r, std::span<const VideoClip> clips) {
  if (r.scores.size() != clips.size() || clips.empty()) throw DimensionError("mean_nll: score and clip counts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const std::size_t label = clips[i].label;
    total += nll_loss(r.scores[i], std::span<const std::size_t>(&label, 1));
  }
  return total / static_cast<double>(clips.size());
}

TrainResult train(const Model& initial, const TrainConfig& cfg, std::span<const VideoClip> train_clips,
                  std::span<const VideoClip> val_clips, std::uint64_t seed, const EpochCallback& on_epoch) {
  cfg.validate();
  initial.config.validate();
  if (train_clips.empty()) throw ConfigError("data.counts", "training split is empty");
  if (val_clips.empty()) throw ConfigError("data.counts", "validation split is empty");
  const auto train_set = prepare_stream(train_clips, initial.config.stream);

  TrainResult result{initial, {}};
  Model model = initial;
  auto params = trainable(model);
  std::vector<Shape> shapes;
  std::vector<Tensor*> slots;
  for (auto& [name, t] : params) shapes.push_back(t->shape()), slots.push_back(t);
  AdamState adam = adam_init(shapes, cfg.adam);
  std::vector<Tensor> grads;
  for (const auto& s : shapes) grads.emplace_back(s);

  double best_val = std::numeric_limits<double>::infinity();
  const std::size_t n = train_set.size();
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    Rng epoch_rng(mix_seed(mix_seed(seed) + epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[epoch_rng.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.batch) {
      const std::size_t end = std::min(n, b + cfg.batch);
      for (auto& g : grads) std::fill(g.data().begin(), g.data().end(), 0.0);
      for (std::size_t i = b; i < end; ++i) {
        const VideoClip& clip = train_set[order[i]];
        Rng clip_rng = epoch_rng.fork();
        try {
          const Tensor crop = sample_crop(clip.frames, cfg.crop, clip_rng);
          Tape tape;
          auto bound = bind(tape, model, true);
          const Var loss = neg_log_prob(forward(model, bound, tape.constant(crop), true, &clip_rng), clip.label);
          loss_sum += loss.value()[0];
          const Gradients g = tape.backward(loss);
          const auto vars = trainable_vars(model.config, bound);
          for (std::size_t k = 0; k < vars.size(); ++k) {
            auto dst = grads[k].data();
            auto src = g[vars[k]].data();
            for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
          }
        } catch (const NumericalError& e) {
          throw NumericalError("training diverged in epoch " + std::to_string(epoch) + " at clip " +
                               std::to_string(i) + ": " + e.what());
        }
      }
      const double inv = 1.0 / static_cast<double>(end - b);
      for (auto& g : grads)
        for (auto& v : g.data()) v *= inv;
      try {
        adam_step(adam, slots, grads);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    if (!std::isfinite(loss_sum))
      throw NumericalError("training diverged in epoch " + std::to_string(epoch) + ": loss is not finite");

    const EvalResult val = evaluate_model(model, val_clips, cfg.validation);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val_loss = mean_nll(val, val_clips);
    rec.val_acc = val.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < best_val) {
      best_val = rec.val_loss;
      result.model = model;
      result.log.best_epoch = epoch;
    }
    if (epoch - result.log.best_epoch >= cfg.patience) break;
  }
  return result;
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const std::filesystem::path& dir, const Model& model) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["format"] = "grcn-checkpoint";
  j["version"] = 1;
  j["model"] = to_json(model.config);
  j["total_parameters"] = total_parameters(model.params);
  nlohmann::ordered_json inventory = nlohmann::ordered_json::array();
  std::ofstream params(dir / "params.grcn", std::ios::binary);
  ModelParams::visit(model.params, [&](const std::string& name, const Tensor& t) {
    inventory.push_back({{"name", name}, {"shape", t.shape()}});
    write_tensor(params, t);
  });
  j["parameters"] = inventory;
  if (!params) throw FormatError("cannot write " + (dir / "params.grcn").string());
  std::ofstream meta(dir / "checkpoint.json", std::ios::binary);
  meta << j.dump(2) << "\n";
  if (!meta) throw FormatError("cannot write " + (dir / "checkpoint.json").string());
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "checkpoint.json", std::ios::binary);
  if (!meta) throw FormatError("cannot open " + (dir / "checkpoint.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "grcn-checkpoint") throw FormatError("not a checkpoint manifest");
  Model model;
  try {
    model = zero_model(model_config_from_json(j.at("model")));
    const auto& inventory = j.at("parameters");
    std::ifstream params(dir / "params.grcn", std::ios::binary);
    if (!params) throw FormatError("cannot open " + (dir / "params.grcn").string());
    std::size_t i = 0;
    ModelParams::visit(model.params, [&](const std::string& name, Tensor& t) {
      if (i >= inventory.size() || inventory[i].at("name").get<std::string>() != name)
        throw FormatError("checkpoint parameter " + std::to_string(i) + " is not " + name);
      Tensor loaded = read_tensor(params);
      if (loaded.shape() != t.shape())
        throw FormatError("checkpoint parameter " + name + " has shape " + shape_string(loaded.shape()) +
                          ", expected " + shape_string(t.shape()));
      t = std::move(loaded);
      ++i;
    });
    if (i != inventory.size()) throw FormatError("checkpoint lists more parameters than the model has");
    if (params.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in params.grcn");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
  }
  return model;
}

}  // namespace grcn
