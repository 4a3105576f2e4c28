#include "grcn/model.hpp"

#include <cmath>

#include "grcn/error.hpp"
#include "grcn/ops.hpp"

namespace grcn {

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::gru_rcn: return "gru_rcn";
    case Architecture::stacked_gru_rcn: return "stacked_gru_rcn";
    case Architecture::bidir_gru_rcn: return "bidir_gru_rcn";
    case Architecture::fc_gru_baseline: return "fc_gru_baseline";
  }
  return "?";
}

std::string to_string(Stream s) { return s == Stream::rgb ? "rgb" : "framediff"; }

Architecture parse_architecture(const std::string& name, const std::string& key) {
  for (auto a : {Architecture::gru_rcn, Architecture::stacked_gru_rcn, Architecture::bidir_gru_rcn,
                 Architecture::fc_gru_baseline})
    if (to_string(a) == name) return a;
  throw ConfigError(key, "unknown architecture '" + name +
                             "' (expected gru_rcn, stacked_gru_rcn, bidir_gru_rcn or fc_gru_baseline)");
}

Stream parse_stream(const std::string& name, const std::string& key) {
  if (name == "rgb") return Stream::rgb;
  if (name == "framediff") return Stream::framediff;
  throw ConfigError(key, "unknown stream '" + name + "' (expected rgb or framediff)");
}

void ModelConfig::validate() const {
  backbone.validate();
  if (hidden.size() != backbone.levels)
    throw ConfigError("model.hidden", "needs one width per percept level (" + std::to_string(backbone.levels) +
                                          "), got " + std::to_string(hidden.size()));
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("model.hidden", "widths must be >= 1");
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("model.kernel", "must be odd and >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout", "must be in [0, 1)");
  if (classes < 2) throw ConfigError("model.classes", "must be >= 2");
}

namespace {

std::size_t head_features(const ModelConfig& cfg, std::size_t level) {
  if (cfg.architecture == Architecture::fc_gru_baseline) return cfg.baseline_hidden();
  return cfg.hidden[level] * (cfg.architecture == Architecture::bidir_gru_rcn ? 2 : 1);
}

Head<Tensor> init_head(std::size_t classes, std::size_t features, Rng& rng) {
  return {glorot_uniform({classes, features}, features, classes, rng), Tensor({classes})};
}

}  // namespace

Model init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m{cfg, {}};
  ModelParams& p = m.params;
  const auto shapes = percept_shapes(cfg.backbone);
  const std::size_t levels = shapes.size();
  const std::size_t k = cfg.kernel;

  if (cfg.architecture == Architecture::fc_gru_baseline) {
    p.fc = init_fc_gru(shapes.back()[0], cfg.baseline_hidden(), rng);
  } else {
    for (std::size_t l = 0; l < levels; ++l) p.layers.push_back(init_conv_gru({k, k, shapes[l][0], cfg.hidden[l]}, rng));
    if (cfg.architecture == Architecture::bidir_gru_rcn)
      for (std::size_t l = 0; l < levels; ++l)
        p.reverse_layers.push_back(init_conv_gru({k, k, shapes[l][0], cfg.hidden[l]}, rng));
    if (cfg.architecture == Architecture::stacked_gru_rcn) {
      p.extras.emplace_back();
      for (std::size_t l = 1; l < levels; ++l)
        p.extras.push_back(init_stacked_extra(k, k, cfg.hidden[l - 1], cfg.hidden[l], cfg.stacked_candidate_input, rng));
    }
  }
  const std::size_t heads = cfg.architecture == Architecture::fc_gru_baseline ? 1 : levels;
  for (std::size_t l = 0; l < heads; ++l) p.heads.push_back(init_head(cfg.classes, head_features(cfg, l), rng));
  p.backbone = init_backbone(cfg.backbone, rng);
  return m;
}

Model zero_model(const ModelConfig& cfg) {
  Rng rng(0);
  Model m = init_model(cfg, rng);
  ModelParams::visit(m.params, [](const std::string&, Tensor& t) { t = Tensor(t.shape()); });
  return m;
}

std::vector<std::pair<std::string, std::size_t>> parameter_inventory(const ModelParams& params) {
  std::vector<std::pair<std::string, std::size_t>> out;
  ModelParams::visit(params, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t.size()); });
  return out;
}

std::size_t total_parameters(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [name, size] : parameter_inventory(params)) n += size;
  return n;
}

ModelState<Var> bind(Tape& tape, const Model& model, bool trainable) {
  const ModelParams& p = model.params;
  ModelState<Var> out;
  for (const auto& l : p.layers) out.layers.push_back(bind(tape, l, trainable));
  for (const auto& l : p.reverse_layers) out.reverse_layers.push_back(bind(tape, l, trainable));
  if (p.fc) out.fc = bind(tape, *p.fc, trainable);
  for (const auto& e : p.extras) {
    out.extras.emplace_back();
    if (e) out.extras.back() = bind(tape, *e, trainable);
  }
  for (const auto& h : p.heads) {
    auto leaf = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
    out.heads.push_back({leaf(h.weight), leaf(h.bias)});
  }
  out.backbone = bind(tape, p.backbone, trainable && !model.config.backbone.frozen);
  return out;
}

Tensor dropout_mask(std::size_t size, double p, Rng& rng) {
  Tensor mask({size});
  const double keep = 1.0 / (1.0 - p);
  for (auto& v : mask.data()) v = rng.bernoulli(p) ? 0.0 : keep;
  return mask;
}

namespace {

Var classify(const Head<Var>& head, Var feature, double dropout, bool training, Rng* rng) {
  if (training && dropout > 0.0) {
    if (!rng) throw std::invalid_argument("training-mode forward needs a dropout rng");
    feature = hadamard(feature, feature.tape().constant(dropout_mask(feature.value().size(), dropout, *rng)));
  }
  return softmax(affine(feature, head.weight, head.bias));
}

std::vector<Var> level_sequence(const PerceptStack& percepts, std::size_t level) {
  std::vector<Var> xs;
  xs.reserve(percepts.size());
  for (const auto& step : percepts) xs.push_back(step[level]);
  return xs;
}

}  // namespace

Var forward(const Model& model, const ModelState<Var>& bound, Var clip, bool training, Rng* rng) {
  const ModelConfig& cfg = model.config;
  if (cfg.architecture == Architecture::fc_gru_baseline)
    return forward_fc_baseline(model, bound, clip, training, rng);

  const PerceptStack percepts = extract_percepts(cfg.backbone, bound.backbone, clip);
  const std::size_t levels = bound.layers.size();
  std::vector<Var> finals;
  switch (cfg.architecture) {
    case Architecture::gru_rcn:
      for (std::size_t l = 0; l < levels; ++l) finals.push_back(run_layer(bound.layers[l], level_sequence(percepts, l)).final);
      break;
    case Architecture::stacked_gru_rcn: {
      std::vector<StackLayer<Var>> stack;
      for (std::size_t l = 0; l < levels; ++l) stack.push_back({bound.layers[l], bound.extras[l]});
      finals = run_stack(stack, percepts);
      break;
    }
    case Architecture::bidir_gru_rcn:
      for (std::size_t l = 0; l < levels; ++l)
        finals.push_back(bidirectional_encode(bound.layers[l], bound.reverse_layers[l], level_sequence(percepts, l)));
      break;
    case Architecture::fc_gru_baseline: break;
  }
  std::vector<Var> probs;
  for (std::size_t l = 0; l < levels; ++l)
    probs.push_back(classify(bound.heads[l], global_avg_pool(finals[l]), cfg.dropout, training, rng));
  return probs.size() == 1 ? probs.front() : mean(probs);
}

Var forward_fc_baseline(const Model& model, const ModelState<Var>& bound, Var clip, bool training, Rng* rng) {
  const ModelConfig& cfg = model.config;
  if (!bound.fc) throw DimensionError("model has no fully connected recurrence");
  const PerceptStack percepts = extract_percepts(cfg.backbone, bound.backbone, clip);
  const std::size_t top = percepts.front().size() - 1;
  Var h = clip.tape().constant(Tensor({cfg.baseline_hidden()}));
  for (const auto& step : percepts) h = gru_step(*bound.fc, global_avg_pool(step[top]), h);
  return classify(bound.heads.front(), h, cfg.dropout, training, rng);
}

Tensor predict(const Model& model, const Tensor& clip) {
  Tape tape;
  return forward(model, bind(tape, model, false), tape.constant(clip), false, nullptr).value();
}

Tensor fuse_streams(const Tensor& a, const Tensor& b, double wa, double wb) {
  if (a.shape() != b.shape())
    throw DimensionError("fuse_streams score shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  if (!(wa >= 0.0 && wb >= 0.0) || wa + wb == 0.0)
    throw std::invalid_argument("fuse_streams weights must be non-negative and not both zero");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (wa * a[i] + wb * b[i]) / (wa + wb);
  return out;
}

}  // namespace grcn
