#include "grcn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "grcn/error.hpp"
#include "grcn/json_io.hpp"
#include "grcn/serialize.hpp"

namespace grcn {

std::string to_string(Motion m) {
  switch (m) {
    case Motion::horizontal: return "horizontal";
    case Motion::vertical: return "vertical";
    case Motion::diagonal: return "diagonal";
    case Motion::circular: return "circular";
    case Motion::still: return "still";
  }
  return "?";
}

std::string to_string(SpriteShape s) {
  switch (s) {
    case SpriteShape::square: return "square";
    case SpriteShape::disk: return "disk";
    case SpriteShape::cross: return "cross";
    case SpriteShape::ring: return "ring";
  }
  return "?";
}

std::string to_string(Border b) { return b == Border::bounce ? "bounce" : "wrap"; }

double circle_radius(std::size_t speed) { return 4.0 * static_cast<double>(speed) + 1.0; }
double circle_step(std::size_t speed) {
  return 2.0 * std::asin(static_cast<double>(speed) / (2.0 * circle_radius(speed)));
}

void SynthSpec::validate() const {
  if (frames < 1) throw ConfigError("data.frames", "must be >= 1");
  if (shapes.empty()) throw ConfigError("data.shapes", "at least one sprite shape is required");
  if (sizes.empty()) throw ConfigError("data.sizes", "at least one sprite size is required");
  if (motions.empty()) throw ConfigError("data.motions", "at least one motion family is required");
  for (Motion m : motions)
    if (m == Motion::still) throw ConfigError("data.motions", "use data.include_still for the still class");
  for (std::size_t i = 0; i < motions.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (motions[i] == motions[j]) throw ConfigError("data.motions", "duplicate motion family");
  if (speeds.empty()) throw ConfigError("data.speeds", "at least one speed is required");
  for (std::size_t i = 0; i < speeds.size(); ++i)
    if (speeds[i] == 0 || (i > 0 && speeds[i] <= speeds[i - 1]))
      throw ConfigError("data.speeds", "speeds must be positive and strictly increasing");
  std::size_t largest = 0;
  for (std::size_t s : sizes) {
    if (s == 0 || s % 2 == 0) throw ConfigError("data.sizes", "sprite sides must be odd");
    if (s > canvas) throw ConfigError("data.sizes", "sprite larger than canvas");
    largest = std::max(largest, s);
  }
  if (!(min_intensity > 0.0 && min_intensity <= max_intensity && max_intensity <= 1.0))
    throw ConfigError("data.intensity", "need 0 < min <= max <= 1");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("data.noise", "must be in [0, 1]");
  const std::size_t room = canvas - largest;
  if (border == Border::bounce && room < 2 * speeds.back())
    throw ConfigError("data.canvas", "too small for the fastest sprite to bounce");
  if (std::find(motions.begin(), motions.end(), Motion::circular) != motions.end() &&
      2.0 * circle_radius(speeds.back()) > static_cast<double>(room))
    throw ConfigError("data.canvas", "too small for the fastest circular motion");
}

std::vector<std::string> SynthSpec::class_names() const {
  std::vector<std::string> out;
  for (Motion m : motions)
    for (std::size_t s : speeds) out.push_back(to_string(m) + "_" + std::to_string(s));
  if (include_still) out.push_back("still");
  return out;
}

Motion SynthSpec::motion_of(std::size_t label) const {
  if (label >= classes()) throw std::out_of_range("label " + std::to_string(label) + " out of range");
  if (label == motions.size() * speeds.size()) return Motion::still;
  return motions[label / speeds.size()];
}

std::size_t SynthSpec::speed_of(std::size_t label) const {
  if (motion_of(label) == Motion::still) return 0;
  return speeds[label % speeds.size()];
}

// ---------------------------------------------------------------- generation

ClipRecipe sample_recipe(const SynthSpec& spec, Rng& rng) {
  ClipRecipe r;
  r.label = rng.below(spec.classes());
  r.shape = spec.appearance_independent ? spec.shapes[rng.below(spec.shapes.size())]
                                        : spec.shapes[r.label % spec.shapes.size()];
  r.size = spec.sizes[rng.below(spec.sizes.size())];
  r.intensity = rng.uniform(spec.min_intensity, spec.max_intensity);
  const auto room = static_cast<std::uint64_t>(spec.canvas - r.size);
  r.x0 = static_cast<long>(rng.below(room + 1));
  r.y0 = static_cast<long>(rng.below(room + 1));
  r.sx = rng.bernoulli(0.5) ? 1 : -1;
  r.sy = rng.bernoulli(0.5) ? 1 : -1;
  const double c = static_cast<double>(r.size - 1) / 2.0;
  const double rad = spec.motion_of(r.label) == Motion::circular ? circle_radius(spec.speed_of(r.label)) : 0.0;
  const double lo = rad + c, hi = static_cast<double>(spec.canvas) - 1.0 - rad - c;
  r.cx = lo <= hi ? rng.uniform(lo, hi) : c;
  r.cy = lo <= hi ? rng.uniform(lo, hi) : c;
  r.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  r.turn = rng.bernoulli(0.5) ? 1 : -1;
  r.noise_seed = rng.next();
  return r;
}

namespace {

// One step of a bounded coordinate: a move that would leave [0, max] is
// reflected by reversing direction first, so every step has length |v|.
void advance(long& p, long& v, long max, Border border) {
  if (border == Border::bounce && (p + v < 0 || p + v > max)) v = -v;
  p += v;
}

long wrap(long v, long n) { return ((v % n) + n) % n; }

}  // namespace

std::vector<std::pair<long, long>> trajectory(const SynthSpec& spec, const ClipRecipe& r) {
  std::vector<std::pair<long, long>> out;
  out.reserve(spec.frames);
  const Motion m = spec.motion_of(r.label);
  const auto speed = static_cast<long>(spec.speed_of(r.label));
  if (m == Motion::circular) {
    const double rad = circle_radius(spec.speed_of(r.label)), step = circle_step(spec.speed_of(r.label));
    const double c = static_cast<double>(r.size - 1) / 2.0;
    for (std::size_t t = 0; t < spec.frames; ++t) {
      const double a = r.phase + r.turn * step * static_cast<double>(t);
      out.emplace_back(std::lround(r.cx + rad * std::cos(a) - c), std::lround(r.cy - rad * std::sin(a) - c));
    }
    return out;
  }
  long vx = 0, vy = 0;
  if (m == Motion::horizontal || m == Motion::diagonal) vx = r.sx * speed;
  if (m == Motion::vertical || m == Motion::diagonal) vy = r.sy * speed;
  const long max = static_cast<long>(spec.canvas - r.size);
  long x = r.x0, y = r.y0;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    out.emplace_back(x, y);
    advance(x, vx, max, spec.border);
    advance(y, vy, max, spec.border);
  }
  return out;
}

std::vector<std::vector<bool>> sprite_mask(SpriteShape shape, std::size_t size) {
  std::vector<std::vector<bool>> m(size, std::vector<bool>(size, false));
  const double c = static_cast<double>(size - 1) / 2.0;
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double dy = static_cast<double>(i) - c, dx = static_cast<double>(j) - c;
      const double d2 = dx * dx + dy * dy;
      switch (shape) {
        case SpriteShape::square: m[i][j] = true; break;
        case SpriteShape::disk: m[i][j] = d2 <= c * c + 0.5; break;
        case SpriteShape::cross: m[i][j] = dx == 0.0 || dy == 0.0; break;
        case SpriteShape::ring: m[i][j] = d2 <= c * c + 0.5 && d2 > (c - 1.0) * (c - 1.0); break;
      }
    }
  return m;
}

VideoClip render(const SynthSpec& spec, const ClipRecipe& r) {
  const std::size_t n = spec.canvas;
  Tensor frames({spec.frames, 1, n, n});
  Rng noise(r.noise_seed);
  const auto mask = sprite_mask(r.shape, r.size);
  const auto track = trajectory(spec, r);
  const auto nn = static_cast<long>(n);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    double* plane = frames.raw() + t * n * n;
    for (std::size_t i = 0; i < r.size; ++i)
      for (std::size_t j = 0; j < r.size; ++j) {
        if (!mask[i][j]) continue;
        const long y = wrap(track[t].second + static_cast<long>(i), nn);
        const long x = wrap(track[t].first + static_cast<long>(j), nn);
        plane[y * nn + x] = r.intensity;
      }
    if (spec.noise > 0.0)
      for (std::size_t k = 0; k < n * n; ++k) plane[k] = std::min(1.0, plane[k] + spec.noise * noise.uniform());
  }
  return {std::move(frames), r.label, 0};
}

std::vector<std::pair<double, double>> centroid_track(const Tensor& frames) {
  if (frames.rank() != 4) throw DimensionError("centroid_track expects T x C x H x W, got " + shape_string(frames.shape()));
  const std::size_t t_len = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  std::vector<std::pair<double, double>> out;
  for (std::size_t t = 0; t < t_len; ++t) {
    double mass = 0, sx = 0, sy = 0;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const double v = frames.at({t, ch, i, j});
          mass += v;
          sx += v * static_cast<double>(j);
          sy += v * static_cast<double>(i);
        }
    out.emplace_back(mass > 0 ? sx / mass : 0.0, mass > 0 ? sy / mass : 0.0);
  }
  return out;
}

std::size_t oracle_classify(const SynthSpec& spec, const std::vector<std::pair<double, double>>& positions) {
  if (positions.size() < 2) throw DimensionError("oracle_classify needs at least two positions");
  constexpr double eps = 1e-6;
  std::vector<double> step_len;
  bool all_dx0 = true, all_dy0 = true;
  std::size_t diagonal = 0;
  const std::size_t steps = positions.size() - 1;
  for (std::size_t t = 0; t < steps; ++t) {
    const double dx = std::abs(positions[t + 1].first - positions[t].first);
    const double dy = std::abs(positions[t + 1].second - positions[t].second);
    all_dx0 = all_dx0 && dx < eps;
    all_dy0 = all_dy0 && dy < eps;
    if (dx > eps && std::abs(dx - dy) < eps) ++diagonal;
    step_len.push_back(std::max(dx, dy));
  }
  if (all_dx0 && all_dy0) return spec.include_still ? spec.classes() - 1 : 0;

  std::nth_element(step_len.begin(), step_len.begin() + steps / 2, step_len.end());
  const double median = step_len[steps / 2];
  std::size_t speed = 0;
  double best = INFINITY;
  for (std::size_t i = 0; i < spec.speeds.size(); ++i) {
    // compare on a log scale: a median of 2 is closer to 3 than to 1
    const double d = median > 0 ? std::abs(std::log(median / static_cast<double>(spec.speeds[i]))) : INFINITY;
    if (d < best) best = d, speed = i;
  }

  Motion family = Motion::circular;
  if (all_dy0) family = Motion::horizontal;
  else if (all_dx0) family = Motion::vertical;
  else if (static_cast<double>(diagonal) >= 0.7 * static_cast<double>(steps)) family = Motion::diagonal;
  const auto it = std::find(spec.motions.begin(), spec.motions.end(), family);
  const std::size_t f = it == spec.motions.end() ? 0 : static_cast<std::size_t>(it - spec.motions.begin());
  return f * spec.speeds.size() + speed;
}

Dataset generate_dataset(const SynthSpec& spec, const SplitCounts& counts, std::uint64_t seed) {
  spec.validate();
  if (counts.train == 0 || counts.val == 0 || counts.test == 0) throw ConfigError("data.counts", "every split needs >= 1 clip");
  Dataset d{spec, seed, {}, {}, {}};
  const std::uint64_t base = mix_seed(seed);
  std::uint64_t index = 0;
  for (auto [split, n] : {std::pair{&d.train, counts.train}, {&d.val, counts.val}, {&d.test, counts.test}}) {
    split->reserve(n);
    for (std::size_t i = 0; i < n; ++i, ++index) {
      const std::uint64_t clip_seed = mix_seed(base + index);
      Rng rng(clip_seed);
      VideoClip c = render(spec, sample_recipe(spec, rng));
      c.seed = clip_seed;
      split->push_back(std::move(c));
    }
  }
  return d;
}

namespace {

const char* const kSplits[] = {"train", "val", "test"};

template <class D>
auto& split_of(D& d, std::size_t i) {
  return i == 0 ? d.train : i == 1 ? d.val : d.test;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "grcn-dataset";
  manifest["version"] = 1;
  manifest["spec"] = to_json(data.spec);
  manifest["seed"] = data.seed;
  manifest["class_names"] = data.spec.class_names();
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& clips = split_of(data, s);
    manifest["splits"][kSplits[s]] = clips.size();
    std::vector<std::size_t> labels;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      labels.push_back(clips[i].label);
      seeds.push_back(clips[i].seed);
      save_tensor(dir / ("clip_" + std::string(kSplits[s]) + "_" + std::to_string(i) + ".grcn"), clips[i].frames);
    }
    manifest["labels"][kSplits[s]] = labels;
    manifest["clip_seeds"][kSplits[s]] = seeds;
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
  if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw FormatError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad dataset manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "grcn-dataset") throw FormatError("not a dataset manifest");
  Dataset d;
  try {
    d.spec = synth_spec_from_json(manifest.at("spec"));
    d.seed = manifest.at("seed").get<std::uint64_t>();
    for (std::size_t s = 0; s < 3; ++s) {
      const auto n = manifest.at("splits").at(kSplits[s]).get<std::size_t>();
      const auto& labels = manifest.at("labels").at(kSplits[s]);
      const auto& seeds = manifest.at("clip_seeds").at(kSplits[s]);
      if (labels.size() != n || seeds.size() != n) throw FormatError("manifest split sizes disagree");
      auto& clips = split_of(d, s);
      for (std::size_t i = 0; i < n; ++i) {
        VideoClip c;
        c.frames = load_tensor(dir / ("clip_" + std::string(kSplits[s]) + "_" + std::to_string(i) + ".grcn"));
        c.label = labels[i].get<std::size_t>();
        c.seed = seeds[i].get<std::uint64_t>();
        if (c.label >= d.spec.classes()) throw FormatError("label out of range in manifest");
        clips.push_back(std::move(c));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad dataset manifest: " + std::string(e.what()));
  }
  return d;
}

// ---------------------------------------------------------------- crops

std::vector<double> resize_bilinear(std::span<const double> plane, std::size_t h, std::size_t w, std::size_t oh,
                                    std::size_t ow) {
  std::vector<double> out(oh * ow);
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn, std::size_t& i0, std::size_t& i1, double& f) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(s);
    i1 = std::min(i0 + 1, in - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < oh; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, h, oh, y0, y1, fy);
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, w, ow, x0, x1, fx);
      const double top = (1 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1];
      const double bottom = (1 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1];
      out[y * ow + x] = (1 - fy) * top + fy * bottom;
    }
  }
  return out;
}

Tensor crop_volume(const Tensor& frames, std::size_t t0, std::size_t t_len, std::size_t y0, std::size_t x0,
                   std::size_t ch, std::size_t cw, std::size_t oh, std::size_t ow, bool flip) {
  if (frames.rank() != 4) throw DimensionError("crop expects T x C x H x W, got " + shape_string(frames.shape()));
  const std::size_t t_all = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  if (t0 + t_len > t_all || t_len == 0)
    throw DimensionError("temporal crop [" + std::to_string(t0) + ", " + std::to_string(t0 + t_len) +
                         ") outside a clip of " + std::to_string(t_all) + " frames");
  if (y0 + ch > h || x0 + cw > w || ch == 0 || cw == 0)
    throw DimensionError("spatial crop outside a " + std::to_string(h) + "x" + std::to_string(w) + " frame");
  Tensor out({t_len, c, oh, ow});
  std::vector<double> window(ch * cw);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t k = 0; k < c; ++k) {
      const double* plane = frames.raw() + ((t0 + t) * c + k) * h * w;
      for (std::size_t i = 0; i < ch; ++i)
        for (std::size_t j = 0; j < cw; ++j) window[i * cw + j] = plane[(y0 + i) * w + x0 + (flip ? cw - 1 - j : j)];
      const auto resized = (ch == oh && cw == ow) ? window : resize_bilinear(window, ch, cw, oh, ow);
      std::copy(resized.begin(), resized.end(), out.raw() + (t * c + k) * oh * ow);
    }
  return out;
}

Tensor sample_crop(const Tensor& frames, const CropSpec& spec, Rng& rng) {
  if (frames.rank() != 4) throw DimensionError("crop expects T x C x H x W, got " + shape_string(frames.shape()));
  if (spec.ladder.empty()) throw ConfigError("train.crop_ladder", "empty crop ladder");
  const std::size_t t_all = frames.dim(0), h = frames.dim(2), w = frames.dim(3);
  if (t_all < spec.t_crop)
    throw DimensionError("clip of " + std::to_string(t_all) + " frames is shorter than the temporal crop " +
                         std::to_string(spec.t_crop));
  const std::size_t largest = *std::max_element(spec.ladder.begin(), spec.ladder.end());
  if (largest > h || largest > w)
    throw DimensionError("crop side " + std::to_string(largest) + " larger than the frame");
  const std::size_t side = spec.ladder[rng.below(spec.ladder.size())];
  const std::size_t y0 = rng.below(h - side + 1);
  const std::size_t x0 = rng.below(w - side + 1);
  const std::size_t t0 = rng.below(t_all - spec.t_crop + 1);
  return crop_volume(frames, t0, spec.t_crop, y0, x0, side, side, spec.out_h, spec.out_w, false);
}

// ---------------------------------------------------------------- evaluation

std::vector<Tensor> evaluation_views(const Tensor& frames, const EvalProtocol& p) {
  if (frames.rank() != 4) throw DimensionError("evaluation expects T x C x H x W, got " + shape_string(frames.shape()));
  const std::size_t t_all = frames.dim(0), h = frames.dim(2), w = frames.dim(3);
  if (t_all < p.t_crop || p.t_crop == 0) throw DimensionError("clip shorter than one evaluation sub-volume");
  if (p.crop > h || p.crop > w) throw DimensionError("evaluation crop larger than the frame");
  if (p.subvolumes == 0) throw ConfigError("eval.subvolumes", "must be >= 1");
  const std::size_t span = t_all - p.t_crop;
  std::vector<std::pair<std::size_t, std::size_t>> corners;
  if (p.corners) corners = {{0, 0}, {0, w - p.crop}, {h - p.crop, 0}, {h - p.crop, w - p.crop}};
  corners.emplace_back((h - p.crop) / 2, (w - p.crop) / 2);
  std::vector<Tensor> views;
  for (std::size_t v = 0; v < p.subvolumes; ++v) {
    const std::size_t t0 = p.subvolumes == 1
                               ? span / 2
                               : static_cast<std::size_t>(std::llround(static_cast<double>(v * span) /
                                                                       static_cast<double>(p.subvolumes - 1)));
    for (bool flip : {false, true}) {
      if (flip && !p.flips) continue;
      for (auto [y, x] : corners) views.push_back(crop_volume(frames, t0, p.t_crop, y, x, p.crop, p.crop, p.out, p.out, flip));
    }
  }
  return views;
}

Tensor clip_scores(const Predictor& predict, const Tensor& frames, const EvalProtocol& protocol) {
  const auto views = evaluation_views(frames, protocol);
  Tensor total;
  for (std::size_t i = 0; i < views.size(); ++i) {
    Tensor p = predict(views[i]);
    if (i == 0) total = Tensor(p.shape());
    for (std::size_t k = 0; k < p.size(); ++k) total[k] += p[k];
  }
  for (auto& v : total.data()) v /= static_cast<double>(views.size());
  return total;
}

std::size_t argmax(const Tensor& scores) {
  return static_cast<std::size_t>(std::max_element(scores.data().begin(), scores.data().end()) - scores.data().begin());
}

EvalResult score_predictions(std::vector<Tensor> scores, std::span<const std::size_t> labels, std::size_t classes) {
  if (scores.size() != labels.size()) throw DimensionError("score and label counts differ");
  EvalResult r;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != classes || labels[i] >= classes) throw DimensionError("scores do not match class count");
    const std::size_t pred = argmax(scores[i]);
    ++r.confusion[labels[i]][pred];
    correct += pred == labels[i];
  }
  r.accuracy = scores.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(scores.size());
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t n = 0;
    for (std::size_t v : r.confusion[c]) n += v;
    r.per_class_accuracy.push_back(n ? static_cast<double>(r.confusion[c][c]) / static_cast<double>(n) : 0.0);
  }
  r.scores = std::move(scores);
  return r;
}

EvalResult evaluate(const Predictor& predict, std::span<const VideoClip> clips, const EvalProtocol& protocol,
                    std::size_t classes) {
  std::vector<Tensor> scores;
  std::vector<std::size_t> labels;
  for (const auto& c : clips) {
    scores.push_back(clip_scores(predict, c.frames, protocol));
    labels.push_back(c.label);
  }
  return score_predictions(std::move(scores), labels, classes);
}

// ---------------------------------------------------------------- streams

VideoClip framediff_stream(const VideoClip& clip) {
  const Tensor& f = clip.frames;
  if (f.rank() != 4) throw DimensionError("framediff expects T x C x H x W, got " + shape_string(f.shape()));
  if (f.dim(0) < 2) throw DimensionError("framediff needs at least two frames");
  Shape s = f.shape();
  s[0] -= 1;
  Tensor out(s);
  const std::size_t n = f.size() / f.dim(0);
  for (std::size_t t = 0; t + 1 < f.dim(0); ++t)
    for (std::size_t k = 0; k < n; ++k) out[t * n + k] = (f[(t + 1) * n + k] - f[t * n + k] + 1.0) / 2.0;
  return {std::move(out), clip.label, clip.seed};
}

}  // namespace grcn
