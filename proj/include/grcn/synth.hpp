#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "grcn/rng.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

// Synthetic moving-sprite videos labelled by how the sprite moves.
//
// Classes are motion family x speed, by default {horizontal, vertical,
// diagonal, circular} x {1, 3} px/frame, label = family * speeds + speed.
// Every family maps to itself under a horizontal flip, so flipped evaluation
// views keep their label. An optional last "still" class holds the sprite in
// place.

enum class Motion { horizontal, vertical, diagonal, circular, still };
enum class SpriteShape { square, disk, cross, ring };
enum class Border { bounce, wrap };

struct SynthSpec {
  std::size_t canvas = 40;
  std::size_t frames = 16;
  std::vector<SpriteShape> shapes{SpriteShape::square, SpriteShape::disk, SpriteShape::cross, SpriteShape::ring};
  std::vector<std::size_t> sizes{5, 7};  // odd sprite sides
  double min_intensity = 0.5;
  double max_intensity = 1.0;
  double noise = 0.0;                  // background noise amplitude
  bool appearance_independent = true;  // sprite never depends on the label
  Border border = Border::bounce;
  bool include_still = false;
  std::vector<Motion> motions{Motion::horizontal, Motion::vertical, Motion::diagonal, Motion::circular};
  std::vector<std::size_t> speeds{1, 3};  // px per frame, increasing

  // Throws ConfigError naming the offending data.* key.
  void validate() const;
  std::size_t classes() const { return motions.size() * speeds.size() + (include_still ? 1 : 0); }
  std::vector<std::string> class_names() const;
  Motion motion_of(std::size_t label) const;
  std::size_t speed_of(std::size_t label) const;  // 0 for still
};

// Circle radius for a circular motion of the given speed, and the angular
// step whose chord equals the speed.
double circle_radius(std::size_t speed);
double circle_step(std::size_t speed);

std::string to_string(Motion m);
std::string to_string(SpriteShape s);
std::string to_string(Border b);

// Everything needed to render one clip.
struct ClipRecipe {
  std::size_t label = 0;
  SpriteShape shape = SpriteShape::square;
  std::size_t size = 5;
  double intensity = 1.0;
  long x0 = 0, y0 = 0;  // top-left at t = 0 (straight and still)
  int sx = 1, sy = 1;   // direction signs (straight)
  double cx = 0, cy = 0, phase = 0;  // circle centre and start angle
  int turn = 1;                      // +1 counter-clockwise in image coordinates, -1 clockwise
  std::uint64_t noise_seed = 0;
};

struct VideoClip {
  Tensor frames;  // T x 1 x H x W, values in [0, 1]
  std::size_t label = 0;
  std::uint64_t seed = 0;  // generation seed, unique per dataset
};

ClipRecipe sample_recipe(const SynthSpec& spec, Rng& rng);

// Sprite top-left positions (x, y) per frame, before any wrap-around.
std::vector<std::pair<long, long>> trajectory(const SynthSpec& spec, const ClipRecipe& recipe);

VideoClip render(const SynthSpec& spec, const ClipRecipe& recipe);

// Sprite mask of side `size`.
std::vector<std::vector<bool>> sprite_mask(SpriteShape shape, std::size_t size);

// Recovers the label from a position track using displacement sign and
// magnitude only (no knowledge of the recipe).
std::size_t oracle_classify(const SynthSpec& spec, const std::vector<std::pair<double, double>>& positions);

// Intensity-weighted centroid of every frame (noise-free clips).
std::vector<std::pair<double, double>> centroid_track(const Tensor& frames);

struct SplitCounts {
  std::size_t train = 800, val = 100, test = 200;
};

struct Dataset {
  SynthSpec spec;
  std::uint64_t seed = 0;
  std::vector<VideoClip> train, val, test;
};

// Clip i (counting across train, val, test) is rendered from
// mix_seed(mix_seed(seed) + i), so no generation seed repeats.
Dataset generate_dataset(const SynthSpec& spec, const SplitCounts& counts, std::uint64_t seed);

// manifest.json plus clip_<split>_<index>.grcn per clip.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------- crops

struct CropSpec {
  std::vector<std::size_t> ladder{32, 28, 24, 21};  // square crop sides
  std::size_t t_crop = 10;
  std::size_t out_h = 32, out_w = 32;
};

// Bilinear resize of an H x W plane (half-pixel centres, edge clamped).
std::vector<double> resize_bilinear(std::span<const double> plane, std::size_t h, std::size_t w, std::size_t out_h,
                                    std::size_t out_w);

// Frames [t0, t0 + t_len) of a T x C x H x W clip, spatial window at
// (y0, x0) of size crop_h x crop_w, optionally mirrored, resized to out.
Tensor crop_volume(const Tensor& frames, std::size_t t0, std::size_t t_len, std::size_t y0, std::size_t x0,
                   std::size_t crop_h, std::size_t crop_w, std::size_t out_h, std::size_t out_w, bool flip);

// Random crop: side from the ladder, position uniform, t_crop consecutive
// frames, bilinearly resized to the model input.
Tensor sample_crop(const Tensor& frames, const CropSpec& spec, Rng& rng);

// ---------------------------------------------------------------- evaluation

struct EvalProtocol {
  std::size_t subvolumes = 5;  // equally spaced temporal windows
  std::size_t t_crop = 10;
  std::size_t crop = 32;  // spatial crop side
  std::size_t out = 32;   // model input side
  bool corners = true;    // 4 corners + centre; otherwise centre only
  bool flips = true;      // add horizontal mirrors
};

// All views of one clip in evaluation order (sub-volume major).
std::vector<Tensor> evaluation_views(const Tensor& frames, const EvalProtocol& protocol);

using Predictor = std::function<Tensor(const Tensor& clip)>;

// Model probabilities averaged over every view of a clip.
Tensor clip_scores(const Predictor& predict, const Tensor& frames, const EvalProtocol& protocol);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<double> per_class_accuracy;           // NaN-free: 0 for absent classes
  std::vector<Tensor> scores;                       // per clip
};

// Argmax (lowest index on ties) of per-clip scores against labels.
EvalResult score_predictions(std::vector<Tensor> scores, std::span<const std::size_t> labels, std::size_t classes);

EvalResult evaluate(const Predictor& predict, std::span<const VideoClip> clips, const EvalProtocol& protocol,
                    std::size_t classes);

std::size_t argmax(const Tensor& scores);

// ---------------------------------------------------------------- streams

// Frame t = (clip[t + 1] - clip[t] + 1) / 2; T - 1 frames, label kept.
VideoClip framediff_stream(const VideoClip& clip);

}  // namespace grcn
