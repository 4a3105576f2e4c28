#include "grcn/json_io.hpp"

#include "grcn/error.hpp"

namespace grcn {

namespace {

template <class E>
E parse_enum(const std::string& name, std::initializer_list<E> options, const char* key) {
  for (E e : options)
    if (to_string(e) == name) return e;
  throw ConfigError(key, "unknown value '" + name + "'");
}

}  // namespace

nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["canvas"] = s.canvas;
  j["frames"] = s.frames;
  std::vector<std::string> shapes, motions;
  for (auto v : s.shapes) shapes.push_back(to_string(v));
  for (auto v : s.motions) motions.push_back(to_string(v));
  j["shapes"] = shapes;
  j["sizes"] = s.sizes;
  j["min_intensity"] = s.min_intensity;
  j["max_intensity"] = s.max_intensity;
  j["noise"] = s.noise;
  j["appearance_independent"] = s.appearance_independent;
  j["border"] = to_string(s.border);
  j["include_still"] = s.include_still;
  j["motions"] = motions;
  j["speeds"] = s.speeds;
  return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  SynthSpec s;
  s.canvas = j.value("canvas", s.canvas);
  s.frames = j.value("frames", s.frames);
  if (j.contains("shapes")) {
    s.shapes.clear();
    for (const auto& v : j["shapes"])
      s.shapes.push_back(parse_enum(v.get<std::string>(),
                                    {SpriteShape::square, SpriteShape::disk, SpriteShape::cross, SpriteShape::ring},
                                    "data.shapes"));
  }
  s.sizes = j.value("sizes", s.sizes);
  s.min_intensity = j.value("min_intensity", s.min_intensity);
  s.max_intensity = j.value("max_intensity", s.max_intensity);
  s.noise = j.value("noise", s.noise);
  s.appearance_independent = j.value("appearance_independent", s.appearance_independent);
  s.border = parse_enum(j.value("border", to_string(s.border)), {Border::bounce, Border::wrap}, "data.border");
  s.include_still = j.value("include_still", s.include_still);
  if (j.contains("motions")) {
    s.motions.clear();
    for (const auto& v : j["motions"])
      s.motions.push_back(parse_enum(v.get<std::string>(),
                                     {Motion::horizontal, Motion::vertical, Motion::diagonal, Motion::circular},
                                     "data.motions"));
  }
  s.speeds = j.value("speeds", s.speeds);
  s.validate();
  return s;
}

nlohmann::ordered_json to_json(const BackboneConfig& c) {
  nlohmann::ordered_json j;
  j["input_channels"] = c.input_channels;
  j["height"] = c.height;
  j["width"] = c.width;
  j["channels"] = c.channels;
  j["pool"] = c.pool;
  j["levels"] = c.levels;
  j["frozen"] = c.frozen;
  return j;
}

BackboneConfig backbone_config_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.input_channels = j.value("input_channels", c.input_channels);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.channels = j.value("channels", c.channels);
  c.pool = j.value("pool", c.pool);
  c.levels = j.value("levels", c.levels);
  c.frozen = j.value("frozen", c.frozen);
  c.validate();
  return c;
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["architecture"] = to_string(c.architecture);
  j["backbone"] = to_json(c.backbone);
  j["hidden"] = c.hidden;
  j["kernel"] = c.kernel;
  j["dropout"] = c.dropout;
  j["classes"] = c.classes;
  j["stream"] = to_string(c.stream);
  j["stacked_candidate_input"] = c.stacked_candidate_input;
  j["fc_hidden"] = c.fc_hidden;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.architecture = parse_architecture(j.value("architecture", to_string(c.architecture)));
  if (j.contains("backbone")) c.backbone = backbone_config_from_json(j["backbone"]);
  c.hidden = j.value("hidden", c.hidden);
  c.kernel = j.value("kernel", c.kernel);
  c.dropout = j.value("dropout", c.dropout);
  c.classes = j.value("classes", c.classes);
  c.stream = parse_stream(j.value("stream", to_string(c.stream)));
  c.stacked_candidate_input = j.value("stacked_candidate_input", c.stacked_candidate_input);
  c.fc_hidden = j.value("fc_hidden", c.fc_hidden);
  c.validate();
  return c;
}

}  // namespace grcn
