#pragma once

// JSON forms of the configuration structs, shared by dataset manifests,
// checkpoints and reports.

#include <json.hpp>

#include "grcn/backbone.hpp"
#include "grcn/model.hpp"
#include "grcn/synth.hpp"

namespace grcn {

nlohmann::ordered_json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace grcn
