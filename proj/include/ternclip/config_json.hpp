#pragma once

#include <nlohmann/json.hpp>

#include "ternclip/data.hpp"
#include "ternclip/losses.hpp"
#include "ternclip/model.hpp"
#include "ternclip/ternary.hpp"
#include "ternclip/trainer.hpp"

namespace ternclip {

// JSON mappings. Missing keys keep their defaults; unknown keys are rejected
// with ConfigError so typos in config files do not pass silently.

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const QuantPlan& p);
void from_json(const nlohmann::json& j, QuantPlan& p);
void to_json(nlohmann::json& j, const QuantizerConfig& q);
void from_json(const nlohmann::json& j, QuantizerConfig& q);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

}  // namespace ternclip
