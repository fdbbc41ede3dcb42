#include "ternclip/config_json.hpp"

#include <algorithm>
#include <initializer_list>
#include <string>

#include "ternclip/error.hpp"

namespace ternclip {
namespace {

using nlohmann::json;

void only_keys(const json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* key) { return k == key; })) {
      throw ConfigError(std::string(where) + ": unknown key '" + k + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

std::string rounding_name(Rounding) { return "half_away_from_zero"; }

std::string kl_name(KlDirection d) { return d == KlDirection::TeacherFirst ? "teacher_first" : "student_first"; }

KlDirection parse_kl(const std::string& s) {
  if (s == "teacher_first") return KlDirection::TeacherFirst;
  if (s == "student_first") return KlDirection::StudentFirst;
  throw ConfigError("unknown kl_direction '" + s + "'");
}

}  // namespace

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"layers", c.layers},         {"width", c.width},           {"heads", c.heads},
           {"ffn_mult", c.ffn_mult},     {"vocab_size", c.vocab_size}, {"context_len", c.context_len},
           {"patch_dim", c.patch_dim},   {"num_patches", c.num_patches}, {"embed_dim", c.embed_dim}};
}

void from_json(const json& j, EncoderConfig& c) {
  only_keys(j,
            {"layers", "width", "heads", "ffn_mult", "vocab_size", "context_len", "patch_dim", "num_patches",
             "embed_dim"},
            "encoder");
  read(j, "layers", c.layers);
  read(j, "width", c.width);
  read(j, "heads", c.heads);
  read(j, "ffn_mult", c.ffn_mult);
  read(j, "vocab_size", c.vocab_size);
  read(j, "context_len", c.context_len);
  read(j, "patch_dim", c.patch_dim);
  read(j, "num_patches", c.num_patches);
  read(j, "embed_dim", c.embed_dim);
}

void to_json(json& j, const QuantPlan& p) {
  json overrides = json::object();
  for (const auto& [name, s] : p.overrides) overrides[name] = s == Storage::Ternary ? "ternary" : "dense";
  j = json{{"mode", to_string(p.mode)}, {"quantize_positional", p.quantize_positional}, {"overrides", overrides}};
}

void from_json(const json& j, QuantPlan& p) {
  only_keys(j, {"mode", "quantize_positional", "overrides"}, "plan");
  std::string mode = to_string(p.mode);
  read(j, "mode", mode);
  p.mode = parse_quant_mode(mode);
  read(j, "quantize_positional", p.quantize_positional);
  p.overrides.clear();
  if (auto it = j.find("overrides"); it != j.end()) {
    for (const auto& [name, v] : it->items()) {
      const auto s = v.get<std::string>();
      if (s != "ternary" && s != "dense") throw ConfigError("override for '" + name + "' must be dense or ternary");
      p.overrides[name] = s == "ternary" ? Storage::Ternary : Storage::Dense;
    }
  }
}

void to_json(json& j, const QuantizerConfig& q) {
  j = json{{"beta", q.beta}, {"epsilon", q.epsilon}, {"rounding", rounding_name(q.rounding)}};
}

void from_json(const json& j, QuantizerConfig& q) {
  only_keys(j, {"beta", "epsilon", "rounding"}, "quantizer");
  read(j, "beta", q.beta);
  read(j, "epsilon", q.epsilon);
  std::string rounding = rounding_name(q.rounding);
  read(j, "rounding", rounding);
  if (rounding != "half_away_from_zero") throw ConfigError("unsupported rounding '" + rounding + "'");
  q.rounding = Rounding::HalfAwayFromZero;
  q.validate();
}

void to_json(json& j, const LossWeights& w) {
  j = json{{"lambda_crd", w.lambda_crd}, {"lambda_icl", w.lambda_icl}, {"lambda_fd", w.lambda_fd},
           {"tau_crd", w.tau_crd},       {"tau", w.tau},               {"kl_direction", kl_name(w.kl_direction)}};
}

void from_json(const json& j, LossWeights& w) {
  only_keys(j, {"lambda_crd", "lambda_icl", "lambda_fd", "tau_crd", "tau", "kl_direction"}, "loss");
  read(j, "lambda_crd", w.lambda_crd);
  read(j, "lambda_icl", w.lambda_icl);
  read(j, "lambda_fd", w.lambda_fd);
  read(j, "tau_crd", w.tau_crd);
  read(j, "tau", w.tau);
  std::string dir = kl_name(w.kl_direction);
  read(j, "kl_direction", dir);
  w.kl_direction = parse_kl(dir);
  w.validate();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"steps", c.steps},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"warmup_steps", c.warmup_steps},
           {"weight_decay", c.weight_decay},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed},
           {"distill_mode", to_string(c.distill_mode)},
           {"quant_plan", c.quant_plan},
           {"quantizer", c.quantizer},
           {"loss", c.loss}};
}

void from_json(const json& j, TrainConfig& c) {
  only_keys(j,
            {"epochs", "steps", "batch_size", "lr", "warmup_steps", "weight_decay", "adam_beta1", "adam_beta2",
             "adam_eps", "seed", "distill_mode", "quant_plan", "quantizer", "loss"},
            "train");
  read(j, "epochs", c.epochs);
  read(j, "steps", c.steps);
  read(j, "batch_size", c.batch_size);
  read(j, "lr", c.lr);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "weight_decay", c.weight_decay);
  read(j, "adam_beta1", c.adam_beta1);
  read(j, "adam_beta2", c.adam_beta2);
  read(j, "adam_eps", c.adam_eps);
  read(j, "seed", c.seed);
  std::string mode = to_string(c.distill_mode);
  read(j, "distill_mode", mode);
  c.distill_mode = parse_distill_mode(mode);
  if (j.contains("quant_plan")) c.quant_plan = j.at("quant_plan").get<QuantPlan>();
  if (j.contains("quantizer")) c.quantizer = j.at("quantizer").get<QuantizerConfig>();
  if (j.contains("loss")) c.loss = j.at("loss").get<LossWeights>();
  c.validate();
}

void to_json(json& j, const SyntheticConfig& c) {
  j = json{{"seed", c.seed},
           {"classes", c.classes},
           {"train_per_class", c.train_per_class},
           {"test_per_class", c.test_per_class},
           {"prompts_per_class", c.prompts_per_class},
           {"latent_dim", c.latent_dim},
           {"latent_noise", c.latent_noise},
           {"patch_noise", c.patch_noise},
           {"token_flip_prob", c.token_flip_prob},
           {"num_patches", c.num_patches},
           {"patch_dim", c.patch_dim},
           {"vocab_size", c.vocab_size},
           {"context_len", c.context_len}};
}

void from_json(const json& j, SyntheticConfig& c) {
  only_keys(j,
            {"seed", "classes", "train_per_class", "test_per_class", "prompts_per_class", "latent_dim", "latent_noise",
             "patch_noise", "token_flip_prob", "num_patches", "patch_dim", "vocab_size", "context_len"},
            "synthetic data");
  read(j, "seed", c.seed);
  read(j, "classes", c.classes);
  read(j, "train_per_class", c.train_per_class);
  read(j, "test_per_class", c.test_per_class);
  read(j, "prompts_per_class", c.prompts_per_class);
  read(j, "latent_dim", c.latent_dim);
  read(j, "latent_noise", c.latent_noise);
  read(j, "patch_noise", c.patch_noise);
  read(j, "token_flip_prob", c.token_flip_prob);
  read(j, "num_patches", c.num_patches);
  read(j, "patch_dim", c.patch_dim);
  read(j, "vocab_size", c.vocab_size);
  read(j, "context_len", c.context_len);
  c.validate();
}

}  // namespace ternclip
