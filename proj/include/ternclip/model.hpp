#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ternclip/graph.hpp"
#include "ternclip/tensor.hpp"
#include "ternclip/ternary.hpp"

namespace ternclip {

/// Shared by both towers; the image tower reads patch_dim/num_patches, the
/// text tower vocab_size/context_len.
struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::size_t vocab_size = 512;
  std::size_t context_len = 16;
  std::size_t patch_dim = 48;
  std::size_t num_patches = 16;
  std::size_t embed_dim = 32;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

enum class QuantMode { None, QFFN, QALL };
enum class Storage { Dense, Ternary };

std::string to_string(QuantMode mode);
QuantMode parse_quant_mode(const std::string& text);

/// What a parameter is, for deciding whether a quantization plan covers it.
enum class ParamRole { Embedding, PositionalEmbedding, Attention, FeedForward, Projection, Norm, Bias };

struct QuantPlan {
  QuantMode mode = QuantMode::None;
  // Positional tables count as part of the embedding layer unless disabled.
  bool quantize_positional = true;
  std::map<std::string, Storage> overrides;

  Storage storage_for(const std::string& name, ParamRole role) const;
  bool operator==(const QuantPlan&) const = default;
};

struct Parameter {
  std::string name;
  ParamRole role{};
  DenseTensor value;  // latent full-precision weights
  // Fixed ternary weights. Set by finalize() or when loading a packed file;
  // while present, forward passes use them instead of re-ternarizing value.
  std::shared_ptr<const TernaryTensor> frozen;
};

struct DualEncoderModel {
  EncoderConfig config;
  float tau = 0.07f;
  QuantPlan plan;
  QuantizerConfig quantizer;
  std::vector<Parameter> params;  // fixed creation order

  static DualEncoderModel create(const EncoderConfig& config, std::uint64_t seed, float tau = 0.07f);

  Parameter& param(const std::string& name);
  const Parameter& param(const std::string& name) const;
  bool has_param(const std::string& name) const;

  bool is_ternary(const Parameter& p) const { return plan.storage_for(p.name, p.role) == Storage::Ternary; }
  bool is_finalized() const;

  std::size_t total_params() const;
  std::size_t quantized_params() const;
};

/// Image inputs: `patches` is [(batch * num_patches) x patch_dim].
/// Text inputs: `tokens` holds batch * context_len ids, row-major.
struct Batch {
  DenseTensor patches;
  std::vector<std::int32_t> tokens;
  std::vector<std::size_t> labels;
  std::size_t size = 0;
};

/// How parameters enter a graph.
enum class BindMode {
  Frozen,     // constants; no gradients
  Trainable,  // dense leaves accumulate into Parameter::value.grad, ternary leaves via STE
};

/// Graph leaves for every parameter, created once per forward pass. For
/// tensors the plan marks ternary the leaf carries T * gamma, with T taken from
/// Parameter::frozen or else ternarized from the current latent weights.
class BoundModel {
 public:
  BoundModel(Graph& g, DualEncoderModel& model, BindMode mode);

  Var operator[](const std::string& name) const;
  Graph& graph() const { return *graph_; }
  const DualEncoderModel& model() const { return *model_; }

 private:
  Graph* graph_;
  DualEncoderModel* model_;
  std::map<std::string, Var> vars_;
};

/// L2-normalised [batch x embed_dim] image embeddings.
Var encode_image(BoundModel& bm, const DenseTensor& patches, std::size_t batch);
/// L2-normalised [batch x embed_dim] text embeddings.
Var encode_text(BoundModel& bm, std::span<const std::int32_t> tokens, std::size_t batch);

/// <I_e[i], T_e[j]> / tau.
Var similarity_logits(Graph& g, Var image_emb, Var text_emb, float tau);

struct Embeddings {
  DenseTensor image;
  DenseTensor text;
};

/// Inference-only forward over a whole batch, in chunks of `chunk` samples.
DenseTensor embed_images(DualEncoderModel& model, const DenseTensor& patches, std::size_t count,
                         std::size_t chunk = 256, std::size_t* packed_ops = nullptr);
DenseTensor embed_texts(DualEncoderModel& model, std::span<const std::int32_t> tokens, std::size_t count,
                        std::size_t chunk = 256, std::size_t* packed_ops = nullptr);

/// Fraction of parameters stored ternary under the model's plan.
double quantized_proportion(const DualEncoderModel& model);
/// total_params * baseline_bits / sum of stored bits, with packed tensors at
/// 1.6875 bits per weight and dense ones at `dense_bits`.
double compression_ratio(const DualEncoderModel& model, double baseline_bits = 32.0, double dense_bits = 32.0);

/// Ternarizes every planned tensor from the current latent weights into
/// Parameter::frozen.
void freeze_ternary(DualEncoderModel& model);
/// Drops frozen ternary weights so forward passes ternarize the latent values.
void unfreeze(DualEncoderModel& model);

}  // namespace ternclip
