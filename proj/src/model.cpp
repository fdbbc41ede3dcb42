#include "ternclip/model.hpp"

#include <cmath>

#include "ternclip/error.hpp"
#include "ternclip/ops.hpp"

namespace ternclip {

void EncoderConfig::validate() const {
  if (layers == 0 || width == 0 || heads == 0 || ffn_mult == 0 || vocab_size == 0 || context_len == 0 ||
      patch_dim == 0 || num_patches == 0 || embed_dim == 0) {
    throw ConfigError("encoder config: all sizes must be positive");
  }
  if (width % heads != 0) throw ConfigError("encoder config: width must be divisible by heads");
}

std::string to_string(QuantMode mode) {
  switch (mode) {
    case QuantMode::None:
      return "none";
    case QuantMode::QFFN:
      return "qffn";
    case QuantMode::QALL:
      return "qall";
  }
  return "none";
}

QuantMode parse_quant_mode(const std::string& text) {
  if (text == "none") return QuantMode::None;
  if (text == "qffn") return QuantMode::QFFN;
  if (text == "qall") return QuantMode::QALL;
  throw ConfigError("unknown quantization plan '" + text + "' (expected none, qffn or qall)");
}

Storage QuantPlan::storage_for(const std::string& name, ParamRole role) const {
  if (auto it = overrides.find(name); it != overrides.end()) return it->second;
  if (mode == QuantMode::None) return Storage::Dense;
  switch (role) {
    case ParamRole::Embedding:
    case ParamRole::FeedForward:
      return Storage::Ternary;
    case ParamRole::PositionalEmbedding:
      return quantize_positional ? Storage::Ternary : Storage::Dense;
    case ParamRole::Attention:
      return mode == QuantMode::QALL ? Storage::Ternary : Storage::Dense;
    case ParamRole::Projection:
    case ParamRole::Norm:
    case ParamRole::Bias:
      return Storage::Dense;
  }
  return Storage::Dense;
}

namespace {

class ParamBuilder {
 public:
  ParamBuilder(std::vector<Parameter>& out, std::mt19937_64& rng) : out_(out), rng_(rng) {}

  void normal(const std::string& name, ParamRole role, Dims dims, float stddev) {
    out_.push_back({name, role, DenseTensor::random_normal(std::move(dims), rng_, stddev), nullptr});
  }
  void constant(const std::string& name, ParamRole role, Dims dims, float value) {
    out_.push_back({name, role, DenseTensor::filled(std::move(dims), value), nullptr});
  }

 private:
  std::vector<Parameter>& out_;
  std::mt19937_64& rng_;
};

float fan_in_std(std::size_t fan_in) { return 1.0f / std::sqrt(static_cast<float>(fan_in)); }

void add_tower_layers(ParamBuilder& pb, const std::string& tower, const EncoderConfig& c) {
  const std::size_t w = c.width, fw = c.width * c.ffn_mult;
  const float residual_std = fan_in_std(w) / std::sqrt(2.0f * static_cast<float>(c.layers));
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = tower + ".layers." + std::to_string(i) + ".";
    pb.constant(p + "ln1.gain", ParamRole::Norm, {w}, 1.0f);
    pb.constant(p + "ln1.bias", ParamRole::Norm, {w}, 0.0f);
    for (const char* proj : {"q", "k", "v"}) {
      pb.normal(p + "attn." + proj + ".weight", ParamRole::Attention, {w, w}, fan_in_std(w));
      pb.constant(p + "attn." + proj + ".bias", ParamRole::Bias, {w}, 0.0f);
    }
    pb.normal(p + "attn.o.weight", ParamRole::Attention, {w, w}, residual_std);
    pb.constant(p + "attn.o.bias", ParamRole::Bias, {w}, 0.0f);
    pb.constant(p + "ln2.gain", ParamRole::Norm, {w}, 1.0f);
    pb.constant(p + "ln2.bias", ParamRole::Norm, {w}, 0.0f);
    pb.normal(p + "ffn.up.weight", ParamRole::FeedForward, {fw, w}, fan_in_std(w));
    pb.constant(p + "ffn.up.bias", ParamRole::Bias, {fw}, 0.0f);
    pb.normal(p + "ffn.down.weight", ParamRole::FeedForward, {w, fw},
              fan_in_std(fw) / std::sqrt(2.0f * static_cast<float>(c.layers)));
    pb.constant(p + "ffn.down.bias", ParamRole::Bias, {w}, 0.0f);
  }
  pb.constant(tower + ".ln_final.gain", ParamRole::Norm, {w}, 1.0f);
  pb.constant(tower + ".ln_final.bias", ParamRole::Norm, {w}, 0.0f);
  pb.normal(tower + ".proj.weight", ParamRole::Projection, {c.embed_dim, w}, fan_in_std(w));
}

}  // namespace

DualEncoderModel DualEncoderModel::create(const EncoderConfig& config, std::uint64_t seed, float tau) {
  config.validate();
  if (!(tau > 0.0f)) throw ConfigError("temperature must be > 0");
  DualEncoderModel m;
  m.config = config;
  m.tau = tau;
  std::mt19937_64 rng(seed);
  ParamBuilder pb(m.params, rng);
  const std::size_t w = config.width;

  pb.normal("image.patch_embed.weight", ParamRole::Embedding, {w, config.patch_dim}, fan_in_std(config.patch_dim));
  pb.constant("image.patch_embed.bias", ParamRole::Bias, {w}, 0.0f);
  pb.normal("image.pos_embed", ParamRole::PositionalEmbedding, {config.num_patches, w}, 0.1f);
  add_tower_layers(pb, "image", config);

  pb.normal("text.token_embed", ParamRole::Embedding, {config.vocab_size, w}, 1.0f);
  pb.normal("text.pos_embed", ParamRole::PositionalEmbedding, {config.context_len, w}, 0.1f);
  add_tower_layers(pb, "text", config);
  return m;
}

Parameter& DualEncoderModel::param(const std::string& name) {
  for (auto& p : params) {
    if (p.name == name) return p;
  }
  throw ConfigError("model has no parameter '" + name + "'");
}

const Parameter& DualEncoderModel::param(const std::string& name) const {
  return const_cast<DualEncoderModel*>(this)->param(name);
}

bool DualEncoderModel::has_param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return true;
  }
  return false;
}

bool DualEncoderModel::is_finalized() const {
  bool any = false;
  for (const auto& p : params) {
    if (is_ternary(p)) {
      if (!p.frozen) return false;
      any = true;
    }
  }
  return any;
}

std::size_t DualEncoderModel::total_params() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

std::size_t DualEncoderModel::quantized_params() const {
  std::size_t n = 0;
  for (const auto& p : params) {
    if (is_ternary(p)) n += p.value.size();
  }
  return n;
}

double quantized_proportion(const DualEncoderModel& model) {
  const auto total = model.total_params();
  return total == 0 ? 0.0 : static_cast<double>(model.quantized_params()) / static_cast<double>(total);
}

double compression_ratio(const DualEncoderModel& model, double baseline_bits, double dense_bits) {
  double stored = 0.0;
  for (const auto& p : model.params) {
    stored += static_cast<double>(p.value.size()) * (model.is_ternary(p) ? kBitsPerWeight : dense_bits);
  }
  return stored == 0.0 ? 1.0 : static_cast<double>(model.total_params()) * baseline_bits / stored;
}

void freeze_ternary(DualEncoderModel& model) {
  for (auto& p : model.params) {
    p.frozen = model.is_ternary(p) ? std::make_shared<const TernaryTensor>(ternarize(p.value, model.quantizer))
                                   : nullptr;
  }
}

void unfreeze(DualEncoderModel& model) {
  for (auto& p : model.params) p.frozen.reset();
}

BoundModel::BoundModel(Graph& g, DualEncoderModel& model, BindMode mode) : graph_(&g), model_(&model) {
  for (auto& p : model.params) {
    Var v;
    if (model.is_ternary(p)) {
      auto t = p.frozen ? p.frozen : std::make_shared<const TernaryTensor>(ternarize(p.value, model.quantizer));
      v = g.ternary_parameter(mode == BindMode::Trainable ? &p.value : nullptr, std::move(t));
    } else if (mode == BindMode::Trainable) {
      v = g.parameter(p.value);
    } else {
      v = g.constant(DenseTensor(p.value.dims, p.value.data));
    }
    vars_.emplace(p.name, v);
  }
}

Var BoundModel::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

namespace {

Var dense_layer(BoundModel& bm, Var x, const std::string& prefix) {
  auto& g = bm.graph();
  return add_rows(g, linear(g, x, bm[prefix + ".weight"]), bm[prefix + ".bias"]);
}

Var tower_body(BoundModel& bm, const std::string& tower, Var x, std::size_t batch, std::size_t seq) {
  auto& g = bm.graph();
  const auto& c = bm.model().config;
  for (std::size_t i = 0; i < c.layers; ++i) {
    const std::string p = tower + ".layers." + std::to_string(i) + ".";
    Var h = layer_norm(g, x, bm[p + "ln1.gain"], bm[p + "ln1.bias"]);
    Var q = dense_layer(bm, h, p + "attn.q");
    Var k = dense_layer(bm, h, p + "attn.k");
    Var v = dense_layer(bm, h, p + "attn.v");
    Var a = attention(g, q, k, v, batch, seq, c.heads);
    x = add(g, x, dense_layer(bm, a, p + "attn.o"));
    h = layer_norm(g, x, bm[p + "ln2.gain"], bm[p + "ln2.bias"]);
    Var f = dense_layer(bm, gelu(g, dense_layer(bm, h, p + "ffn.up")), p + "ffn.down");
    x = add(g, x, f);
  }
  x = layer_norm(g, x, bm[tower + ".ln_final.gain"], bm[tower + ".ln_final.bias"]);
  Var pooled = mean_pool(g, x, seq);
  return l2_normalize_rows(g, linear(g, pooled, bm[tower + ".proj.weight"]));
}

}  // namespace

Var encode_image(BoundModel& bm, const DenseTensor& patches, std::size_t batch) {
  const auto& c = bm.model().config;
  if (batch == 0 || patches.rank() != 2 || patches.dims[0] != batch * c.num_patches || patches.dims[1] != c.patch_dim) {
    throw ShapeError("encode_image: patches " + dims_to_string(patches.dims) + " do not match batch " +
                     std::to_string(batch) + " of " + std::to_string(c.num_patches) + "x" +
                     std::to_string(c.patch_dim));
  }
  auto& g = bm.graph();
  Var x = g.constant(DenseTensor(patches.dims, patches.data));
  x = dense_layer(bm, x, "image.patch_embed");
  x = add_rows(g, x, bm["image.pos_embed"]);
  return tower_body(bm, "image", x, batch, c.num_patches);
}

Var encode_text(BoundModel& bm, std::span<const std::int32_t> tokens, std::size_t batch) {
  const auto& c = bm.model().config;
  if (batch == 0 || tokens.size() != batch * c.context_len) {
    throw ShapeError("encode_text: " + std::to_string(tokens.size()) + " tokens for batch " + std::to_string(batch) +
                     " of context " + std::to_string(c.context_len));
  }
  auto& g = bm.graph();
  Var x = embedding_lookup(g, bm["text.token_embed"], tokens);
  x = add_rows(g, x, bm["text.pos_embed"]);
  return tower_body(bm, "text", x, batch, c.context_len);
}

Var similarity_logits(Graph& g, Var image_emb, Var text_emb, float tau) {
  if (!(tau > 0.0f)) throw ConfigError("similarity_logits: temperature must be > 0");
  const auto& a = g.value(image_emb);
  const auto& b = g.value(text_emb);
  if (a.rank() != 2 || b.rank() != 2 || a.dims[1] != b.dims[1]) {
    throw ShapeError("similarity_logits: " + dims_to_string(a.dims) + " vs " + dims_to_string(b.dims));
  }
  return scale(g, matmul(g, image_emb, transpose(g, text_emb)), 1.0f / tau);
}

DenseTensor embed_images(DualEncoderModel& model, const DenseTensor& patches, std::size_t count, std::size_t chunk,
                         std::size_t* packed_ops) {
  const auto& c = model.config;
  const std::size_t rows_per = c.num_patches * c.patch_dim;
  if (patches.size() != count * rows_per) throw ShapeError("embed_images: patch tensor does not hold count samples");
  auto out = DenseTensor::zeros({count, c.embed_dim});
  for (std::size_t start = 0; start < count; start += chunk) {
    const std::size_t b = std::min(chunk, count - start);
    DenseTensor part({b * c.num_patches, c.patch_dim},
                     std::vector<float>(patches.data.begin() + static_cast<std::ptrdiff_t>(start * rows_per),
                                        patches.data.begin() + static_cast<std::ptrdiff_t>((start + b) * rows_per)));
    Graph g;
    BoundModel bm(g, model, BindMode::Frozen);
    const auto& e = g.value(encode_image(bm, part, b));
    std::copy(e.data.begin(), e.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * c.embed_dim));
    if (packed_ops != nullptr) *packed_ops += g.packed_op_count();
  }
  return out;
}

DenseTensor embed_texts(DualEncoderModel& model, std::span<const std::int32_t> tokens, std::size_t count,
                        std::size_t chunk, std::size_t* packed_ops) {
  const auto& c = model.config;
  if (tokens.size() != count * c.context_len) throw ShapeError("embed_texts: token list does not hold count samples");
  auto out = DenseTensor::zeros({count, c.embed_dim});
  for (std::size_t start = 0; start < count; start += chunk) {
    const std::size_t b = std::min(chunk, count - start);
    Graph g;
    BoundModel bm(g, model, BindMode::Frozen);
    const auto& e = g.value(encode_text(bm, tokens.subspan(start * c.context_len, b * c.context_len), b));
    std::copy(e.data.begin(), e.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * c.embed_dim));
    if (packed_ops != nullptr) *packed_ops += g.packed_op_count();
  }
  return out;
}

}  // namespace ternclip
