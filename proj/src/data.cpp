#include "ternclip/data.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ternclip/config_json.hpp"
#include "ternclip/container.hpp"
#include "ternclip/error.hpp"

namespace ternclip {

void SyntheticConfig::validate() const {
  if (classes == 0 || train_per_class == 0 || test_per_class == 0 || prompts_per_class == 0 || latent_dim == 0 ||
      num_patches == 0 || patch_dim == 0 || vocab_size == 0 || context_len == 0) {
    throw ConfigError("synthetic data: all counts must be positive");
  }
  if (latent_noise < 0.0f || patch_noise < 0.0f) throw ConfigError("synthetic data: noise must be >= 0");
  if (token_flip_prob < 0.0f || token_flip_prob > 1.0f) throw ConfigError("synthetic data: flip prob must be in [0,1]");
}

Batch Split::gather(std::span<const std::size_t> indices) const {
  Batch b;
  b.size = indices.size();
  const std::size_t patch_dim = patches.data.empty() ? 0 : patches.cols();
  const std::size_t per = num_patches * patch_dim;
  std::vector<float> pd;
  pd.reserve(indices.size() * per);
  b.tokens.reserve(indices.size() * context_len);
  for (auto i : indices) {
    if (i >= size) throw ShapeError("gather: sample index out of range");
    if (per > 0) {
      pd.insert(pd.end(), patches.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                patches.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    }
    b.tokens.insert(b.tokens.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i * context_len),
                    tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * context_len));
    b.labels.push_back(labels[i]);
  }
  if (per > 0) b.patches = DenseTensor({indices.size() * num_patches, patch_dim}, std::move(pd));
  return b;
}

namespace {

struct Renderer {
  const SyntheticConfig& cfg;
  std::vector<DenseTensor> patch_maps;  // per patch position: [patch_dim x latent_dim]
  DenseTensor token_codes;              // [(context_len * vocab) x latent_dim]

  Renderer(const SyntheticConfig& c, std::mt19937_64& rng) : cfg(c) {
    const float s = 1.0f / std::sqrt(static_cast<float>(c.latent_dim));
    for (std::size_t p = 0; p < c.num_patches; ++p) {
      patch_maps.push_back(DenseTensor::random_normal({c.patch_dim, c.latent_dim}, rng, s));
    }
    token_codes = DenseTensor::random_normal({c.context_len * c.vocab_size, c.latent_dim}, rng, 1.0f);
  }

  void image(std::span<const float> z, std::mt19937_64& rng, std::vector<float>& out) const {
    std::normal_distribution<float> noise(0.0f, cfg.patch_noise);
    for (std::size_t p = 0; p < cfg.num_patches; ++p) {
      for (std::size_t r = 0; r < cfg.patch_dim; ++r) {
        float v = 0.0f;
        for (std::size_t l = 0; l < cfg.latent_dim; ++l) v += patch_maps[p].at(r, l) * z[l];
        out.push_back(v + noise(rng));
      }
    }
  }

  // Token at position i is the vocabulary entry whose code best matches z.
  void text(std::span<const float> z, std::mt19937_64& rng, bool flips, std::vector<std::int32_t>& out) const {
    std::uniform_real_distribution<float> coin(0.0f, 1.0f);
    std::uniform_int_distribution<std::int32_t> any(0, static_cast<std::int32_t>(cfg.vocab_size - 1));
    for (std::size_t i = 0; i < cfg.context_len; ++i) {
      std::int32_t best = 0;
      float best_score = -INFINITY;
      for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
        const auto code = token_codes.row(i * cfg.vocab_size + v);
        float score = 0.0f;
        for (std::size_t l = 0; l < cfg.latent_dim; ++l) score += code[l] * z[l];
        if (score > best_score) {
          best_score = score;
          best = static_cast<std::int32_t>(v);
        }
      }
      if (flips && coin(rng) < cfg.token_flip_prob) best = any(rng);
      out.push_back(best);
    }
  }
};

Split make_split(const SyntheticConfig& cfg, const Renderer& renderer, const DenseTensor& centers,
                 std::size_t per_class, std::mt19937_64& rng) {
  Split s;
  s.size = cfg.classes * per_class;
  s.num_patches = cfg.num_patches;
  s.context_len = cfg.context_len;
  std::vector<float> patches;
  patches.reserve(s.size * cfg.num_patches * cfg.patch_dim);
  std::normal_distribution<float> noise(0.0f, cfg.latent_noise);
  std::vector<float> z(cfg.latent_dim);
  // Interleave classes so that any prefix of the split is balanced.
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t k = 0; k < cfg.classes; ++k) {
      for (std::size_t l = 0; l < cfg.latent_dim; ++l) z[l] = centers.at(k, l) + noise(rng);
      renderer.image(z, rng, patches);
      renderer.text(z, rng, true, s.tokens);
      s.labels.push_back(k);
    }
  }
  s.patches = DenseTensor({s.size * cfg.num_patches, cfg.patch_dim}, std::move(patches));
  return s;
}

Split make_prompts(const SyntheticConfig& cfg, const Renderer& renderer, const DenseTensor& centers,
                   std::mt19937_64& rng) {
  Split s;
  s.size = cfg.classes * cfg.prompts_per_class;
  s.num_patches = 0;
  s.context_len = cfg.context_len;
  std::normal_distribution<float> noise(0.0f, 0.5f * cfg.latent_noise);
  std::vector<float> z(cfg.latent_dim);
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    for (std::size_t r = 0; r < cfg.prompts_per_class; ++r) {
      // The first prompt of each class is rendered from the clean class latent.
      for (std::size_t l = 0; l < cfg.latent_dim; ++l) z[l] = centers.at(k, l) + (r == 0 ? 0.0f : noise(rng));
      renderer.text(z, rng, false, s.tokens);
      s.labels.push_back(k);
    }
  }
  return s;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Dataset d;
  d.config = cfg;
  const auto centers = DenseTensor::random_normal({cfg.classes, cfg.latent_dim}, rng, 1.0f);
  const Renderer renderer(cfg, rng);
  d.train = make_split(cfg, renderer, centers, cfg.train_per_class, rng);
  d.test = make_split(cfg, renderer, centers, cfg.test_per_class, rng);
  d.prompts = make_prompts(cfg, renderer, centers, rng);
  return d;
}

namespace {

DenseTensor ints_to_tensor(std::span<const std::int32_t> v, Dims dims) {
  std::vector<float> f(v.begin(), v.end());
  return DenseTensor(std::move(dims), std::move(f));
}

DenseTensor labels_to_tensor(std::span<const std::size_t> v) {
  std::vector<float> f;
  for (auto x : v) f.push_back(static_cast<float>(x));
  return DenseTensor({v.size()}, std::move(f));
}

void add_split(Container& c, const std::string& prefix, const Split& s) {
  if (!s.patches.data.empty()) c.entries.push_back(encode_f32(prefix + ".patches", s.patches));
  c.entries.push_back(encode_f32(prefix + ".tokens", ints_to_tensor(s.tokens, {s.size, s.context_len})));
  c.entries.push_back(encode_f32(prefix + ".labels", labels_to_tensor(s.labels)));
}

Split read_split(const Container& c, const std::string& prefix, const SyntheticConfig& cfg, bool with_images) {
  Split s;
  const auto tokens = decode_dense(c.entry(prefix + ".tokens"));
  const auto labels = decode_dense(c.entry(prefix + ".labels"));
  if (tokens.rank() != 2 || tokens.dims[1] != cfg.context_len || labels.size() != tokens.dims[0]) {
    throw FormatError("dataset split '" + prefix + "' has inconsistent shapes");
  }
  s.size = tokens.dims[0];
  s.context_len = cfg.context_len;
  for (float v : tokens.data) {
    if (v < 0.0f || v >= static_cast<float>(cfg.vocab_size) || v != std::floor(v)) {
      throw FormatError("dataset split '" + prefix + "' holds an invalid token id");
    }
    s.tokens.push_back(static_cast<std::int32_t>(v));
  }
  for (float v : labels.data) {
    if (v < 0.0f || v >= static_cast<float>(cfg.classes) || v != std::floor(v)) {
      throw FormatError("dataset split '" + prefix + "' holds an invalid label");
    }
    s.labels.push_back(static_cast<std::size_t>(v));
  }
  if (with_images) {
    s.patches = decode_dense(c.entry(prefix + ".patches"));
    s.num_patches = cfg.num_patches;
    if (s.patches.rank() != 2 || s.patches.dims[0] != s.size * cfg.num_patches || s.patches.dims[1] != cfg.patch_dim) {
      throw FormatError("dataset split '" + prefix + "' has inconsistent patch shapes");
    }
  }
  return s;
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  Container c;
  c.metadata["format"] = "ternclip-dataset";
  c.metadata["generator"] = d.config;
  add_split(c, "train", d.train);
  add_split(c, "test", d.test);
  add_split(c, "prompts", d.prompts);
  write_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto c = read_container(path);
  if (c.metadata.value("format", "") != "ternclip-dataset") throw FormatError("container does not hold a dataset");
  Dataset d;
  try {
    d.config = c.metadata.at("generator").get<SyntheticConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset metadata: ") + e.what());
  }
  d.train = read_split(c, "train", d.config, true);
  d.test = read_split(c, "test", d.config, true);
  d.prompts = read_split(c, "prompts", d.config, false);
  return d;
}

void check_compatible(const Dataset& d, const EncoderConfig& enc) {
  const auto& c = d.config;
  if (c.num_patches != enc.num_patches || c.patch_dim != enc.patch_dim || c.vocab_size != enc.vocab_size ||
      c.context_len != enc.context_len) {
    throw ConfigError("dataset geometry (patches " + std::to_string(c.num_patches) + "x" +
                      std::to_string(c.patch_dim) + ", vocab " + std::to_string(c.vocab_size) + ", context " +
                      std::to_string(c.context_len) + ") does not match the encoder");
  }
}

}  // namespace ternclip
