#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ternclip/model.hpp"

namespace ternclip {

/// Paired (patch matrix, token sequence) samples drawn around per-class
/// latent vectors. Both modalities of a sample are rendered from the same
/// noisy latent, so cross-modal alignment is learnable.
struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t classes = 32;
  std::size_t train_per_class = 256;
  std::size_t test_per_class = 48;
  std::size_t prompts_per_class = 4;
  std::size_t latent_dim = 16;
  float latent_noise = 0.7f;     // stddev of the per-sample latent offset
  float patch_noise = 0.7f;      // stddev of pixel-level noise on each patch
  float token_flip_prob = 0.1f;  // chance a token is replaced uniformly at random
  // Input geometry; must match the encoder that consumes the data.
  std::size_t num_patches = 16;
  std::size_t patch_dim = 48;
  std::size_t vocab_size = 512;
  std::size_t context_len = 16;

  void validate() const;
  bool operator==(const SyntheticConfig&) const = default;
};

/// A set of samples. `patches` is [(size * num_patches) x patch_dim]; it is
/// empty for text-only splits (class prompts).
struct Split {
  DenseTensor patches;
  std::vector<std::int32_t> tokens;
  std::vector<std::size_t> labels;
  std::size_t size = 0;
  std::size_t num_patches = 0;
  std::size_t context_len = 0;

  Batch gather(std::span<const std::size_t> indices) const;
};

struct Dataset {
  SyntheticConfig config;
  Split train;
  Split test;
  Split prompts;  // text only: prompts_per_class token sequences per class
};

Dataset generate_synthetic(const SyntheticConfig& cfg);

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Checks that the dataset geometry fits the encoder.
void check_compatible(const Dataset& d, const EncoderConfig& enc);

}  // namespace ternclip
