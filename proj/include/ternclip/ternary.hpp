#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ternclip/tensor.hpp"

namespace ternclip {

// Packed ternary layout. A block covers 256 logical weights in 54 bytes:
// 52 bytes of base-3 digits (5 trits per byte, 260 slots, the last 4 always
// zero) followed by a binary16 scale. 54 * 8 / 256 = 1.6875 bits per weight.
inline constexpr std::size_t kBlockWeights = 256;
inline constexpr std::size_t kBlockSlots = 260;
inline constexpr std::size_t kTritsPerByte = 5;
inline constexpr std::size_t kTritBytes = kBlockSlots / kTritsPerByte;
inline constexpr std::size_t kBlockBytes = kTritBytes + 2;
inline constexpr double kBitsPerWeight = kBlockBytes * 8.0 / kBlockWeights;
inline constexpr std::uint8_t kMaxTritByte = 242;

static_assert(kTritBytes == 52 && kBlockBytes == 54);

using Trit = std::int8_t;

enum class ScaleMode { PerTensor, PerBlock };
enum class Rounding { HalfAwayFromZero };

struct QuantizerConfig {
  float beta = 2.0f;
  float epsilon = 1e-6f;
  Rounding rounding = Rounding::HalfAwayFromZero;

  void validate() const;
};

struct PackedBlock {
  std::array<std::uint8_t, kTritBytes> trit_bytes{};
  std::uint16_t scale = 0;  // binary16 bits

  float scale_value() const;
  bool operator==(const PackedBlock&) const = default;
};

struct UnpackedBlock {
  std::array<Trit, kBlockSlots> trits{};
  float scale = 0.0f;
};

/// Ternary weights of a tensor in packed blocks. Blocks run over the
/// row-major flattening of `dims`; the trailing block is zero-padded.
struct TernaryTensor {
  Dims dims;
  std::vector<PackedBlock> blocks;
  ScaleMode scale_mode = ScaleMode::PerTensor;
  std::size_t element_count = 0;

  /// Throws FormatError on any broken invariant (block count, byte range,
  /// non-zero padding, unequal scales in PerTensor mode).
  void validate() const;

  std::size_t byte_size() const { return blocks.size() * kBlockBytes; }
  float block_scale(std::size_t block) const { return blocks.at(block).scale_value(); }

  /// The element_count trits in row-major order.
  std::vector<Trit> trits() const;

  static TernaryTensor from_trits(Dims dims, std::span<const Trit> trits, float scale);

  bool operator==(const TernaryTensor&) const = default;
};

/// Bytes occupied by `n` packed weights.
constexpr std::size_t packed_byte_size(std::size_t n) {
  return (n + kBlockWeights - 1) / kBlockWeights * kBlockBytes;
}

/// beta * mean(|w|).
float compute_scale(const DenseTensor& w, const QuantizerConfig& cfg);

/// RoundClip(x, -1, 1) with the configured tie rule.
Trit round_clip(float x, Rounding rounding = Rounding::HalfAwayFromZero);

/// trits = RoundClip(w / (gamma + eps)) with gamma from compute_scale; the
/// stored scale is gamma rounded to binary16.
TernaryTensor ternarize(const DenseTensor& w, const QuantizerConfig& cfg);
/// Same with an externally supplied scale.
TernaryTensor ternarize_with_scale(const DenseTensor& w, float gamma, const QuantizerConfig& cfg);

/// Byte i holds trits[5i..5i+4] as sum (trit + 1) * 3^j, lowest digit first.
PackedBlock pack_block(std::span<const Trit> trits, float scale);
UnpackedBlock unpack_block(const PackedBlock& block);

/// 243-entry table: the five trits encoded by each legal byte value.
const std::array<std::array<Trit, kTritsPerByte>, kMaxTritByte + 1>& trit_byte_table();

DenseTensor dequantize(const TernaryTensor& t);

/// Straight-through estimator: the gradient with respect to the ternary
/// weights is used unchanged as the gradient of the latent weights.
DenseTensor ste_backward(const DenseTensor& grad_wrt_ternary, const Dims& weight_dims);
/// Accumulating form used by the autodiff tape: latent_grad += ste_backward(g).
void ste_accumulate(std::span<const float> grad_wrt_ternary, std::span<float> latent_grad);

/// Fraction of zero trits among the element_count logical weights.
double sparsity(const TernaryTensor& t);
std::size_t zero_count(const TernaryTensor& t);

}  // namespace ternclip
