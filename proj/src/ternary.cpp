#include "ternclip/ternary.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ternclip/error.hpp"
#include "ternclip/half.hpp"

namespace ternclip {

void QuantizerConfig::validate() const {
  if (!(beta > 0.0f) || !std::isfinite(beta)) throw ConfigError("quantizer beta must be > 0");
  if (!(epsilon > 0.0f) || !std::isfinite(epsilon)) throw ConfigError("quantizer epsilon must be > 0");
}

float PackedBlock::scale_value() const { return half_to_float(scale); }

const std::array<std::array<Trit, kTritsPerByte>, kMaxTritByte + 1>& trit_byte_table() {
  static const auto table = [] {
    std::array<std::array<Trit, kTritsPerByte>, kMaxTritByte + 1> t{};
    for (unsigned v = 0; v <= kMaxTritByte; ++v) {
      unsigned rest = v;
      for (std::size_t j = 0; j < kTritsPerByte; ++j) {
        t[v][j] = static_cast<Trit>(static_cast<int>(rest % 3) - 1);
        rest /= 3;
      }
    }
    return t;
  }();
  return table;
}

PackedBlock pack_block(std::span<const Trit> trits, float scale) {
  if (trits.size() != kBlockSlots) {
    throw ShapeError("pack_block: expected " + std::to_string(kBlockSlots) + " trits, got " +
                     std::to_string(trits.size()));
  }
  PackedBlock block;
  for (std::size_t i = 0; i < kTritBytes; ++i) {
    unsigned byte = 0;
    unsigned place = 1;
    for (std::size_t j = 0; j < kTritsPerByte; ++j) {
      const Trit t = trits[i * kTritsPerByte + j];
      if (t < -1 || t > 1) throw FormatError("pack_block: trit value " + std::to_string(t) + " not in {-1,0,+1}");
      byte += static_cast<unsigned>(t + 1) * place;
      place *= 3;
    }
    block.trit_bytes[i] = static_cast<std::uint8_t>(byte);
  }
  block.scale = float_to_half(scale);
  return block;
}

UnpackedBlock unpack_block(const PackedBlock& block) {
  const auto& table = trit_byte_table();
  UnpackedBlock out;
  for (std::size_t i = 0; i < kTritBytes; ++i) {
    const auto byte = block.trit_bytes[i];
    if (byte > kMaxTritByte) {
      throw FormatError("corrupt block: trit byte " + std::to_string(byte) + " at offset " + std::to_string(i) +
                        " exceeds 242");
    }
    std::copy(table[byte].begin(), table[byte].end(), out.trits.begin() + static_cast<std::ptrdiff_t>(i * 5));
  }
  out.scale = block.scale_value();
  return out;
}

void TernaryTensor::validate() const {
  if (element_count != ternclip::element_count(dims)) {
    throw FormatError("ternary tensor: element_count " + std::to_string(element_count) + " does not match dims " +
                      dims_to_string(dims));
  }
  const std::size_t expected = (element_count + kBlockWeights - 1) / kBlockWeights;
  if (blocks.size() != expected) {
    throw FormatError("ternary tensor: " + std::to_string(blocks.size()) + " blocks, expected " +
                      std::to_string(expected));
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto unpacked = unpack_block(blocks[b]);
    const std::size_t live = std::min(kBlockWeights, element_count - b * kBlockWeights);
    for (std::size_t i = live; i < kBlockSlots; ++i) {
      if (unpacked.trits[i] != 0) {
        throw FormatError("ternary tensor: padding slot " + std::to_string(i) + " of block " + std::to_string(b) +
                          " is non-zero");
      }
    }
    if (scale_mode == ScaleMode::PerTensor && blocks[b].scale != blocks[0].scale) {
      throw FormatError("ternary tensor: per-tensor scale differs in block " + std::to_string(b));
    }
  }
}

std::vector<Trit> TernaryTensor::trits() const {
  std::vector<Trit> out(element_count);
  const auto& table = trit_byte_table();
  std::size_t pos = 0;
  for (const auto& block : blocks) {
    for (std::size_t i = 0; i < kTritBytes && pos < element_count; ++i) {
      const auto byte = block.trit_bytes[i];
      if (byte > kMaxTritByte) throw FormatError("corrupt block: trit byte " + std::to_string(byte) + " exceeds 242");
      for (std::size_t j = 0; j < kTritsPerByte && pos < element_count; ++j) {
        // Slots 256..259 of each block are padding and never reach the output.
        if (i * kTritsPerByte + j >= kBlockWeights) break;
        out[pos++] = table[byte][j];
      }
    }
  }
  return out;
}

TernaryTensor TernaryTensor::from_trits(Dims dims, std::span<const Trit> trits, float scale) {
  TernaryTensor t;
  t.element_count = ternclip::element_count(dims);
  if (trits.size() != t.element_count) {
    throw ShapeError("from_trits: " + std::to_string(trits.size()) + " trits for dims " + dims_to_string(dims));
  }
  t.dims = std::move(dims);
  t.scale_mode = ScaleMode::PerTensor;
  const std::size_t nblocks = (t.element_count + kBlockWeights - 1) / kBlockWeights;
  t.blocks.reserve(nblocks);
  std::array<Trit, kBlockSlots> slots{};
  for (std::size_t b = 0; b < nblocks; ++b) {
    slots.fill(0);
    const std::size_t begin = b * kBlockWeights;
    const std::size_t live = std::min(kBlockWeights, t.element_count - begin);
    std::copy_n(trits.begin() + static_cast<std::ptrdiff_t>(begin), live, slots.begin());
    t.blocks.push_back(pack_block(slots, scale));
  }
  return t;
}

float compute_scale(const DenseTensor& w, const QuantizerConfig& cfg) {
  if (w.data.empty()) throw ShapeError("compute_scale: empty tensor");
  double total = 0.0;
  for (float v : w.data) total += std::abs(static_cast<double>(v));
  return static_cast<float>(static_cast<double>(cfg.beta) * total / static_cast<double>(w.data.size()));
}

Trit round_clip(float x, Rounding rounding) {
  switch (rounding) {
    case Rounding::HalfAwayFromZero:
      // std::round breaks ties away from zero.
      return static_cast<Trit>(std::clamp(std::round(x), -1.0f, 1.0f));
  }
  throw ConfigError("round_clip: unknown rounding mode");
}

TernaryTensor ternarize_with_scale(const DenseTensor& w, float gamma, const QuantizerConfig& cfg) {
  cfg.validate();
  check_finite(w, "ternarize input");
  if (!(gamma >= 0.0f) || !std::isfinite(gamma)) throw NumericError("ternarize: invalid scale");
  const float denom = gamma + cfg.epsilon;
  std::vector<Trit> trits(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) trits[i] = round_clip(w.data[i] / denom, cfg.rounding);
  return TernaryTensor::from_trits(w.dims, trits, gamma);
}

TernaryTensor ternarize(const DenseTensor& w, const QuantizerConfig& cfg) {
  cfg.validate();
  check_finite(w, "ternarize input");
  return ternarize_with_scale(w, compute_scale(w, cfg), cfg);
}

DenseTensor dequantize(const TernaryTensor& t) {
  auto out = DenseTensor::zeros(t.dims);
  std::size_t pos = 0;
  for (const auto& block : t.blocks) {
    const auto u = unpack_block(block);
    for (std::size_t i = 0; i < kBlockWeights && pos < t.element_count; ++i) {
      out.data[pos++] = static_cast<float>(u.trits[i]) * u.scale;
    }
  }
  return out;
}

DenseTensor ste_backward(const DenseTensor& grad_wrt_ternary, const Dims& weight_dims) {
  if (grad_wrt_ternary.dims != weight_dims) {
    throw ShapeError("ste_backward: gradient " + dims_to_string(grad_wrt_ternary.dims) + " vs weight " +
                     dims_to_string(weight_dims));
  }
  return DenseTensor(grad_wrt_ternary.dims, grad_wrt_ternary.data);
}

void ste_accumulate(std::span<const float> grad_wrt_ternary, std::span<float> latent_grad) {
  if (grad_wrt_ternary.size() != latent_grad.size()) {
    throw ShapeError("ste_backward: gradient has " + std::to_string(grad_wrt_ternary.size()) + " values, weight has " +
                     std::to_string(latent_grad.size()));
  }
  for (std::size_t i = 0; i < latent_grad.size(); ++i) latent_grad[i] += grad_wrt_ternary[i];
}

std::size_t zero_count(const TernaryTensor& t) {
  const auto trits = t.trits();
  return static_cast<std::size_t>(std::count(trits.begin(), trits.end(), Trit{0}));
}

double sparsity(const TernaryTensor& t) {
  if (t.element_count == 0) return 0.0;
  return static_cast<double>(zero_count(t)) / static_cast<double>(t.element_count);
}

}  // namespace ternclip
