#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ternclip/model.hpp"
#include "ternclip/tensor.hpp"
#include "ternclip/ternary.hpp"

namespace ternclip {

// TNC1 container, little-endian throughout:
//
//   "TNC1" | version u32 | tensor_count u32 | metadata_len u32 | metadata (UTF-8 JSON)
//   tensor_count x { name_len u32 | name | dtype u8 | ndim u8 | dims u64[ndim]
//                    | data_offset u64 | data_length u64 }
//   zero padding, then each tensor's data at a 32-byte aligned offset.
//
// Packed ternary data is the concatenation of 54-byte blocks (52 trit bytes,
// then the binary16 scale).

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerAlignment = 32;

enum class DType : std::uint8_t { F32 = 0, F16 = 1, TernaryPacked = 2 };

std::string to_string(DType d);

/// Expected data_length of a record.
std::uint64_t data_length_for(DType dtype, std::size_t elements);

struct TensorRecord {
  std::string name;
  DType dtype{};
  Dims dims;
  std::uint64_t data_offset = 0;
  std::uint64_t data_length = 0;
};

struct ContainerEntry {
  std::string name;
  DType dtype{};
  Dims dims;
  std::vector<std::uint8_t> bytes;

  std::size_t elements() const { return element_count(dims); }
};

struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<ContainerEntry> entries;

  const ContainerEntry& entry(const std::string& name) const;
  bool has(const std::string& name) const;
};

ContainerEntry encode_f32(const std::string& name, const DenseTensor& t);
ContainerEntry encode_f16(const std::string& name, const DenseTensor& t);
ContainerEntry encode_ternary(const std::string& name, const TernaryTensor& t);

/// F32 and F16 entries; ternary entries are dequantized.
DenseTensor decode_dense(const ContainerEntry& e);
/// TernaryPacked entries only; validates the blocks.
TernaryTensor decode_ternary(const ContainerEntry& e);

std::vector<std::uint8_t> serialize(const Container& c);
/// Rejects bad magic, unknown version or dtype, truncation, misaligned or
/// overlapping regions and length mismatches with FormatError.
Container parse(std::span<const std::uint8_t> bytes);

/// Header and records without decoding payloads.
struct ContainerLayout {
  std::uint32_t version = 0;
  nlohmann::json metadata;
  std::vector<TensorRecord> records;
  std::uint64_t file_size = 0;
};
ContainerLayout parse_layout(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

/// Dense parameters as F32, parameters with frozen ternary weights as packed.
/// `extra` is stored under metadata["extra"].
Container model_to_container(const DualEncoderModel& model, const nlohmann::json& extra = nlohmann::json::object());
DualEncoderModel model_from_container(const Container& c);

void save_model(const DualEncoderModel& model, const std::filesystem::path& path,
                const nlohmann::json& extra = nlohmann::json::object());
DualEncoderModel load_model(const std::filesystem::path& path);

struct DTypeTotals {
  std::uint64_t tensors = 0;
  std::uint64_t elements = 0;
  std::uint64_t bytes = 0;
};

struct StorageReport {
  std::map<DType, DTypeTotals> by_dtype;
  std::uint64_t total_elements = 0;
  std::uint64_t data_bytes = 0;
  std::uint64_t file_bytes = 0;
  double bits_per_weight = 0.0;    // 8 * data_bytes / total_elements
  double compression_ratio = 0.0;  // 32 / bits_per_weight
};

StorageReport storage_report(const Container& c);
StorageReport storage_report(const std::filesystem::path& path);

}  // namespace ternclip
