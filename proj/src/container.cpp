#include "ternclip/container.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ternclip/config_json.hpp"
#include "ternclip/error.hpp"
#include "ternclip/half.hpp"

namespace ternclip {
namespace {

constexpr char kMagic[4] = {'T', 'N', 'C', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void pad_to(std::size_t size) { out_.resize(std::max(out_.size(), size), 0); }
  std::size_t size() const { return out_.size(); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (n > in_.size() - pos_) {
      throw FormatError(std::string("truncated container while reading ") + what + " at offset " +
                        std::to_string(pos_));
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    auto s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t align_up(std::size_t v) { return (v + kContainerAlignment - 1) / kContainerAlignment * kContainerAlignment; }

DType parse_dtype(std::uint8_t v) {
  if (v > 2) {
    throw FormatError("unsupported dtype " + std::to_string(v) + " in container version " +
                      std::to_string(kContainerVersion));
  }
  return static_cast<DType>(v);
}

}  // namespace

std::string to_string(DType d) {
  switch (d) {
    case DType::F32:
      return "f32";
    case DType::F16:
      return "f16";
    case DType::TernaryPacked:
      return "ternary_packed";
  }
  return "unknown";
}

std::uint64_t data_length_for(DType dtype, std::size_t elements) {
  switch (dtype) {
    case DType::F32:
      return elements * 4;
    case DType::F16:
      return elements * 2;
    case DType::TernaryPacked:
      return packed_byte_size(elements);
  }
  throw FormatError("unknown dtype");
}

const ContainerEntry& Container::entry(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw FormatError("container has no tensor '" + name + "'");
}

bool Container::has(const std::string& name) const {
  return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
}

ContainerEntry encode_f32(const std::string& name, const DenseTensor& t) {
  ContainerEntry e{name, DType::F32, t.dims, {}};
  e.bytes.reserve(t.size() * 4);
  for (float v : t.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) e.bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return e;
}

ContainerEntry encode_f16(const std::string& name, const DenseTensor& t) {
  ContainerEntry e{name, DType::F16, t.dims, {}};
  e.bytes.reserve(t.size() * 2);
  for (float v : t.data) {
    const auto h = float_to_half(v);
    e.bytes.push_back(static_cast<std::uint8_t>(h & 0xff));
    e.bytes.push_back(static_cast<std::uint8_t>(h >> 8));
  }
  return e;
}

ContainerEntry encode_ternary(const std::string& name, const TernaryTensor& t) {
  ContainerEntry e{name, DType::TernaryPacked, t.dims, {}};
  e.bytes.reserve(t.byte_size());
  for (const auto& b : t.blocks) {
    e.bytes.insert(e.bytes.end(), b.trit_bytes.begin(), b.trit_bytes.end());
    e.bytes.push_back(static_cast<std::uint8_t>(b.scale & 0xff));
    e.bytes.push_back(static_cast<std::uint8_t>(b.scale >> 8));
  }
  return e;
}

TernaryTensor decode_ternary(const ContainerEntry& e) {
  if (e.dtype != DType::TernaryPacked) throw FormatError("tensor '" + e.name + "' is not ternary packed");
  TernaryTensor t;
  t.dims = e.dims;
  t.element_count = e.elements();
  if (e.bytes.size() != packed_byte_size(t.element_count)) {
    throw FormatError("tensor '" + e.name + "': packed length " + std::to_string(e.bytes.size()) + " != " +
                      std::to_string(packed_byte_size(t.element_count)));
  }
  const std::size_t nblocks = e.bytes.size() / kBlockBytes;
  t.blocks.resize(nblocks);
  for (std::size_t b = 0; b < nblocks; ++b) {
    const auto* src = e.bytes.data() + b * kBlockBytes;
    std::copy_n(src, kTritBytes, t.blocks[b].trit_bytes.begin());
    t.blocks[b].scale = static_cast<std::uint16_t>(src[kTritBytes] | (src[kTritBytes + 1] << 8));
  }
  t.scale_mode = std::all_of(t.blocks.begin(), t.blocks.end(),
                             [&](const PackedBlock& b) { return b.scale == t.blocks.front().scale; })
                     ? ScaleMode::PerTensor
                     : ScaleMode::PerBlock;
  try {
    t.validate();
  } catch (const FormatError& err) {
    throw FormatError("tensor '" + e.name + "': " + err.what());
  }
  return t;
}

DenseTensor decode_dense(const ContainerEntry& e) {
  const std::size_t n = e.elements();
  if (e.bytes.size() != data_length_for(e.dtype, n)) {
    throw FormatError("tensor '" + e.name + "': data length does not match dims");
  }
  if (e.dtype == DType::TernaryPacked) return dequantize(decode_ternary(e));
  auto t = DenseTensor::zeros(e.dims);
  for (std::size_t i = 0; i < n; ++i) {
    if (e.dtype == DType::F32) {
      std::uint32_t bits = 0;
      for (int j = 0; j < 4; ++j) bits |= static_cast<std::uint32_t>(e.bytes[i * 4 + j]) << (8 * j);
      std::memcpy(&t.data[i], &bits, 4);
    } else {
      t.data[i] = half_to_float(static_cast<std::uint16_t>(e.bytes[i * 2] | (e.bytes[i * 2 + 1] << 8)));
    }
  }
  return t;
}

std::vector<std::uint8_t> serialize(const Container& c) {
  const std::string meta = c.metadata.dump();
  // Header size first, so data offsets are known when records are written.
  std::size_t header = 16 + meta.size();
  for (const auto& e : c.entries) header += 4 + e.name.size() + 2 + 8 * e.dims.size() + 16;

  std::vector<std::uint64_t> offsets;
  std::size_t cursor = align_up(header);
  for (const auto& e : c.entries) {
    if (e.dims.empty() || e.dims.size() > 255) throw FormatError("tensor '" + e.name + "': rank must be 1..255");
    if (e.bytes.size() != data_length_for(e.dtype, e.elements())) {
      throw FormatError("tensor '" + e.name + "': payload length does not match dtype and dims");
    }
    offsets.push_back(cursor);
    cursor = align_up(cursor + e.bytes.size());
  }

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(c.entries.size()));
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    const auto& e = c.entries[i];
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u8(static_cast<std::uint8_t>(e.dims.size()));
    for (auto d : e.dims) w.u64(d);
    w.u64(offsets[i]);
    w.u64(e.bytes.size());
  }
  for (std::size_t i = 0; i < c.entries.size(); ++i) {
    w.pad_to(offsets[i]);
    w.bytes(c.entries[i].bytes.data(), c.entries[i].bytes.size());
  }
  if (!c.entries.empty()) w.pad_to(align_up(w.size()));
  return w.take();
}

ContainerLayout parse_layout(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad magic: not a TNC1 container");
  ContainerLayout layout;
  layout.file_size = bytes.size();
  layout.version = r.u32("version");
  if (layout.version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(layout.version));
  }
  const auto count = r.u32("tensor count");
  const auto meta_len = r.u32("metadata length");
  const auto meta = r.take(meta_len, "metadata");
  try {
    layout.metadata = nlohmann::json::parse(meta.begin(), meta.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what());
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const auto name_len = r.u32("name length");
    const auto name = r.take(name_len, "name");
    rec.name.assign(name.begin(), name.end());
    rec.dtype = parse_dtype(r.u8("dtype"));
    const auto ndim = r.u8("ndim");
    if (ndim == 0) throw FormatError("tensor '" + rec.name + "' has rank 0");
    for (std::uint8_t d = 0; d < ndim; ++d) {
      rec.dims.push_back(r.u64("dims"));
      if (rec.dims.back() == 0) throw FormatError("tensor '" + rec.name + "' has a zero dimension");
    }
    rec.data_offset = r.u64("data offset");
    rec.data_length = r.u64("data length");
    layout.records.push_back(std::move(rec));
  }
  const std::uint64_t header_end = r.pos();

  std::vector<const TensorRecord*> sorted;
  for (const auto& rec : layout.records) {
    if (rec.data_offset % kContainerAlignment != 0) {
      throw FormatError("tensor '" + rec.name + "': misaligned data offset " + std::to_string(rec.data_offset));
    }
    if (rec.data_offset < header_end) throw FormatError("tensor '" + rec.name + "': data overlaps the header");
    if (rec.data_length > layout.file_size || rec.data_offset > layout.file_size - rec.data_length) {
      throw FormatError("truncated container: tensor '" + rec.name + "' extends past end of file");
    }
    if (rec.data_length != data_length_for(rec.dtype, element_count(rec.dims))) {
      throw FormatError("tensor '" + rec.name + "': data length " + std::to_string(rec.data_length) +
                        " does not match " + to_string(rec.dtype) + " " + dims_to_string(rec.dims));
    }
    sorted.push_back(&rec);
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const TensorRecord* a, const TensorRecord* b) { return a->data_offset < b->data_offset; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1]->data_offset + sorted[i - 1]->data_length > sorted[i]->data_offset) {
      throw FormatError("tensors '" + sorted[i - 1]->name + "' and '" + sorted[i]->name + "' overlap");
    }
  }
  return layout;
}

Container parse(std::span<const std::uint8_t> bytes) {
  auto layout = parse_layout(bytes);
  Container c;
  c.metadata = std::move(layout.metadata);
  for (auto& rec : layout.records) {
    ContainerEntry e{rec.name, rec.dtype, rec.dims, {}};
    const auto data = bytes.subspan(rec.data_offset, rec.data_length);
    e.bytes.assign(data.begin(), data.end());
    c.entries.push_back(std::move(e));
  }
  return c;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_container(const std::filesystem::path& path, const Container& c) { write_file_atomic(path, serialize(c)); }

Container read_container(const std::filesystem::path& path) { return parse(read_file(path)); }

Container model_to_container(const DualEncoderModel& model, const nlohmann::json& extra) {
  Container c;
  c.metadata["format"] = "ternclip-model";
  c.metadata["encoder"] = model.config;
  c.metadata["tau"] = model.tau;
  c.metadata["plan"] = model.plan;
  c.metadata["quantizer"] = model.quantizer;
  c.metadata["extra"] = extra;
  for (const auto& p : model.params) {
    c.entries.push_back(p.frozen ? encode_ternary(p.name, *p.frozen) : encode_f32(p.name, p.value));
  }
  return c;
}

DualEncoderModel model_from_container(const Container& c) {
  if (c.metadata.value("format", "") != "ternclip-model") throw FormatError("container does not hold a model");
  DualEncoderModel model;
  try {
    const auto config = c.metadata.at("encoder").get<EncoderConfig>();
    model = DualEncoderModel::create(config, 0, c.metadata.at("tau").get<float>());
    model.plan = c.metadata.at("plan").get<QuantPlan>();
    model.quantizer = c.metadata.at("quantizer").get<QuantizerConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model metadata: ") + e.what());
  }
  if (c.entries.size() != model.params.size()) {
    throw FormatError("model container has " + std::to_string(c.entries.size()) + " tensors, expected " +
                      std::to_string(model.params.size()));
  }
  for (auto& p : model.params) {
    const auto& e = c.entry(p.name);
    if (e.dims != p.value.dims) {
      throw FormatError("tensor '" + p.name + "' has dims " + dims_to_string(e.dims) + ", expected " +
                        dims_to_string(p.value.dims));
    }
    if (e.dtype == DType::TernaryPacked) {
      if (!model.is_ternary(p)) throw FormatError("tensor '" + p.name + "' is packed but the plan keeps it dense");
      auto t = std::make_shared<const TernaryTensor>(decode_ternary(e));
      p.value = dequantize(*t);
      p.frozen = std::move(t);
    } else {
      p.value = decode_dense(e);
      p.frozen.reset();
    }
  }
  return model;
}

void save_model(const DualEncoderModel& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  write_container(path, model_to_container(model, extra));
}

DualEncoderModel load_model(const std::filesystem::path& path) { return model_from_container(read_container(path)); }

StorageReport storage_report(const Container& c) {
  StorageReport r;
  for (const auto& e : c.entries) {
    auto& t = r.by_dtype[e.dtype];
    t.tensors += 1;
    t.elements += e.elements();
    t.bytes += e.bytes.size();
    r.total_elements += e.elements();
    r.data_bytes += e.bytes.size();
  }
  r.file_bytes = serialize(c).size();
  if (r.total_elements > 0) {
    r.bits_per_weight = 8.0 * static_cast<double>(r.data_bytes) / static_cast<double>(r.total_elements);
    r.compression_ratio = 32.0 / r.bits_per_weight;
  }
  return r;
}

StorageReport storage_report(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  auto r = storage_report(parse(bytes));
  r.file_bytes = bytes.size();
  return r;
}

}  // namespace ternclip
