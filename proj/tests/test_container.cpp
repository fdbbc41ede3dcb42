#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <vector>

#include "support.hpp"
#include "ternclip/container.hpp"
#include "ternclip/error.hpp"
#include "ternclip/half.hpp"

namespace ternclip {
namespace {

using Bytes = std::vector<std::uint8_t>;

std::uint32_t read_u32(const Bytes& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

void write_u64(Bytes& b, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t read_u64(const Bytes& b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[at + i];
  return v;
}

// Byte positions of each record's fields, found by walking the header by hand.
struct RecordAt {
  std::size_t dtype, offset, length;
};

std::vector<RecordAt> walk_records(const Bytes& b) {
  std::vector<RecordAt> out;
  const std::uint32_t count = read_u32(b, 8);
  std::size_t at = 16 + read_u32(b, 12);
  for (std::uint32_t i = 0; i < count; ++i) {
    at += 4 + read_u32(b, at);
    RecordAt r;
    r.dtype = at;
    const std::size_t ndim = b[at + 1];
    at += 2 + 8 * ndim;
    r.offset = at;
    r.length = at + 8;
    at += 16;
    out.push_back(r);
  }
  return out;
}

Container sample_container() {
  std::mt19937_64 rng(3);
  Container c;
  c.metadata["note"] = "sample";
  c.entries.push_back(encode_f32("dense", testing::randn({3, 5}, rng)));
  c.entries.push_back(encode_f16("half", testing::randn({7}, rng)));
  c.entries.push_back(encode_ternary("packed", ternarize(testing::randn({10, 30}, rng), QuantizerConfig{})));
  return c;
}

DualEncoderModel finalized_qall() {
  auto m = DualEncoderModel::create(EncoderConfig{}, 9);
  m.plan.mode = QuantMode::QALL;
  freeze_ternary(m);
  return m;
}

TEST(Container, HeaderLayout) {
  const auto bytes = serialize(sample_container());
  EXPECT_EQ(std::memcmp(bytes.data(), "TNC1", 4), 0);
  EXPECT_EQ(read_u32(bytes, 4), 1u);
  EXPECT_EQ(read_u32(bytes, 8), 3u);
  const auto recs = walk_records(bytes);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(bytes[recs[0].dtype], 0);
  EXPECT_EQ(bytes[recs[1].dtype], 1);
  EXPECT_EQ(bytes[recs[2].dtype], 2);
  for (const auto& r : recs) EXPECT_EQ(read_u64(bytes, r.offset) % 32, 0u);
  EXPECT_EQ(read_u64(bytes, recs[0].length), 60u);
  EXPECT_EQ(read_u64(bytes, recs[1].length), 14u);
  EXPECT_EQ(read_u64(bytes, recs[2].length), 108u);
}

TEST(Container, EveryDtypeRoundTripsBitExactly) {
  std::mt19937_64 rng(4);
  const auto dense = testing::randn({4, 6}, rng);
  const auto half_src = testing::randn({9}, rng);
  const auto tern = ternarize(testing::randn({3, 100}, rng), QuantizerConfig{});
  Container c;
  c.entries.push_back(encode_f32("a", dense));
  c.entries.push_back(encode_f16("b", half_src));
  c.entries.push_back(encode_ternary("c", tern));
  const auto back = parse(serialize(c));
  EXPECT_EQ(decode_dense(back.entry("a")).data, dense.data);
  const auto h = decode_dense(back.entry("b"));
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_EQ(h.data[i], round_to_half(half_src.data[i]));
  EXPECT_EQ(decode_ternary(back.entry("c")), tern);
  EXPECT_EQ(back.entry("c").dims, (Dims{3, 100}));
}

TEST(Container, ModelRoundTripAndDoubleSaveAreIdentical) {
  const auto m = finalized_qall();
  const auto dir = std::filesystem::temp_directory_path();
  const auto p1 = dir / "ternclip_container_a.tnc", p2 = dir / "ternclip_container_b.tnc";
  save_model(m, p1);
  save_model(m, p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
  EXPECT_FALSE(std::filesystem::exists(dir / "ternclip_container_a.tnc.tmp"));

  const auto back = load_model(p1);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.plan, m.plan);
  EXPECT_EQ(back.tau, m.tau);
  ASSERT_EQ(back.params.size(), m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& a = m.params[i];
    const auto& b = back.params[i];
    EXPECT_EQ(a.name, b.name);
    if (a.frozen) {
      ASSERT_TRUE(b.frozen);
      EXPECT_EQ(*a.frozen, *b.frozen);
    } else {
      EXPECT_EQ(a.value.data, b.value.data);
    }
  }
  save_model(back, p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Container, RejectsBadMagicAndVersion) {
  auto bytes = serialize(sample_container());
  auto bad = bytes;
  std::memcpy(bad.data(), "XXXX", 4);
  EXPECT_THROW(parse(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(parse(bad), FormatError);
}

TEST(Container, RejectsTruncation) {
  const auto bytes = serialize(sample_container());
  const auto last = walk_records(bytes).back();
  const std::size_t data_end = read_u64(bytes, last.offset) + read_u64(bytes, last.length);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{15}, std::size_t{40}, bytes.size() / 2,
                          data_end - 1}) {
    const Bytes part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(parse(part), FormatError) << "cut at " << cut;
  }
}

TEST(Container, RejectsMisalignedAndOverlappingRegions) {
  const auto bytes = serialize(sample_container());
  const auto recs = walk_records(bytes);
  auto bad = bytes;
  write_u64(bad, recs[1].offset, read_u64(bytes, recs[1].offset) + 4);
  EXPECT_THROW(parse(bad), FormatError);
  bad = bytes;
  write_u64(bad, recs[1].offset, read_u64(bytes, recs[0].offset));
  EXPECT_THROW(parse(bad), FormatError);
  bad = bytes;
  write_u64(bad, recs[0].offset, 0);
  EXPECT_THROW(parse(bad), FormatError);
  bad = bytes;
  write_u64(bad, recs[2].length, 109);
  EXPECT_THROW(parse(bad), FormatError);
}

TEST(Container, RejectsUnknownDtypeAndCorruptPayload) {
  const auto bytes = serialize(sample_container());
  const auto recs = walk_records(bytes);
  auto bad = bytes;
  bad[recs[0].dtype] = 7;
  try {
    parse(bad);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  bad = bytes;
  bad[read_u64(bytes, recs[2].offset) + 3] = 250;
  const auto c = parse(bad);
  EXPECT_THROW(decode_ternary(c.entry("packed")), FormatError);
}

TEST(Container, DataLengthFormula) {
  EXPECT_EQ(data_length_for(DType::TernaryPacked, 300), 108u);
  EXPECT_EQ(data_length_for(DType::TernaryPacked, 256), 54u);
  EXPECT_EQ(data_length_for(DType::F16, 300), 600u);
  EXPECT_EQ(data_length_for(DType::F32, 300), 1200u);
  std::mt19937_64 rng(1);
  const auto e = encode_ternary("t", ternarize(testing::randn({300}, rng), QuantizerConfig{}));
  EXPECT_EQ(e.bytes.size(), 108u);
}

TEST(StorageReport, Examples) {
  std::mt19937_64 rng(2);
  Container packed;
  packed.entries.push_back(encode_ternary("t", ternarize(testing::randn({256}, rng), QuantizerConfig{})));
  const auto r = storage_report(packed);
  EXPECT_EQ(r.data_bytes, 54u);
  EXPECT_EQ(r.bits_per_weight, 1.6875);
  EXPECT_EQ(r.compression_ratio, 32.0 / 1.6875);

  Container half;
  half.entries.push_back(encode_f16("a", testing::randn({10, 10}, rng)));
  half.entries.push_back(encode_f16("b", testing::randn({33}, rng)));
  const auto h = storage_report(half);
  EXPECT_EQ(h.bits_per_weight, 16.0);
  EXPECT_EQ(h.compression_ratio, 2.0);
  EXPECT_EQ(h.by_dtype.at(DType::F16).tensors, 2u);
}

TEST(StorageReport, ToyQallModelCompressesTenfold) {
  const auto c = model_to_container(finalized_qall());
  const auto r = storage_report(c);
  EXPECT_GE(r.compression_ratio, 10.0);
  EXPECT_EQ(r.file_bytes, serialize(c).size());
  EXPECT_GT(r.by_dtype.at(DType::TernaryPacked).elements, r.by_dtype.at(DType::F32).elements);
}

TEST(ModelContainer, RejectsMismatchedContents) {
  auto c = model_to_container(finalized_qall());
  auto wrong = c;
  wrong.metadata["format"] = "something-else";
  EXPECT_THROW(model_from_container(wrong), FormatError);
  wrong = c;
  wrong.entries.pop_back();
  EXPECT_THROW(model_from_container(wrong), FormatError);
  wrong = c;
  wrong.metadata["plan"]["mode"] = "none";
  EXPECT_THROW(model_from_container(wrong), FormatError);
  EXPECT_THROW(read_file("/nonexistent/ternclip/file.tnc"), FormatError);
}

}  // namespace
}  // namespace ternclip
