#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "ternclip/data.hpp"
#include "ternclip/error.hpp"

namespace ternclip {
namespace {

SyntheticConfig small() {
  SyntheticConfig c;
  c.classes = 6;
  c.train_per_class = 20;
  c.test_per_class = 10;
  c.prompts_per_class = 3;
  return c;
}

void expect_split_shape(const Split& s, const SyntheticConfig& c, std::size_t per_class, bool images) {
  EXPECT_EQ(s.size, per_class * c.classes);
  EXPECT_EQ(s.labels.size(), s.size);
  EXPECT_EQ(s.tokens.size(), s.size * c.context_len);
  EXPECT_EQ(s.context_len, c.context_len);
  if (images) {
    EXPECT_EQ(s.patches.dims, (Dims{s.size * c.num_patches, c.patch_dim}));
  } else {
    EXPECT_TRUE(s.patches.data.empty());
  }
  std::vector<std::size_t> counts(c.classes, 0);
  for (auto l : s.labels) {
    ASSERT_LT(l, c.classes);
    ++counts[l];
  }
  for (auto n : counts) EXPECT_EQ(n, per_class);
  for (auto t : s.tokens) {
    EXPECT_GE(t, 0);
    EXPECT_LT(t, static_cast<std::int32_t>(c.vocab_size));
  }
}

TEST(Synthetic, ShapesAndLabels) {
  const auto c = small();
  const auto d = generate_synthetic(c);
  EXPECT_EQ(d.config, c);
  expect_split_shape(d.train, c, c.train_per_class, true);
  expect_split_shape(d.test, c, c.test_per_class, true);
  expect_split_shape(d.prompts, c, c.prompts_per_class, false);
  for (float v : d.train.patches.data) ASSERT_TRUE(std::isfinite(v));
}

TEST(Synthetic, SameSeedIsBitIdenticalAndSeedMatters) {
  const auto a = generate_synthetic(small());
  const auto b = generate_synthetic(small());
  EXPECT_EQ(a.train.patches.data, b.train.patches.data);
  EXPECT_EQ(a.train.tokens, b.train.tokens);
  EXPECT_EQ(a.prompts.tokens, b.prompts.tokens);
  auto other = small();
  other.seed = 8;
  EXPECT_NE(generate_synthetic(other).train.patches.data, a.train.patches.data);
}

// Nearest class centroid on raw patches must beat chance by a wide margin,
// otherwise there is nothing for an encoder to learn.
TEST(Synthetic, ClassesAreSeparableInPixelSpace) {
  const auto c = small();
  const auto d = generate_synthetic(c);
  const std::size_t per = c.num_patches * c.patch_dim;
  std::vector<std::vector<double>> centroid(c.classes, std::vector<double>(per, 0.0));
  for (std::size_t i = 0; i < d.train.size; ++i) {
    for (std::size_t j = 0; j < per; ++j) centroid[d.train.labels[i]][j] += d.train.patches.data[i * per + j];
  }
  for (auto& v : centroid) {
    for (auto& x : v) x /= static_cast<double>(c.train_per_class);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.test.size; ++i) {
    std::size_t best = 0;
    double best_dist = INFINITY;
    for (std::size_t k = 0; k < c.classes; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < per; ++j) {
        const double diff = d.test.patches.data[i * per + j] - centroid[k][j];
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    correct += best == d.test.labels[i];
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(d.test.size), 3.0 / static_cast<double>(c.classes));
}

TEST(Synthetic, GatherCopiesSelectedSamples) {
  const auto c = small();
  const auto d = generate_synthetic(c);
  const std::vector<std::size_t> idx{5, 0, 5};
  const auto b = d.train.gather(idx);
  EXPECT_EQ(b.size, 3u);
  EXPECT_EQ(b.labels, (std::vector<std::size_t>{d.train.labels[5], d.train.labels[0], d.train.labels[5]}));
  const std::size_t per = c.num_patches * c.patch_dim;
  for (std::size_t j = 0; j < per; ++j) {
    ASSERT_EQ(b.patches.data[j], d.train.patches.data[5 * per + j]);
    ASSERT_EQ(b.patches.data[per + j], d.train.patches.data[j]);
  }
  for (std::size_t j = 0; j < c.context_len; ++j) EXPECT_EQ(b.tokens[2 * c.context_len + j], d.train.tokens[5 * c.context_len + j]);
  const std::vector<std::size_t> bad{d.train.size};
  EXPECT_THROW(d.train.gather(bad), ShapeError);
}

TEST(Synthetic, SaveLoadRoundTrip) {
  const auto d = generate_synthetic(small());
  const auto path = std::filesystem::temp_directory_path() / "ternclip_data_roundtrip.tnc";
  save_dataset(d, path);
  const auto back = load_dataset(path);
  EXPECT_EQ(back.config, d.config);
  for (auto [a, b] : {std::pair{&d.train, &back.train}, {&d.test, &back.test}, {&d.prompts, &back.prompts}}) {
    EXPECT_EQ(a->patches.data, b->patches.data);
    EXPECT_EQ(a->tokens, b->tokens);
    EXPECT_EQ(a->labels, b->labels);
    EXPECT_EQ(a->size, b->size);
  }
  std::filesystem::remove(path);
}

TEST(Synthetic, ConfigValidation) {
  auto c = small();
  c.classes = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.patch_noise = -1.0f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.token_flip_prob = 1.5f;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
}

TEST(Synthetic, CompatibilityWithEncoder) {
  auto c = small();
  c.train_per_class = 1;
  c.test_per_class = 1;
  c.prompts_per_class = 1;
  const auto d = generate_synthetic(c);
  EXPECT_NO_THROW(check_compatible(d, EncoderConfig{}));
  EncoderConfig e;
  e.vocab_size = 100;
  EXPECT_THROW(check_compatible(d, e), ConfigError);
  e = EncoderConfig{};
  e.patch_dim = 12;
  EXPECT_THROW(check_compatible(d, e), ConfigError);
}

}  // namespace
}  // namespace ternclip
