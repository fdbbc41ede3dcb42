#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "support.hpp"
#include "ternclip/error.hpp"
#include "ternclip/eval.hpp"
#include "ternclip/ternary.hpp"

namespace ternclip {
namespace {

// Rank of column c in row r counted by pairwise comparison; ties go to the lower index.
std::size_t pairwise_rank(const DenseTensor& s, std::size_t r, std::size_t c, bool by_column = false) {
  std::size_t rank = 1;
  const std::size_t n = by_column ? s.rows() : s.cols();
  for (std::size_t j = 0; j < n; ++j) {
    const float other = by_column ? s.at(j, c) : s.at(r, j);
    const float self = s.at(r, c);
    const std::size_t self_idx = by_column ? r : c;
    if (other > self || (other == self && j < self_idx)) ++rank;
  }
  return rank;
}

double ap_oracle(const DenseTensor& s, const std::vector<std::uint8_t>& rel, std::size_t c) {
  const std::size_t n = s.rows(), classes = s.cols();
  std::vector<std::size_t> pos_ranks;
  for (std::size_t i = 0; i < n; ++i) {
    if (rel[i * classes + c]) pos_ranks.push_back(pairwise_rank(s, i, c, true));
  }
  double ap = 0.0;
  for (auto ri : pos_ranks) {
    const auto above = std::count_if(pos_ranks.begin(), pos_ranks.end(), [&](std::size_t rj) { return rj <= ri; });
    ap += static_cast<double>(above) / static_cast<double>(ri);
  }
  return ap / static_cast<double>(pos_ranks.size());
}

TEST(Accuracy, PrototypesClassifyThemselves) {
  std::mt19937_64 rng(1);
  const auto protos = testing::unit_rows(7, 12, rng);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 4, 5, 6};
  const auto r = accuracy_at_1(protos, protos, labels);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.support, 7u);
  EXPECT_EQ(r.metric, "accuracy@1");
}

TEST(Accuracy, TiesResolveToLowestClass) {
  const auto s = DenseTensor::matrix({{0.5f, 0.5f, 0.1f}, {0.2f, 0.7f, 0.7f}});
  const std::vector<std::size_t> labels{0, 1};
  EXPECT_EQ(accuracy_from_scores(s, labels).value, 1.0);
  const std::vector<std::size_t> other{1, 2};
  EXPECT_EQ(accuracy_from_scores(s, other).value, 0.0);
}

TEST(Accuracy, MatchesLoopOracle) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> lab(0, 5);
  const auto img = testing::unit_rows(20, 9, rng);
  const auto cls = testing::unit_rows(6, 9, rng);
  std::vector<std::size_t> labels(20);
  for (auto& l : labels) l = lab(rng);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    std::size_t best = 0;
    double best_s = -INFINITY;
    for (std::size_t c = 0; c < 6; ++c) {
      double dot = 0.0;
      for (std::size_t d = 0; d < 9; ++d) dot += static_cast<double>(img.at(i, d)) * cls.at(c, d);
      if (dot > best_s) {
        best_s = dot;
        best = c;
      }
    }
    hits += best == labels[i];
  }
  EXPECT_DOUBLE_EQ(accuracy_at_1(img, cls, labels).value, static_cast<double>(hits) / 20.0);
}

TEST(Accuracy, RejectsBadInputs) {
  std::mt19937_64 rng(3);
  const auto a = testing::unit_rows(2, 4, rng);
  EXPECT_THROW(accuracy_at_1(a, testing::unit_rows(2, 5, rng), std::vector<std::size_t>{0, 1}), ShapeError);
  EXPECT_THROW(accuracy_at_1(a, a, std::vector<std::size_t>{0}), ShapeError);
  EXPECT_THROW(accuracy_at_1(a, a, std::vector<std::size_t>{0, 2}), FormatError);
  auto scaled = a;
  for (auto& v : scaled.data) v *= 2.0f;
  EXPECT_THROW(accuracy_at_1(scaled, a, std::vector<std::size_t>{0, 1}), NumericError);
}

TEST(MeanAveragePrecision, WorkedExamples) {
  // Positive ranked first: AP 1.
  const auto s1 = DenseTensor::matrix({{0.9f}, {0.1f}});
  EXPECT_EQ(mean_average_precision(s1, std::vector<std::uint8_t>{1, 0}).value, 1.0);
  // Positive ranked second: AP 1/2.
  EXPECT_EQ(mean_average_precision(s1, std::vector<std::uint8_t>{0, 1}).value, 0.5);
}

TEST(MeanAveragePrecision, ClassesWithoutPositivesAreExcluded) {
  const auto s = DenseTensor::matrix({{0.9f, 0.2f}, {0.1f, 0.8f}});
  const auto r = mean_average_precision(s, std::vector<std::uint8_t>{1, 0, 0, 0});
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.support, 1u);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_THROW(mean_average_precision(s, std::vector<std::uint8_t>(4, 0)), ShapeError);
}

TEST(MeanAveragePrecision, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.3);
  std::uniform_int_distribution<int> coarse(0, 3);
  for (int trial = 0; trial < 50; ++trial) {
    // Coarse scores force ties.
    DenseTensor s = DenseTensor::zeros({10, 5});
    for (auto& v : s.data) v = static_cast<float>(coarse(rng)) * 0.25f;
    std::vector<std::uint8_t> rel(50);
    for (auto& r : rel) r = coin(rng);
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      bool any = false;
      for (std::size_t i = 0; i < 10; ++i) any = any || rel[i * 5 + c];
      if (!any) continue;
      sum += ap_oracle(s, rel, c);
      ++used;
    }
    if (used == 0) continue;
    const auto r = mean_average_precision(s, rel);
    EXPECT_NEAR(r.value, sum / static_cast<double>(used), 1e-12);
    EXPECT_GE(r.value, 0.0);
    EXPECT_LE(r.value, 1.0);
  }
}

TEST(Recall, WorkedExamples) {
  const auto s = DenseTensor::matrix({{0.9f, 0.1f, 0.3f}, {0.2f, 0.1f, 0.4f}});
  const std::vector<std::vector<std::size_t>> rel{{0}, {1}};
  EXPECT_EQ(recall_from_scores(s, rel, 1).value, 0.5);
  EXPECT_EQ(recall_from_scores(s, rel, 2).value, 0.5);
  EXPECT_EQ(recall_from_scores(s, rel, 3).value, 1.0);
  EXPECT_EQ(recall_from_scores(s, rel, 1).metric, "recall@1");
  EXPECT_THROW(recall_from_scores(s, rel, 4), ConfigError);
  EXPECT_THROW(recall_from_scores(s, rel, 0), ConfigError);
}

TEST(Recall, MatchesExhaustiveOracleAndIsMonotoneInK) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> pick(0, 11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto q = testing::unit_rows(8, 6, rng);
    const auto g = testing::unit_rows(12, 6, rng);
    std::vector<std::vector<std::size_t>> rel(8);
    for (auto& r : rel) r = {pick(rng), pick(rng)};
    double prev = 0.0;
    for (std::size_t k = 1; k <= 12; ++k) {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < 8; ++i) {
        std::vector<std::pair<double, std::size_t>> ranked;
        for (std::size_t j = 0; j < 12; ++j) {
          float dot = 0.0f;
          for (std::size_t d = 0; d < 6; ++d) dot += q.at(i, d) * g.at(j, d);
          ranked.push_back({-static_cast<double>(dot), j});
        }
        std::sort(ranked.begin(), ranked.end());
        bool hit = false;
        for (std::size_t t = 0; t < k; ++t) hit = hit || std::count(rel[i].begin(), rel[i].end(), ranked[t].second);
        hits += hit;
      }
      const double value = recall_at_k(q, g, rel, k).value;
      EXPECT_NEAR(value, static_cast<double>(hits) / 8.0, 1e-12) << "k=" << k;
      EXPECT_GE(value, prev);
      prev = value;
    }
    EXPECT_EQ(prev, 1.0);
  }
}

TEST(Metrics, InvariantToPositiveRescalingOfScores) {
  std::mt19937_64 rng(7);
  const auto s = testing::randn({9, 4}, rng);
  auto scaled = s;
  for (auto& v : scaled.data) v = v * 3.0f + 0.5f;
  std::vector<std::size_t> labels(9);
  std::vector<std::uint8_t> rel(36, 0);
  std::vector<std::vector<std::size_t>> relevant(9);
  for (std::size_t i = 0; i < 9; ++i) {
    labels[i] = i % 4;
    rel[i * 4 + labels[i]] = 1;
    relevant[i] = {labels[i]};
  }
  EXPECT_EQ(accuracy_from_scores(s, labels).value, accuracy_from_scores(scaled, labels).value);
  EXPECT_EQ(mean_average_precision(s, rel).value, mean_average_precision(scaled, rel).value);
  EXPECT_EQ(recall_from_scores(s, relevant, 2).value, recall_from_scores(scaled, relevant, 2).value);
}

TEST(Prototypes, MeanThenRenormalise) {
  const auto p = DenseTensor::matrix({{1, 0}, {0, 1}, {0, -1}, {0, -1}});
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const auto protos = class_prototypes(p, labels, 2);
  const float r = 1.0f / std::sqrt(2.0f);
  EXPECT_NEAR(protos.at(0, 0), r, 1e-7);
  EXPECT_NEAR(protos.at(0, 1), r, 1e-7);
  EXPECT_EQ(protos.at(1, 1), -1.0f);
  EXPECT_THROW(class_prototypes(p, labels, 3), FormatError);
}

SyntheticConfig tiny_data() {
  SyntheticConfig c;
  c.classes = 5;
  c.train_per_class = 2;
  c.test_per_class = 6;
  c.prompts_per_class = 2;
  return c;
}

TEST(Evaluate, TasksAndFormats) {
  const auto data = generate_synthetic(tiny_data());
  auto m = DualEncoderModel::create(EncoderConfig{}, 3);
  const auto cls = evaluate(m, data, EvalTask::Classification, "toy");
  ASSERT_EQ(cls.size(), 1u);
  EXPECT_EQ(cls[0].result.support, 30u);
  EXPECT_GE(cls[0].result.value, 0.0);
  EXPECT_LE(cls[0].result.value, 1.0);
  const auto map = evaluate(m, data, EvalTask::MeanAveragePrecision, "toy");
  EXPECT_EQ(map[0].result.metric, "mAP");
  EXPECT_EQ(map[0].result.support, 5u);
  const auto ret = evaluate(m, data, EvalTask::Retrieval, "toy");
  ASSERT_EQ(ret.size(), 2u);
  EXPECT_EQ(ret[0].result.metric, "image_to_text_recall@5");
  EXPECT_EQ(ret[1].result.metric, "text_to_image_recall@5");

  const auto csv = eval_csv(cls);
  EXPECT_EQ(csv.rfind("dataset,metric,value,support\ntoy,accuracy@1,", 0), 0u);
  EXPECT_NE(eval_text(ret).find("text_to_image_recall@5"), std::string::npos);
  EXPECT_EQ(parse_eval_task("map"), EvalTask::MeanAveragePrecision);
  EXPECT_THROW(parse_eval_task("top5"), ConfigError);
}

// A finalized ternary model and a dense model holding its dequantized
// weights compute the same function, so their metrics agree.
TEST(Evaluate, DequantizedCopyGivesTheSameMetrics) {
  const auto data = generate_synthetic(tiny_data());
  auto q = DualEncoderModel::create(EncoderConfig{}, 4);
  q.plan.mode = QuantMode::QALL;
  freeze_ternary(q);
  auto d = DualEncoderModel::create(EncoderConfig{}, 4);
  for (std::size_t i = 0; i < q.params.size(); ++i) {
    if (q.params[i].frozen) d.params[i].value.data = dequantize(*q.params[i].frozen).data;
  }
  const auto eq = embed_images(q, data.test.patches, data.test.size);
  const auto ed = embed_images(d, data.test.patches, data.test.size);
  for (std::size_t i = 0; i < eq.size(); ++i) ASSERT_NEAR(eq.data[i], ed.data[i], 1e-4);
  for (auto task : {EvalTask::Classification, EvalTask::MeanAveragePrecision, EvalTask::Retrieval}) {
    const auto a = evaluate(q, data, task), b = evaluate(d, data, task);
    for (std::size_t r = 0; r < a.size(); ++r) EXPECT_EQ(a[r].result.value, b[r].result.value) << to_string(task);
  }
}

}  // namespace
}  // namespace ternclip
