#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <vector>

#include "ternclip/container.hpp"
#include "ternclip/data.hpp"
#include "ternclip/error.hpp"
#include "ternclip/trainer.hpp"

namespace ternclip {
namespace {

EncoderConfig small_encoder() {
  EncoderConfig c;
  c.layers = 1;
  c.width = 16;
  c.heads = 2;
  c.ffn_mult = 2;
  c.vocab_size = 32;
  c.context_len = 4;
  c.num_patches = 4;
  c.patch_dim = 6;
  c.embed_dim = 8;
  return c;
}

Dataset small_dataset() {
  SyntheticConfig s;
  s.classes = 4;
  s.train_per_class = 8;
  s.test_per_class = 2;
  s.prompts_per_class = 2;
  s.latent_dim = 4;
  s.num_patches = 4;
  s.patch_dim = 6;
  s.vocab_size = 32;
  s.context_len = 4;
  return generate_synthetic(s);
}

std::vector<std::size_t> first_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ternclip_trainer_" + name);
}

TEST(Schedule, Endpoints) {
  TrainConfig cfg;
  cfg.lr = 1e-3f;
  cfg.warmup_steps = 100;
  const std::size_t total = 1000;
  EXPECT_EQ(lr_at(0, total, cfg), 0.0f);
  EXPECT_FLOAT_EQ(lr_at(50, total, cfg), cfg.lr / 2);
  EXPECT_FLOAT_EQ(lr_at(100, total, cfg), cfg.lr);
  EXPECT_LT(lr_at(total - 1, total, cfg), 1e-3f * cfg.lr);
  EXPECT_NEAR(lr_at(100 + 899 / 2, total, cfg), cfg.lr / 2, 1e-6);
  float prev = cfg.lr;
  for (std::size_t s = 100; s < total; ++s) {
    const float lr = lr_at(s, total, cfg);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(TrainConfig, StepsAndValidation) {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 2;
  EXPECT_EQ(cfg.total_steps(100), 8u);
  cfg.steps = 5;
  EXPECT_EQ(cfg.total_steps(100), 5u);
  cfg.adam_beta1 = 1.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = -1.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_distill_mode("self"), DistillMode::SelfDistill);
  EXPECT_THROW(parse_distill_mode("teach"), ConfigError);
}

// One step on w = [0.5, -1.0] (a 1x2 weight) and b = [0.3] with gradients
// [0.2, -0.4] and [0.1]. At step 1 the bias-corrected moments are g and g^2, so
// the Adam term is lr * g / (|g| + eps). With lr = 0.01, wd = 0.1, eps = 1e-6:
//   w0 = 0.5 * 0.999 - 0.01 * 0.2 / 0.200001   = 0.48950005
//   w1 = -1.0 * 0.999 + 0.01 * 0.4 / 0.400001  = -0.989000025
//   b  = 0.3 - 0.01 * 0.1 / 0.100001           = 0.29000010 (no decay on vectors)
TEST(AdamW, FirstStepMatchesHandComputation) {
  DualEncoderModel m;
  m.params.push_back({"w", ParamRole::FeedForward, DenseTensor({1, 2}, {0.5f, -1.0f}), nullptr});
  m.params.push_back({"b", ParamRole::Bias, DenseTensor({1}, {0.3f}), nullptr});
  m.params[0].value.grad = std::vector<float>{0.2f, -0.4f};
  m.params[1].value.grad = std::vector<float>{0.1f};
  TrainConfig cfg;
  cfg.weight_decay = 0.1f;
  OptimizerState state;
  adamw_update(m, state, 0.01f, cfg);
  EXPECT_NEAR(m.params[0].value.data[0], 0.48950005, 1e-6);
  EXPECT_NEAR(m.params[0].value.data[1], -0.989000025, 1e-6);
  EXPECT_NEAR(m.params[1].value.data[0], 0.29000010, 1e-6);
  EXPECT_EQ(state.step, 1u);
  EXPECT_NEAR(state.first_moment[0][0], 0.02, 1e-8);
  EXPECT_NEAR(state.second_moment[0][1], 0.001 * 0.16, 1e-8);
}

TEST(AdamW, WeightDecayIsDecoupled) {
  DualEncoderModel m;
  m.params.push_back({"w", ParamRole::FeedForward, DenseTensor({2, 2}, {1.0f, -2.0f, 0.5f, 4.0f}), nullptr});
  m.params.push_back({"b", ParamRole::Bias, DenseTensor({2}, {1.0f, -1.0f}), nullptr});
  for (auto& p : m.params) p.value.grad = std::vector<float>(p.value.size(), 0.0f);
  TrainConfig cfg;
  cfg.weight_decay = 0.1f;
  OptimizerState state;
  const float lr = 0.05f;
  adamw_update(m, state, lr, cfg);
  const float factor = 1.0f - lr * 0.1f;
  EXPECT_EQ(m.params[0].value.data, (std::vector<float>{1.0f * factor, -2.0f * factor, 0.5f * factor, 4.0f * factor}));
  EXPECT_EQ(m.params[1].value.data, (std::vector<float>{1.0f, -1.0f}));
}

TEST(TrainStep, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto data = small_dataset();
  auto m = DualEncoderModel::create(small_encoder(), 3);
  m.plan.mode = QuantMode::QALL;
  const auto before = m.params;
  TrainConfig cfg;
  OptimizerState state;
  const auto idx = first_indices(8);
  train_step(m, data.train.gather(idx), nullptr, cfg, state, 0.0f);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(m.params[i].value.data, before[i].value.data);
}

TEST(TrainStep, WithoutTeacherOnlyTaskLoss) {
  const auto data = small_dataset();
  auto m = DualEncoderModel::create(small_encoder(), 3);
  TrainConfig cfg;
  OptimizerState state;
  const auto idx = first_indices(8);
  const auto r = train_step(m, data.train.gather(idx), nullptr, cfg, state, 1e-3f);
  EXPECT_FALSE(r.crd || r.icl || r.fd);
  EXPECT_EQ(r.total, r.task);
  EXPECT_GT(r.task, 0.0);
}

TEST(TrainStep, NonFiniteWeightsAbortWithTensorName) {
  const auto data = small_dataset();
  auto m = DualEncoderModel::create(small_encoder(), 3);
  m.param("text.proj.weight").value.data[2] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  OptimizerState state;
  const auto idx = first_indices(4);
  try {
    train_step(m, data.train.gather(idx), nullptr, cfg, state, 1e-3f);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("text.proj.weight"), std::string::npos);
  }
}

Trit region(float x) { return x >= 0.5f ? 1 : (x <= -0.5f ? -1 : 0); }

// Every planned weight moves each step; a trit moves only when w / (gamma + eps)
// crosses one of the boundaries -0.5 and +0.5.
TEST(TrainStep, TritsChangeOnlyAcrossBoundaries) {
  const auto data = small_dataset();
  auto m = DualEncoderModel::create(small_encoder(), 4);
  m.plan.mode = QuantMode::QALL;
  TrainConfig cfg;
  OptimizerState state;
  std::size_t changed = 0;
  for (std::size_t step = 0; step < 10; ++step) {
    std::vector<std::vector<float>> ratio_before;
    std::vector<std::vector<Trit>> trits_before;
    std::vector<std::vector<float>> w_before;
    for (const auto& p : m.params) {
      const float gamma = compute_scale(p.value, m.quantizer);
      std::vector<float> ratio;
      for (float w : p.value.data) ratio.push_back(w / (gamma + m.quantizer.epsilon));
      ratio_before.push_back(ratio);
      trits_before.push_back(m.is_ternary(p) ? ternarize(p.value, m.quantizer).trits() : std::vector<Trit>{});
      w_before.push_back(p.value.data);
    }
    std::vector<std::size_t> idx{step % 32, (step + 5) % 32, (step + 11) % 32, (step + 17) % 32};
    train_step(m, data.train.gather(idx), nullptr, cfg, state, 5e-2f);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      const auto& p = m.params[i];
      if (!m.is_ternary(p)) continue;
      EXPECT_NE(p.value.data, w_before[i]) << p.name;
      const float gamma = compute_scale(p.value, m.quantizer);
      const auto trits = ternarize(p.value, m.quantizer).trits();
      for (std::size_t j = 0; j < trits.size(); ++j) {
        const float before = ratio_before[i][j];
        const float after = p.value.data[j] / (gamma + m.quantizer.epsilon);
        ASSERT_EQ(trits_before[i][j], region(before));
        ASSERT_EQ(trits[j], region(after));
        if (trits[j] != trits_before[i][j]) {
          ++changed;
          const float lo = std::min(before, after), hi = std::max(before, after);
          EXPECT_TRUE((lo <= 0.5f && 0.5f <= hi) || (lo <= -0.5f && -0.5f <= hi));
        }
      }
    }
  }
  EXPECT_GT(changed, 0u);
}

TEST(Finalize, UntrainedModelEqualsTernarizedInitialWeights) {
  auto m = DualEncoderModel::create(small_encoder(), 5);
  m.plan.mode = QuantMode::QFFN;
  const auto init = m;
  finalize(m);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& p = m.params[i];
    if (m.is_ternary(p)) {
      ASSERT_TRUE(p.frozen);
      EXPECT_EQ(*p.frozen, ternarize(init.params[i].value, m.quantizer));
    } else {
      EXPECT_FALSE(p.frozen);
    }
  }
}

TEST(Finalize, ReloadReproducesForwardAndFileSize) {
  const auto data = small_dataset();
  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 8;
  cfg.quant_plan.mode = QuantMode::QALL;
  auto result = run_training(data, cfg, DualEncoderModel::create(small_encoder(), 6));
  const auto path = temp_path("final.tnc");
  finalize(result.model, path);
  auto loaded = load_model(path);
  EXPECT_TRUE(loaded.is_finalized());
  const auto& test = data.test;
  EXPECT_EQ(embed_images(loaded, test.patches, test.size).data, embed_images(result.model, test.patches, test.size).data);
  EXPECT_EQ(embed_texts(loaded, test.tokens, test.size).data, embed_texts(result.model, test.tokens, test.size).data);

  std::uint64_t expected = 0;
  for (const auto& p : result.model.params) {
    expected += result.model.is_ternary(p) ? packed_byte_size(p.value.size()) : 4 * p.value.size();
  }
  const auto report = storage_report(path);
  EXPECT_EQ(report.data_bytes, expected);
  EXPECT_EQ(report.file_bytes, std::filesystem::file_size(path));
  std::filesystem::remove(path);
}

TEST(RunTraining, LogHasOneRowPerStepAndMonotoneSamples) {
  const auto data = small_dataset();
  TrainConfig cfg;
  cfg.steps = 12;
  cfg.batch_size = 5;
  auto r = run_training(data, cfg, DualEncoderModel::create(small_encoder(), 1));
  ASSERT_EQ(r.log.size(), 12u);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].step, i + 1);
    EXPECT_EQ(r.log[i].samples_seen, 5 * (i + 1));
  }
  const auto csv = log_to_csv(r.log);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,samples_seen,lr,task,crd,icl,fd,total");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
    EXPECT_NE(line.find(",,,"), std::string::npos);  // distillation columns empty
  }
  EXPECT_EQ(rows, 12u);
}

TEST(RunTraining, DeterministicForEqualSeeds) {
  const auto data = small_dataset();
  TrainConfig cfg;
  cfg.steps = 15;
  cfg.batch_size = 6;
  cfg.quant_plan.mode = QuantMode::QALL;
  cfg.distill_mode = DistillMode::SelfDistill;
  const auto init = DualEncoderModel::create(small_encoder(), 2);
  const auto a = run_training(data, cfg, init);
  const auto b = run_training(data, cfg, init);
  for (std::size_t i = 0; i < a.model.params.size(); ++i) {
    EXPECT_EQ(a.model.params[i].value.data, b.model.params[i].value.data);
  }
  EXPECT_EQ(log_to_csv(a.log), log_to_csv(b.log));
  cfg.seed = 99;
  EXPECT_NE(log_to_csv(run_training(data, cfg, init).log), log_to_csv(a.log));
}

TEST(RunTraining, SelfDistillIsTeacherModeWithTheInitialWeights) {
  const auto data = small_dataset();
  TrainConfig cfg;
  cfg.steps = 8;
  cfg.batch_size = 6;
  cfg.quant_plan.mode = QuantMode::QFFN;
  const auto init = DualEncoderModel::create(small_encoder(), 7);
  cfg.distill_mode = DistillMode::SelfDistill;
  const auto self = run_training(data, cfg, init);
  cfg.distill_mode = DistillMode::Teacher;
  const auto teacher = run_training(data, cfg, init, &init);
  EXPECT_EQ(self.teacher_source, "self");
  EXPECT_EQ(teacher.teacher_source, "teacher");
  EXPECT_EQ(log_to_csv(self.log), log_to_csv(teacher.log));
  ASSERT_TRUE(self.log[0].loss.fd.has_value());
  // The student starts at the teacher, so only quantization separates them.
  EXPECT_GT(*self.log[0].loss.fd, 0.0);
}

TEST(RunTraining, Errors) {
  auto data = small_dataset();
  TrainConfig cfg;
  cfg.steps = 1;
  const auto init = DualEncoderModel::create(small_encoder(), 1);
  cfg.distill_mode = DistillMode::Teacher;
  EXPECT_THROW(run_training(data, cfg, init), ConfigError);
  cfg.distill_mode = DistillMode::None;
  EXPECT_THROW(run_training(data, cfg, DualEncoderModel::create(EncoderConfig{}, 1)), ConfigError);
  data.train = Split{};
  EXPECT_THROW(run_training(data, cfg, init), ConfigError);
}

// 200 steps of the dense baseline on the shipped synthetic data.
TEST(RunTraining, TwoHundredStepsHalveTheLoss) {
  const auto data = generate_synthetic(SyntheticConfig{});
  TrainConfig cfg;
  cfg.steps = 200;
  const auto r = run_training(data, cfg, DualEncoderModel::create(EncoderConfig{}, 1));
  double tail = 0.0;
  for (std::size_t i = r.log.size() - 10; i < r.log.size(); ++i) tail += r.log[i].loss.total;
  tail /= 10.0;
  EXPECT_LE(tail, 0.5 * r.log.front().loss.total);
}

}  // namespace
}  // namespace ternclip
