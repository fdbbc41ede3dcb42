#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ternclip/data.hpp"
#include "ternclip/losses.hpp"
#include "ternclip/model.hpp"

namespace ternclip {

enum class DistillMode { None, Teacher, SelfDistill };

std::string to_string(DistillMode mode);
DistillMode parse_distill_mode(const std::string& text);

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t steps = 0;  // when non-zero, overrides epochs
  std::size_t batch_size = 32;
  float lr = 1e-3f;
  std::size_t warmup_steps = 100;
  float weight_decay = 0.1f;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-6f;
  std::uint64_t seed = 7;
  DistillMode distill_mode = DistillMode::None;
  QuantPlan quant_plan;
  QuantizerConfig quantizer;
  LossWeights loss;

  void validate() const;
  /// Number of optimizer steps for a training split of `samples` items.
  std::size_t total_steps(std::size_t samples) const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear warm-up from 0 to lr over warmup_steps, then cosine decay reaching 0
/// at step total_steps - 1.
float lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct OptimizerState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::uint64_t step = 0;
};

/// One AdamW update of every parameter from its accumulated gradient. Weight
/// decay is decoupled, W <- W * (1 - lr * wd), and is applied to weight
/// matrices (rank >= 2) only.
void adamw_update(DualEncoderModel& model, OptimizerState& state, float lr, const TrainConfig& cfg);

/// Teacher embeddings of the samples in a batch, already detached.
struct TeacherEmbeddings {
  DenseTensor image;
  DenseTensor text;
};

/// Ternarize planned weights, forward with them, evaluate the objective, pass
/// gradients through the quantizer to the latent weights and apply AdamW.
/// Throws NumericError (naming the offending tensor) on a non-finite loss or
/// gradient.
LossReport train_step(DualEncoderModel& model, const Batch& batch, const TeacherEmbeddings* teacher,
                      const TrainConfig& cfg, OptimizerState& state, float lr);

struct LogRow {
  std::size_t step = 0;  // 1-based
  std::size_t samples_seen = 0;
  float lr = 0.0f;
  LossReport loss;
};

std::string log_csv_header();
std::string log_csv_row(const LogRow& row);
std::string log_to_csv(const std::vector<LogRow>& rows);

struct TrainResult {
  DualEncoderModel model;
  std::vector<LogRow> log;
  std::string teacher_source;  // "none", "teacher" or "self"
};

/// Runs the whole loop on dataset.train. `init` is the starting student (its
/// plan is replaced by cfg.quant_plan). For DistillMode::Teacher a dense
/// `teacher` is required; SelfDistill uses a frozen dense copy of `init`.
/// Teacher embeddings of the training split are computed once up front; the
/// teacher is frozen and each sample's embedding does not depend on the
/// batch it is in, so this matches a per-step teacher forward exactly.
TrainResult run_training(const Dataset& dataset, const TrainConfig& cfg, const DualEncoderModel& init,
                         const DualEncoderModel* teacher = nullptr, std::size_t log_every = 0);

/// Ternarizes all planned tensors from the final latent weights (fixing T and
/// gamma) and, if `path` is non-empty, writes the packed container.
void finalize(DualEncoderModel& model, const std::filesystem::path& path = {},
              const nlohmann::json& extra = nlohmann::json::object());

}  // namespace ternclip
