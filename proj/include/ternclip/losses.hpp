#pragma once

#include <optional>

#include "ternclip/graph.hpp"

namespace ternclip {

/// Which distribution is the reference in the relational KL term.
enum class KlDirection {
  TeacherFirst,  // KL(teacher || student)
  StudentFirst,  // KL(student || teacher)
};

struct LossWeights {
  float lambda_crd = 1.0f;
  float lambda_icl = 1.0f;
  float lambda_fd = 2000.0f;
  float tau_crd = 1.0f;
  float tau = 0.07f;
  KlDirection kl_direction = KlDirection::TeacherFirst;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Scalar loss values of one step. Distillation parts are absent when no
/// teacher is used.
struct LossReport {
  double task = 0.0;
  std::optional<double> crd;
  std::optional<double> icl;
  std::optional<double> fd;
  double total = 0.0;
};

/// Symmetric InfoNCE: mean of image->text and text->image cross-entropy over
/// logits I_e T_e^T / tau with the diagonal as labels.
Var task_loss(Graph& g, Var image_emb, Var text_emb, float tau);

/// KL between teacher and student softmax(logits / tau_crd), summed over the
/// image->text and text->image directions.
Var crd_loss(Graph& g, Var student_i2t, Var student_t2i, Var teacher_i2t, Var teacher_t2i, float tau_crd,
             KlDirection direction = KlDirection::TeacherFirst);

/// Cross-modal contrastive loss between student embeddings of one modality
/// and teacher embeddings of the other.
Var icl_loss(Graph& g, Var image_s, Var text_s, Var image_t, Var text_t, float tau);

/// MSE(I_s, I_t) + MSE(T_s, T_t).
Var fd_loss(Graph& g, Var image_s, Var text_s, Var image_t, Var text_t);

struct LossParts {
  Var task;
  std::optional<Var> crd;
  std::optional<Var> icl;
  std::optional<Var> fd;
};

struct CombinedLoss {
  Var total;
  LossReport report;
};

/// total = task + lambda_crd crd + lambda_icl icl + lambda_fd fd, as a graph
/// node for backward and as a report whose total is the same sum taken in
/// double precision over the part values.
CombinedLoss combine(Graph& g, const LossParts& parts, const LossWeights& weights);

/// Scalar form. Throws NumericError on a non-finite part.
LossReport combine(double task, std::optional<double> crd, std::optional<double> icl, std::optional<double> fd,
                   const LossWeights& weights);

/// Student and teacher embeddings for the full distillation objective.
struct DistillInputs {
  Var image_s;
  Var text_s;
  Var image_t;
  Var text_t;
};

/// Task loss plus all three distillation terms.
CombinedLoss ternary_objective(Graph& g, const DistillInputs& in, const LossWeights& weights);

}  // namespace ternclip
