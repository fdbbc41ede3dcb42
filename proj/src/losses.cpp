#include "ternclip/losses.hpp"

#include <cmath>
#include <numeric>
#include <vector>

#include "ternclip/error.hpp"
#include "ternclip/model.hpp"
#include "ternclip/ops.hpp"

namespace ternclip {

void LossWeights::validate() const {
  for (float v : {lambda_crd, lambda_icl, lambda_fd, tau_crd, tau}) {
    if (!(v > 0.0f) || !std::isfinite(v)) throw ConfigError("loss weights and temperatures must be > 0");
  }
}

namespace {

std::vector<std::size_t> diagonal_labels(std::size_t n) {
  std::vector<std::size_t> labels(n);
  std::iota(labels.begin(), labels.end(), std::size_t{0});
  return labels;
}

// (CE(logits) + CE(logits2)) / 2 with diagonal labels.
Var symmetric_ce(Graph& g, Var logits, Var logits2) {
  const auto labels = diagonal_labels(g.value(logits).rows());
  Var a = cross_entropy_rows(g, logits, labels);
  Var b = cross_entropy_rows(g, logits2, labels);
  return scale(g, add(g, a, b), 0.5f);
}

void require_same(const Graph& g, Var a, Var b, const char* op) {
  if (g.value(a).dims != g.value(b).dims) {
    throw ShapeError(std::string(op) + ": " + dims_to_string(g.value(a).dims) + " vs " +
                     dims_to_string(g.value(b).dims));
  }
}

}  // namespace

Var task_loss(Graph& g, Var image_emb, Var text_emb, float tau) {
  require_same(g, image_emb, text_emb, "task_loss");
  Var logits = similarity_logits(g, image_emb, text_emb, tau);
  return symmetric_ce(g, logits, transpose(g, logits));
}

Var crd_loss(Graph& g, Var student_i2t, Var student_t2i, Var teacher_i2t, Var teacher_t2i, float tau_crd,
             KlDirection direction) {
  require_same(g, student_i2t, teacher_i2t, "crd_loss");
  require_same(g, student_t2i, teacher_t2i, "crd_loss");
  if (!(tau_crd > 0.0f)) throw ConfigError("crd_loss: temperature must be > 0");
  const float inv = 1.0f / tau_crd;
  auto kl = [&](Var student, Var teacher) {
    Var ps = softmax_rows(g, scale(g, student, inv));
    Var pt = softmax_rows(g, scale(g, teacher, inv));
    return direction == KlDirection::TeacherFirst ? kl_div_rows(g, pt, ps) : kl_div_rows(g, ps, pt);
  };
  Var p = kl(student_i2t, teacher_i2t);
  Var q = kl(student_t2i, teacher_t2i);
  return add(g, p, q);
}

Var icl_loss(Graph& g, Var image_s, Var text_s, Var image_t, Var text_t, float tau) {
  require_same(g, image_s, image_t, "icl_loss");
  require_same(g, text_s, text_t, "icl_loss");
  Var is_tt = similarity_logits(g, image_s, text_t, tau);
  Var ts_it = similarity_logits(g, text_s, image_t, tau);
  return symmetric_ce(g, is_tt, ts_it);
}

Var fd_loss(Graph& g, Var image_s, Var text_s, Var image_t, Var text_t) {
  return add(g, mse(g, image_s, image_t), mse(g, text_s, text_t));
}

LossReport combine(double task, std::optional<double> crd, std::optional<double> icl, std::optional<double> fd,
                   const LossWeights& weights) {
  auto finite = [](std::optional<double> v, const char* what) {
    if (v && !std::isfinite(*v)) throw NumericError(std::string("non-finite ") + what + " loss");
  };
  finite(task, "task");
  finite(crd, "crd");
  finite(icl, "icl");
  finite(fd, "fd");
  LossReport r;
  r.task = task;
  r.crd = crd;
  r.icl = icl;
  r.fd = fd;
  r.total = task;
  if (crd) r.total += static_cast<double>(weights.lambda_crd) * *crd;
  if (icl) r.total += static_cast<double>(weights.lambda_icl) * *icl;
  if (fd) r.total += static_cast<double>(weights.lambda_fd) * *fd;
  return r;
}

CombinedLoss combine(Graph& g, const LossParts& parts, const LossWeights& weights) {
  auto value = [&](std::optional<Var> v) -> std::optional<double> {
    if (!v) return std::nullopt;
    return static_cast<double>(g.value(*v).item());
  };
  CombinedLoss out;
  out.report = combine(g.value(parts.task).item(), value(parts.crd), value(parts.icl), value(parts.fd), weights);
  Var total = parts.task;
  if (parts.crd) total = add(g, total, scale(g, *parts.crd, weights.lambda_crd));
  if (parts.icl) total = add(g, total, scale(g, *parts.icl, weights.lambda_icl));
  if (parts.fd) total = add(g, total, scale(g, *parts.fd, weights.lambda_fd));
  out.total = total;
  return out;
}

CombinedLoss ternary_objective(Graph& g, const DistillInputs& in, const LossWeights& weights) {
  weights.validate();
  LossParts parts;
  parts.task = task_loss(g, in.image_s, in.text_s, weights.tau);
  Var student = similarity_logits(g, in.image_s, in.text_s, weights.tau);
  Var teacher = similarity_logits(g, in.image_t, in.text_t, weights.tau);
  parts.crd = crd_loss(g, student, transpose(g, student), teacher, transpose(g, teacher), weights.tau_crd,
                       weights.kl_direction);
  parts.icl = icl_loss(g, in.image_s, in.text_s, in.image_t, in.text_t, weights.tau);
  parts.fd = fd_loss(g, in.image_s, in.text_s, in.image_t, in.text_t);
  return combine(g, parts, weights);
}

}  // namespace ternclip
