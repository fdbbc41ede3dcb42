#include "ternclip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ternclip/error.hpp"
#include "ternclip/gemm.hpp"

namespace ternclip {
namespace {

constexpr float kUnitNormTolerance = 1e-3f;

void require_matrix(const DenseTensor& t, const char* what) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + " must be a matrix, got " + dims_to_string(t.dims));
}

void require_unit_rows(const DenseTensor& t, const char* what) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double s = 0.0;
    for (float v : t.row(r)) s += static_cast<double>(v) * v;
    if (std::abs(std::sqrt(s) - 1.0) > kUnitNormTolerance) {
      throw NumericError(std::string(what) + " row " + std::to_string(r) + " is not unit-norm");
    }
  }
}

DenseTensor cosine_scores(const DenseTensor& q, const DenseTensor& g) {
  require_matrix(q, "query embeddings");
  require_matrix(g, "gallery embeddings");
  if (q.cols() != g.cols()) {
    throw ShapeError("embedding widths differ: " + dims_to_string(q.dims) + " vs " + dims_to_string(g.dims));
  }
  require_unit_rows(q, "query embeddings");
  require_unit_rows(g, "gallery embeddings");
  DenseTensor s = DenseTensor::zeros({q.rows(), g.rows()});
  gemm::nt(q.rows(), g.rows(), q.cols(), q.data, g.data, s.data, false);
  return s;
}

// Position of column c in row r's descending ranking.
std::size_t rank_of(std::span<const float> row, std::size_t c) {
  std::size_t rank = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] > row[c] || (row[j] == row[c] && j < c)) ++rank;
  }
  return rank;
}

}  // namespace

EvalResult accuracy_from_scores(const DenseTensor& scores, std::span<const std::size_t> labels) {
  require_matrix(scores, "scores");
  const std::size_t n = scores.rows(), classes = scores.cols();
  if (n == 0 || classes == 0) throw ShapeError("accuracy_at_1: empty evaluation set");
  if (labels.size() != n) throw ShapeError("accuracy_at_1: label count does not match scores");
  check_finite(scores, "accuracy_at_1 scores");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= classes) throw FormatError("accuracy_at_1: label " + std::to_string(labels[i]) + " out of range");
    const auto row = scores.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += best == labels[i] ? 1 : 0;
  }
  return {"accuracy@1", static_cast<double>(hits) / static_cast<double>(n), n, 0};
}

EvalResult accuracy_at_1(const DenseTensor& image_emb, const DenseTensor& class_emb,
                         std::span<const std::size_t> labels) {
  if (image_emb.size() == 0) throw ShapeError("accuracy_at_1: empty evaluation set");
  return accuracy_from_scores(cosine_scores(image_emb, class_emb), labels);
}

EvalResult mean_average_precision(const DenseTensor& scores, std::span<const std::uint8_t> relevance) {
  require_matrix(scores, "scores");
  if (relevance.size() != scores.size()) throw ShapeError("mean_average_precision: relevance shape differs from scores");
  const std::size_t n = scores.rows(), classes = scores.cols();
  if (n == 0 || classes == 0) throw ShapeError("mean_average_precision: empty evaluation set");
  check_finite(scores, "mean_average_precision scores");

  std::vector<std::size_t> order(n);
  double sum_ap = 0.0;
  std::size_t used = 0, excluded = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores.at(a, c) > scores.at(b, c); });
    std::size_t positives = 0;
    double ap = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (relevance[order[r] * classes + c] != 0) {
        ++positives;
        ap += static_cast<double>(positives) / static_cast<double>(r + 1);
      }
    }
    if (positives == 0) {
      ++excluded;
      continue;
    }
    sum_ap += ap / static_cast<double>(positives);
    ++used;
  }
  if (used == 0) throw ShapeError("mean_average_precision: no class has a positive sample");
  return {"mAP", sum_ap / static_cast<double>(used), used, excluded};
}

EvalResult recall_from_scores(const DenseTensor& scores, const std::vector<std::vector<std::size_t>>& relevant,
                              std::size_t k) {
  require_matrix(scores, "scores");
  const std::size_t n = scores.rows(), gallery = scores.cols();
  if (n == 0 || gallery == 0) throw ShapeError("recall_at_k: empty evaluation set");
  if (k == 0) throw ConfigError("recall_at_k: k must be >= 1");
  if (k > gallery) {
    throw ConfigError("recall_at_k: k=" + std::to_string(k) + " exceeds gallery size " + std::to_string(gallery));
  }
  if (relevant.size() != n) throw ShapeError("recall_at_k: ground-truth map size does not match queries");
  check_finite(scores, "recall_at_k scores");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = scores.row(i);
    for (std::size_t g : relevant[i]) {
      if (g >= gallery) throw FormatError("recall_at_k: ground-truth index out of range");
      if (rank_of(row, g) < k) {
        ++hits;
        break;
      }
    }
  }
  return {"recall@" + std::to_string(k), static_cast<double>(hits) / static_cast<double>(n), n, 0};
}

EvalResult recall_at_k(const DenseTensor& query_emb, const DenseTensor& gallery_emb,
                       const std::vector<std::vector<std::size_t>>& relevant, std::size_t k) {
  if (query_emb.size() == 0 || gallery_emb.size() == 0) throw ShapeError("recall_at_k: empty evaluation set");
  return recall_from_scores(cosine_scores(query_emb, gallery_emb), relevant, k);
}

DenseTensor class_prototypes(const DenseTensor& prompt_emb, std::span<const std::size_t> labels, std::size_t classes) {
  require_matrix(prompt_emb, "prompt embeddings");
  if (labels.size() != prompt_emb.rows()) throw ShapeError("class_prototypes: label count does not match prompts");
  const std::size_t d = prompt_emb.cols();
  std::vector<double> acc(classes * d, 0.0);
  std::vector<std::size_t> counts(classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw FormatError("class_prototypes: label out of range");
    const auto row = prompt_emb.row(i);
    for (std::size_t j = 0; j < d; ++j) acc[labels[i] * d + j] += row[j];
    ++counts[labels[i]];
  }
  DenseTensor out = DenseTensor::zeros({classes, d});
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw FormatError("class_prototypes: class " + std::to_string(c) + " has no prompts");
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += acc[c * d + j] * acc[c * d + j];
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw NumericError("class_prototypes: class " + std::to_string(c) + " has a zero mean prompt");
    for (std::size_t j = 0; j < d; ++j) out.at(c, j) = static_cast<float>(acc[c * d + j] / norm);
  }
  return out;
}

std::string to_string(EvalTask t) {
  switch (t) {
    case EvalTask::Classification:
      return "cls";
    case EvalTask::MeanAveragePrecision:
      return "map";
    case EvalTask::Retrieval:
      return "retrieval";
  }
  return "cls";
}

EvalTask parse_eval_task(const std::string& text) {
  if (text == "cls") return EvalTask::Classification;
  if (text == "map") return EvalTask::MeanAveragePrecision;
  if (text == "retrieval") return EvalTask::Retrieval;
  throw ConfigError("unknown eval task '" + text + "' (expected cls, map or retrieval)");
}

std::vector<EvalRow> evaluate(DualEncoderModel& model, const Dataset& data, EvalTask task,
                              const std::string& dataset_name) {
  check_compatible(data, model.config);
  const Split& test = data.test;
  if (test.size == 0) throw ShapeError("evaluate: empty test split");
  std::vector<EvalRow> rows;

  if (task == EvalTask::Retrieval) {
    const DenseTensor img = embed_images(model, test.patches, test.size);
    const DenseTensor txt = embed_texts(model, test.tokens, test.size);
    std::vector<std::vector<std::size_t>> pairs(test.size);
    for (std::size_t i = 0; i < test.size; ++i) pairs[i] = {i};
    const std::size_t k = std::min<std::size_t>(5, test.size);
    auto i2t = recall_at_k(img, txt, pairs, k);
    i2t.metric = "image_to_text_" + i2t.metric;
    auto t2i = recall_at_k(txt, img, pairs, k);
    t2i.metric = "text_to_image_" + t2i.metric;
    rows.push_back({dataset_name, i2t});
    rows.push_back({dataset_name, t2i});
    return rows;
  }

  const std::size_t classes = data.config.classes;
  const DenseTensor prompts = embed_texts(model, data.prompts.tokens, data.prompts.size);
  const DenseTensor protos = class_prototypes(prompts, data.prompts.labels, classes);
  const DenseTensor img = embed_images(model, test.patches, test.size);
  if (task == EvalTask::Classification) {
    rows.push_back({dataset_name, accuracy_at_1(img, protos, test.labels)});
  } else {
    DenseTensor scores = DenseTensor::zeros({test.size, classes});
    gemm::nt(test.size, classes, img.cols(), img.data, protos.data, scores.data, false);
    std::vector<std::uint8_t> rel(test.size * classes, 0);
    for (std::size_t i = 0; i < test.size; ++i) rel[i * classes + test.labels[i]] = 1;
    rows.push_back({dataset_name, mean_average_precision(scores, rel)});
  }
  return rows;
}

std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "dataset,metric,value,support\n";
  for (const auto& r : rows) os << r.dataset << ',' << r.result.metric << ',' << r.result.value << ',' << r.result.support << '\n';
  return os.str();
}

std::string eval_text(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %-26s %10s %8s\n", "dataset", "metric", "value", "support");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-12s %-26s %10.4f %8zu\n", r.dataset.c_str(), r.result.metric.c_str(),
                  r.result.value, r.result.support);
    os << line;
  }
  return os.str();
}

}  // namespace ternclip
