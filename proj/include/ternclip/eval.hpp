#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ternclip/data.hpp"
#include "ternclip/model.hpp"
#include "ternclip/tensor.hpp"

namespace ternclip {

struct EvalResult {
  std::string metric;
  double value = 0.0;  // in [0, 1]
  std::size_t support = 0;
  std::size_t excluded = 0;  // classes dropped for having no positives (mAP only)
};

// Rankings sort by descending score; equal scores rank the lower index first.

/// scores is [queries x classes].
EvalResult accuracy_from_scores(const DenseTensor& scores, std::span<const std::size_t> labels);
EvalResult accuracy_at_1(const DenseTensor& image_emb, const DenseTensor& class_emb,
                         std::span<const std::size_t> labels);

/// scores and relevance are [samples x classes]; AP is computed per class
/// column over the ranked samples.
EvalResult mean_average_precision(const DenseTensor& scores, std::span<const std::uint8_t> relevance);

/// relevant[i] lists the gallery items that count as a hit for query i.
EvalResult recall_from_scores(const DenseTensor& scores, const std::vector<std::vector<std::size_t>>& relevant,
                              std::size_t k = 5);
EvalResult recall_at_k(const DenseTensor& query_emb, const DenseTensor& gallery_emb,
                       const std::vector<std::vector<std::size_t>>& relevant, std::size_t k = 5);

/// Mean prompt embedding per class, re-normalised to unit length.
DenseTensor class_prototypes(const DenseTensor& prompt_emb, std::span<const std::size_t> labels, std::size_t classes);

enum class EvalTask { Classification, MeanAveragePrecision, Retrieval };
std::string to_string(EvalTask t);
EvalTask parse_eval_task(const std::string& text);

struct EvalRow {
  std::string dataset;
  EvalResult result;
};

/// Runs `task` on the held-out split. Classification and mAP score test
/// images against class prototypes; retrieval reports Recall@5 in both
/// directions over the paired test samples.
std::vector<EvalRow> evaluate(DualEncoderModel& model, const Dataset& data, EvalTask task,
                              const std::string& dataset_name = "synthetic");

std::string eval_csv(const std::vector<EvalRow>& rows);
std::string eval_text(const std::vector<EvalRow>& rows);

}  // namespace ternclip
