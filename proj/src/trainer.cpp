#include "ternclip/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "ternclip/container.hpp"
#include "ternclip/error.hpp"
#include "ternclip/ops.hpp"

namespace ternclip {

std::string to_string(DistillMode mode) {
  switch (mode) {
    case DistillMode::None:
      return "none";
    case DistillMode::Teacher:
      return "teacher";
    case DistillMode::SelfDistill:
      return "self";
  }
  return "none";
}

DistillMode parse_distill_mode(const std::string& text) {
  if (text == "none") return DistillMode::None;
  if (text == "teacher") return DistillMode::Teacher;
  if (text == "self") return DistillMode::SelfDistill;
  throw ConfigError("unknown distill mode '" + text + "' (expected none, teacher or self)");
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw ConfigError("lr must be >= 0");
  if (!(adam_beta1 > 0.0f && adam_beta1 < 1.0f) || !(adam_beta2 > 0.0f && adam_beta2 < 1.0f)) {
    throw ConfigError("adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0f)) throw ConfigError("adam_eps must be > 0");
  if (!(weight_decay >= 0.0f)) throw ConfigError("weight_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (steps == 0 && epochs == 0) throw ConfigError("either steps or epochs must be positive");
  quantizer.validate();
  loss.validate();
}

std::size_t TrainConfig::total_steps(std::size_t samples) const {
  if (steps > 0) return steps;
  const std::size_t per_epoch = (samples + batch_size - 1) / batch_size;
  return epochs * per_epoch;
}

float lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<float>(step) / static_cast<float>(cfg.warmup_steps);
  }
  if (total_steps <= cfg.warmup_steps + 1) return cfg.lr;
  const double span = static_cast<double>(total_steps - 1 - cfg.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / span);
  return static_cast<float>(cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void adamw_update(DualEncoderModel& model, OptimizerState& state, float lr, const TrainConfig& cfg) {
  auto& params = model.params;
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i].value.size(), 0.0f);
      state.second_moment[i].assign(params[i].value.size(), 0.0f);
    }
  }
  state.step += 1;
  const auto t = static_cast<double>(state.step);
  const auto bias1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.adam_beta1), t));
  const auto bias2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.adam_beta2), t));
  const float b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    if (!p.grad) continue;
    const auto& g = *p.grad;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const float decay = p.rank() >= 2 ? 1.0f - lr * cfg.weight_decay : 1.0f;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      const float mhat = m[j] / bias1;
      const float vhat = v[j] / bias2;
      p.data[j] = p.data[j] * decay - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

LossReport train_step(DualEncoderModel& model, const Batch& batch, const TeacherEmbeddings* teacher,
                      const TrainConfig& cfg, OptimizerState& state, float lr) {
  for (auto& p : model.params) {
    check_finite(p.value, "parameter " + p.name);
    p.value.ensure_grad();
    p.value.zero_grad();
  }
  Graph g;
  BoundModel bm(g, model, BindMode::Trainable);
  Var image = encode_image(bm, batch.patches, batch.size);
  Var text = encode_text(bm, batch.tokens, batch.size);

  CombinedLoss loss;
  if (teacher != nullptr) {
    DistillInputs in{image, text, g.constant(DenseTensor(teacher->image.dims, teacher->image.data)),
                     g.constant(DenseTensor(teacher->text.dims, teacher->text.data))};
    loss = ternary_objective(g, in, cfg.loss);
  } else {
    LossParts parts;
    parts.task = task_loss(g, image, text, cfg.loss.tau);
    loss = combine(g, parts, cfg.loss);
  }
  if (!std::isfinite(loss.report.total)) throw NumericError("non-finite total loss");
  g.backward(loss.total);
  for (const auto& p : model.params) check_finite(*p.value.grad, "gradient of " + p.name);
  adamw_update(model, state, lr, cfg);
  return loss.report;
}

std::string log_csv_header() { return "step,samples_seen,lr,task,crd,icl,fd,total"; }

std::string log_csv_row(const LogRow& row) {
  std::ostringstream os;
  os.precision(9);
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << row.step << ',' << row.samples_seen << ',' << row.lr << ',' << row.loss.task << ',';
  opt(row.loss.crd);
  os << ',';
  opt(row.loss.icl);
  os << ',';
  opt(row.loss.fd);
  os << ',' << row.loss.total;
  return os.str();
}

std::string log_to_csv(const std::vector<LogRow>& rows) {
  std::string out = log_csv_header() + "\n";
  for (const auto& r : rows) out += log_csv_row(r) + "\n";
  return out;
}

namespace {

DenseTensor gather_rows(const DenseTensor& t, std::span<const std::size_t> idx) {
  const std::size_t d = t.cols();
  std::vector<float> out;
  out.reserve(idx.size() * d);
  for (auto i : idx) {
    const auto r = t.row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return DenseTensor({idx.size(), d}, std::move(out));
}

DualEncoderModel dense_copy(const DualEncoderModel& m) {
  DualEncoderModel t = m;
  t.plan = QuantPlan{};
  unfreeze(t);
  for (auto& p : t.params) p.value.grad.reset();
  return t;
}

}  // namespace

TrainResult run_training(const Dataset& dataset, const TrainConfig& cfg, const DualEncoderModel& init,
                         const DualEncoderModel* teacher, std::size_t log_every) {
  cfg.validate();
  const auto& train = dataset.train;
  if (train.size == 0) throw ConfigError("run_training: empty dataset");
  check_compatible(dataset, init.config);

  TrainResult result{init, {}, to_string(cfg.distill_mode)};
  auto& model = result.model;
  model.plan = cfg.quant_plan;
  model.quantizer = cfg.quantizer;
  model.tau = cfg.loss.tau;
  unfreeze(model);

  std::optional<TeacherEmbeddings> all_teacher;
  if (cfg.distill_mode != DistillMode::None) {
    DualEncoderModel t;
    if (cfg.distill_mode == DistillMode::Teacher) {
      if (teacher == nullptr) throw ConfigError("distill mode 'teacher' needs a teacher model");
      t = dense_copy(*teacher);
    } else {
      t = dense_copy(init);
    }
    check_compatible(dataset, t.config);
    if (t.config.embed_dim != model.config.embed_dim) throw ConfigError("teacher and student embed_dim differ");
    all_teacher = TeacherEmbeddings{embed_images(t, train.patches, train.size), embed_texts(t, train.tokens, train.size)};
  }

  const std::size_t total = cfg.total_steps(train.size);
  const std::size_t bs = std::min(cfg.batch_size, train.size);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  OptimizerState state;
  std::vector<std::size_t> idx(bs);
  std::size_t seen = 0;
  for (std::size_t step = 0; step < total; ++step) {
    for (std::size_t i = 0; i < bs; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx[i] = order[cursor++];
    }
    const Batch batch = train.gather(idx);
    std::optional<TeacherEmbeddings> t;
    if (all_teacher) t = TeacherEmbeddings{gather_rows(all_teacher->image, idx), gather_rows(all_teacher->text, idx)};
    const float lr = lr_at(step, total, cfg);
    LogRow row;
    try {
      row.loss = train_step(model, batch, t ? &*t : nullptr, cfg, state, lr);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(step + 1) + ": " + e.what());
    }
    seen += bs;
    row.step = step + 1;
    row.samples_seen = seen;
    row.lr = lr;
    result.log.push_back(row);
    if (log_every > 0 && (row.step % log_every == 0 || row.step == total)) {
      std::fprintf(stderr, "step %zu/%zu lr %.3g total %.5f task %.5f\n", row.step, total, static_cast<double>(lr),
                   row.loss.total, row.loss.task);
    }
  }
  for (auto& p : model.params) p.value.grad.reset();
  return result;
}

void finalize(DualEncoderModel& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  freeze_ternary(model);
  if (!path.empty()) save_model(model, path, extra);
}

}  // namespace ternclip
