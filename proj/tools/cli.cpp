#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <ostream>

#include "ternclip/config_json.hpp"
#include "ternclip/container.hpp"
#include "ternclip/data.hpp"
#include "ternclip/error.hpp"
#include "ternclip/eval.hpp"
#include "ternclip/report.hpp"
#include "ternclip/scaling.hpp"
#include "ternclip/trainer.hpp"

namespace ternclip::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void echo_config(std::ostream& out, const std::string& command, const json& cfg) {
  out << "config " << json{{"command", command}, {"config", cfg}}.dump() << '\n';
}

std::string single_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

struct GenDataArgs {
  std::uint64_t seed = 7;
  std::size_t classes = 32;
  std::size_t per_class = 0;
  std::size_t test_per_class = 0;
  std::string out;
};

struct TrainArgs {
  std::string config;
  std::string out;
  std::string data;
  std::string init;
  std::string teacher;
  std::optional<std::size_t> steps;
  std::optional<std::string> plan;
  std::optional<std::string> distill;
  std::optional<std::uint64_t> seed;
  std::optional<float> lr;
  std::optional<std::size_t> batch_size;
  std::size_t log_every = 0;
};

struct QuantizeArgs {
  std::string in;
  std::string out;
  std::string plan = "qall";
  float beta = 2.0f;
  float eps = 1e-6f;
};

struct EvalArgs {
  std::string model;
  std::string data;
  std::string task = "cls";
  std::string baseline;
  std::string csv;
};

struct BenchArgs {
  std::string model;
  std::size_t reps = 20;
  std::size_t cols = 16;
  std::string csv;
};

struct FitArgs {
  std::string csv;
  std::string out;
};

// Top-level keys of a train config file.
struct TrainFile {
  std::uint64_t model_seed = 1;
  EncoderConfig encoder;
  SyntheticConfig data;
  TrainConfig train;
};

TrainFile read_train_file(const std::string& path) {
  TrainFile f;
  if (path.empty()) return f;
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (k != "model_seed" && k != "encoder" && k != "data" && k != "train") {
      throw ConfigError("config '" + path + "': unknown key '" + k + "'");
    }
  }
  if (j.contains("model_seed")) f.model_seed = j.at("model_seed").get<std::uint64_t>();
  if (j.contains("encoder")) f.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("data")) f.data = j.at("data").get<SyntheticConfig>();
  if (j.contains("train")) f.train = j.at("train").get<TrainConfig>();
  return f;
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  SyntheticConfig cfg;
  cfg.seed = a.seed;
  cfg.classes = a.classes;
  if (a.per_class > 0) cfg.train_per_class = a.per_class;
  if (a.test_per_class > 0) cfg.test_per_class = a.test_per_class;
  cfg.validate();
  echo_config(out, "gen-data", json{{"generator", cfg}, {"out", a.out}});
  const Dataset d = generate_synthetic(cfg);
  save_dataset(d, a.out);
  out << "wrote " << a.out << ": train " << d.train.size << ", test " << d.test.size << ", prompts " << d.prompts.size
      << '\n';
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainFile f = read_train_file(a.config);
  if (a.steps) f.train.steps = *a.steps;
  if (a.plan) f.train.quant_plan.mode = parse_quant_mode(*a.plan);
  if (a.distill) f.train.distill_mode = parse_distill_mode(*a.distill);
  if (a.seed) f.train.seed = *a.seed;
  if (a.lr) f.train.lr = *a.lr;
  if (a.batch_size) f.train.batch_size = *a.batch_size;
  f.train.validate();

  const Dataset data = a.data.empty() ? generate_synthetic(f.data) : load_dataset(a.data);
  DualEncoderModel init = a.init.empty() ? DualEncoderModel::create(f.encoder, f.model_seed, f.train.loss.tau)
                                          : load_model(a.init);
  if (!a.init.empty()) f.encoder = init.config;
  unfreeze(init);
  std::optional<DualEncoderModel> teacher;
  if (!a.teacher.empty()) teacher = load_model(a.teacher);

  json resolved{{"model_seed", f.model_seed}, {"encoder", f.encoder}, {"data", data.config}, {"train", f.train}};
  json sources{{"data", a.data}, {"init", a.init}, {"teacher", a.teacher}};
  echo_config(out, "train", json{{"resolved", resolved}, {"sources", sources}, {"out", a.out}});

  fs::create_directories(a.out);
  TrainResult r = run_training(data, f.train, init, teacher ? &*teacher : nullptr, a.log_every);
  finalize(r.model);
  const fs::path dir(a.out);
  save_model(r.model, dir / "model.tnc", json{{"train", resolved}, {"teacher_source", r.teacher_source}});
  write_file_atomic(dir / "train_log.csv", log_to_csv(r.log));
  write_file_atomic(dir / "config.json", json{{"resolved", resolved}, {"sources", sources}}.dump(2) + "\n");
  const auto& last = r.log.back();
  out << "trained " << r.log.size() << " steps, final total loss " << last.loss.total << '\n';
  out << "wrote " << (dir / "model.tnc").string() << ", " << (dir / "train_log.csv").string() << ", "
      << (dir / "config.json").string() << '\n';
  return kOk;
}

int cmd_quantize(const QuantizeArgs& a, std::ostream& out) {
  const QuantMode mode = parse_quant_mode(a.plan);
  if (mode == QuantMode::None) throw ConfigError("quantize: --plan must be qffn or qall");
  QuantizerConfig q;
  q.beta = a.beta;
  q.epsilon = a.eps;
  q.validate();
  echo_config(out, "quantize", json{{"in", a.in}, {"out", a.out}, {"plan", a.plan}, {"quantizer", q}});

  const Container c = read_container(a.in);
  for (const auto& e : c.entries) {
    if (e.dtype == DType::TernaryPacked) throw FormatError("'" + a.in + "' is already quantized");
  }
  DualEncoderModel model = model_from_container(c);
  model.plan.mode = mode;
  model.quantizer = q;
  freeze_ternary(model);
  json extra = c.metadata.value("extra", json::object());
  extra["quantized_from"] = a.in;
  save_model(model, a.out, extra);
  out << efficiency_text(efficiency_report(fs::path(a.out)));
  return kOk;
}

std::vector<EvalRow> eval_model(const std::string& path, const Dataset& data, EvalTask task) {
  DualEncoderModel m = load_model(path);
  return evaluate(m, data, task);
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const EvalTask task = parse_eval_task(a.task);
  echo_config(out, "eval", json{{"model", a.model}, {"data", a.data}, {"task", a.task}, {"baseline", a.baseline}});
  const Dataset data = load_dataset(a.data);
  std::vector<EvalRow> rows = eval_model(a.model, data, task);
  for (auto& r : rows) r.dataset = "model";
  if (!a.baseline.empty()) {
    std::vector<EvalRow> base = eval_model(a.baseline, data, task);
    const std::size_t n = rows.size();
    for (std::size_t i = 0; i < n; ++i) {
      base[i].dataset = "baseline";
      EvalRow gap{"gap", {"delta_" + rows[i].result.metric, base[i].result.value - rows[i].result.value,
                          rows[i].result.support, 0}};
      rows.push_back(base[i]);
      rows.push_back(gap);
    }
  }
  out << eval_text(rows);
  if (!a.csv.empty()) write_file_atomic(a.csv, eval_csv(rows));
  return kOk;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.reps == 0) throw ConfigError("bench: --reps must be >= 1");
  echo_config(out, "bench", json{{"model", a.model}, {"reps", a.reps}, {"cols", a.cols}});
  const auto bytes = read_file(a.model);
  const Container c = parse(bytes);
  auto rows = bench_container(c, a.reps, a.cols);
  if (rows.empty()) out << "no packed tensors to benchmark\n";
  EfficiencyReport report = efficiency_report(c, rows);
  report.file_bytes = bytes.size();
  out << efficiency_text(report);
  if (!a.csv.empty()) write_file_atomic(a.csv, bench_csv(rows));
  return kOk;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  echo_config(out, "inspect", json{{"file", path}});
  const auto bytes = read_file(path);
  const ContainerLayout layout = parse_layout(bytes);
  out << "version " << layout.version << ", " << layout.records.size() << " tensors, " << layout.file_size
      << " bytes\n";
  out << "metadata " << layout.metadata.dump() << '\n';
  const Container c = parse(bytes);
  for (const auto& r : layout.records) {
    out << r.name << " dtype=" << static_cast<int>(r.dtype) << " (" << to_string(r.dtype) << ") dims="
        << dims_to_string(r.dims) << " offset=" << r.data_offset << " length=" << r.data_length;
    if (r.dtype == DType::TernaryPacked) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", sparsity(decode_ternary(c.entry(r.name))));
      out << " blocks=" << r.data_length / kBlockBytes << " sparsity=" << buf;
    }
    out << '\n';
  }
  return kOk;
}

int cmd_fit_scaling(const FitArgs& a, std::ostream& out) {
  echo_config(out, "fit-scaling", json{{"csv", a.csv}, {"out", a.out}});
  const auto bytes = read_file(a.csv);
  const auto samples = parse_degradation_csv(std::string(bytes.begin(), bytes.end()));
  const ScalingFit fit = scaling_fit(samples);
  out << scaling_fit_text(fit, samples.size());
  out << scaling_fit_csv(fit, samples.size());
  if (!a.out.empty()) write_file_atomic(a.out, scaling_fit_csv(fit, samples.size()));
  return kOk;
}

int fail(std::ostream& err, const char* kind, int code, const std::string& message) {
  err << "error kind=" << kind << " code=" << code << " message=" << single_line(message) << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ternclip: ternary dual-encoder toolkit", "ternclip"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* sc_gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
  sc_gen->add_option("--seed", gen.seed, "Generator seed");
  sc_gen->add_option("--classes", gen.classes, "Number of classes");
  sc_gen->add_option("--per-class", gen.per_class, "Training samples per class");
  sc_gen->add_option("--test-per-class", gen.test_per_class, "Held-out samples per class");
  sc_gen->add_option("--out", gen.out, "Output dataset file")->required();

  TrainArgs tr;
  auto* sc_train = app.add_subcommand("train", "Train a dense or ternary student");
  sc_train->add_option("--config", tr.config, "JSON config file");
  sc_train->add_option("--out", tr.out, "Output directory")->required();
  sc_train->add_option("--data", tr.data, "Dataset file (default: generate from config)");
  sc_train->add_option("--init", tr.init, "Initial model file");
  sc_train->add_option("--teacher", tr.teacher, "Dense teacher model file");
  sc_train->add_option("--steps", tr.steps, "Optimizer steps");
  sc_train->add_option("--plan", tr.plan, "none, qffn or qall");
  sc_train->add_option("--distill", tr.distill, "none, teacher or self");
  sc_train->add_option("--seed", tr.seed, "Shuffle seed");
  sc_train->add_option("--lr", tr.lr, "Peak learning rate");
  sc_train->add_option("--batch-size", tr.batch_size, "Batch size");
  sc_train->add_option("--log-every", tr.log_every, "Progress line interval on stderr");

  QuantizeArgs qa;
  auto* sc_quant = app.add_subcommand("quantize", "Ternarize a dense model into a packed file");
  sc_quant->add_option("--in", qa.in, "Dense model file")->required();
  sc_quant->add_option("--out", qa.out, "Packed model file")->required();
  sc_quant->add_option("--plan", qa.plan, "qffn or qall");
  sc_quant->add_option("--beta", qa.beta, "Scale multiplier");
  sc_quant->add_option("--eps", qa.eps, "Scale epsilon");

  EvalArgs ea;
  auto* sc_eval = app.add_subcommand("eval", "Zero-shot evaluation on the held-out split");
  sc_eval->add_option("--model", ea.model, "Model file")->required();
  sc_eval->add_option("--data", ea.data, "Dataset file")->required();
  sc_eval->add_option("--task", ea.task, "cls, map or retrieval");
  sc_eval->add_option("--baseline", ea.baseline, "Dense baseline model file; prints the gap");
  sc_eval->add_option("--csv", ea.csv, "Write the table as CSV");

  BenchArgs ba;
  auto* sc_bench = app.add_subcommand("bench", "Kernel micro-benchmarks and efficiency report");
  sc_bench->add_option("--model", ba.model, "Model file")->required();
  sc_bench->add_option("--reps", ba.reps, "Repetitions per variant");
  sc_bench->add_option("--cols", ba.cols, "Input columns");
  sc_bench->add_option("--csv", ba.csv, "Write bench rows as CSV");

  std::string inspect_path;
  auto* sc_inspect = app.add_subcommand("inspect", "List the tensors of a container");
  sc_inspect->add_option("--file", inspect_path, "Container file")->required();

  FitArgs fa;
  auto* sc_fit = app.add_subcommand("fit-scaling", "Fit the degradation scaling law");
  sc_fit->add_option("--csv", fa.csv, "CSV of C,q,delta rows")->required();
  sc_fit->add_option("--out", fa.out, "Write the fit as CSV");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, "usage", kUsage, e.what());
  }

  try {
    if (*sc_gen) return cmd_gen_data(gen, out);
    if (*sc_train) return cmd_train(tr, out);
    if (*sc_quant) return cmd_quantize(qa, out);
    if (*sc_eval) return cmd_eval(ea, out);
    if (*sc_bench) return cmd_bench(ba, out);
    if (*sc_inspect) return cmd_inspect(inspect_path, out);
    if (*sc_fit) return cmd_fit_scaling(fa, out);
  } catch (const ConfigError& e) {
    return fail(err, e.kind(), kUsage, e.what());
  } catch (const NumericError& e) {
    return fail(err, e.kind(), kNumeric, e.what());
  } catch (const Error& e) {
    return fail(err, e.kind(), kData, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(err, "config", kUsage, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(err, "io", kData, e.what());
  }
  return fail(err, "usage", kUsage, "no command given");
}

}  // namespace ternclip::cli
