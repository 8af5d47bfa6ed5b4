#include "mfb/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "mfb/checkpoint.hpp"
#include "mfb/dataset.hpp"
#include "mfb/errors.hpp"
#include "mfb/gradcheck_suite.hpp"
#include "mfb/trainer.hpp"

namespace mfb::cli {

namespace {

struct GenDataArgs {
  std::string config;
  std::string out;
  std::size_t count = 0;
};

struct TrainArgs {
  std::string data;
  std::string val;
  std::string model_config;
  std::string train_config;
  std::string out_dir;
  bool fixed_clock = false;
};

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  bool oracle = false;
  std::string constant_answer;
};

struct GradcheckArgs {
  std::string scope = "primitive";
  std::string corrupt_op;
};

struct InspectArgs {
  std::string checkpoint;
};

std::string fmt_acc(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

int gen_data(const GenDataArgs& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  if (a.count == 0) throw ConfigError("--count must be at least 1");
  GeneratorConfig cfg;
  if (!a.config.empty()) cfg = generator_config_from_json(read_text_file(a.config));
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const auto samples = generate(cfg, a.count);
  write_dataset(samples, a.out);
  const auto summary = summarize(samples);
  out << "samples " << summary.samples << "\n";
  for (const auto& [type, n] : summary.answer_types) out << "type " << type << " " << n << "\n";
  out << "question_vocab " << summary.question_vocab << "\n";
  out << "answer_vocab " << summary.answer_vocab << "\n";
  return kOk;
}

int train_cmd(const TrainArgs& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  // Parse configs before touching data so config errors win.
  ModelConfig mcfg;
  if (!a.model_config.empty()) mcfg = model_config_from_json(read_text_file(a.model_config));
  TrainConfig tcfg;
  tcfg.decay_factor = default_decay_factor(mcfg.fusion);
  if (!a.train_config.empty())
    tcfg = train_config_from_json(read_text_file(a.train_config), mcfg.fusion);
  if (seed) {
    tcfg.seed = *seed;
    mcfg.init_seed = *seed;
  }
  tcfg.validate();

  const auto train_set = read_dataset(a.data);
  const auto val_set = read_dataset(a.val);
  if (val_set.empty()) throw MismatchError(a.val + ": validation set is empty");
  auto prepared = prepare_run(mcfg, train_set, val_set);
  check_compatible(prepared.model, prepared.tokens, val_set);

  VqaModel model(prepared.model);
  model.init();
  Clock clock = a.fixed_clock ? Clock([] { return std::int64_t{0}; }) : steady_clock_ms();
  auto result = train(model, prepared.tokens, prepared.answers, train_set, val_set, tcfg, clock);

  std::filesystem::create_directories(a.out_dir);
  const std::filesystem::path dir(a.out_dir);
  ModelBundle best{result.best, prepared.tokens, prepared.answers};
  ModelBundle final{result.final, prepared.tokens, prepared.answers};
  save_checkpoint(best, (dir / "best.ckpt").string());
  save_checkpoint(final, (dir / "final.ckpt").string());
  write_text_file((dir / "metrics.jsonl").string(), result.log.to_jsonl());

  out << "iterations " << result.iterations << "\n";
  if (result.dropped_samples > 0) out << "dropped_samples " << result.dropped_samples << "\n";
  for (const auto& r : result.log.split("val"))
    out << "epoch " << r.epoch << " val_accuracy " << fmt_acc(r.accuracy.value_or(0.0)) << "\n";
  out << "best_epoch " << result.best_epoch << " best_accuracy " << fmt_acc(result.best_accuracy)
      << "\n";
  return kOk;
}

std::string modal_answer(const AnswerList& answers) {
  std::map<std::string, std::size_t> counts;
  for (const auto& a : answers) ++counts[normalize_answer(a)];
  std::string best;
  std::size_t best_count = 0;
  for (const auto& [a, c] : counts)
    if (c > best_count) best = a, best_count = c;
  return best;
}

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  if (a.oracle && !a.constant_answer.empty())
    throw ConfigError("--oracle and --constant-answer are exclusive");
  const auto samples = read_dataset(a.data);
  if (samples.empty()) throw MismatchError(a.data + ": no samples to evaluate");
  std::vector<std::string> predictions;
  if (a.oracle) {
    for (const auto& s : samples) predictions.push_back(modal_answer(s.answers));
  } else if (!a.constant_answer.empty()) {
    predictions.assign(samples.size(), a.constant_answer);
  } else {
    if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
    auto bundle = load_checkpoint(a.checkpoint);
    check_compatible(bundle.model.config(), bundle.tokens, samples);
    predictions = predict(bundle.model, bundle.tokens, bundle.answers, samples);
  }
  const auto report = score_predictions(predictions, samples);
  out << "samples " << report.count << "\n";
  out << "overall " << fmt_acc(report.accuracy) << "\n";
  for (const char* type : {"yes/no", "number", "other"}) {
    auto it = report.by_type.find(type);
    if (it == report.by_type.end()) {
      out << type << " - (n=0)\n";
    } else {
      out << type << " " << fmt_acc(it->second.accuracy) << " (n=" << it->second.count << ")\n";
    }
  }
  return kOk;
}

int gradcheck_cmd(const GradcheckArgs& a, std::optional<std::uint64_t> seed, std::ostream& out) {
  const GradScope scope = parse_grad_scope(a.scope);
  if (!a.corrupt_op.empty()) debug::corrupt_backward(a.corrupt_op);
  const auto entries = run_gradcheck_suite(scope, seed.value_or(0));
  if (!a.corrupt_op.empty()) debug::corrupt_backward("");
  bool ok = true;
  out << std::left << std::setw(26) << "op" << std::setw(8) << "points" << std::setw(14)
      << "worst_rel" << "status\n";
  for (const auto& e : entries) {
    const bool pass = e.result.passed();
    ok = ok && pass;
    std::ostringstream rel;
    rel << std::scientific << std::setprecision(3) << e.result.worst_rel_error;
    out << std::left << std::setw(26) << e.op << std::setw(8) << e.points << std::setw(14)
        << rel.str() << (pass ? "PASS" : "FAIL") << "\n";
  }
  for (const auto& e : entries)
    if (!e.result.passed()) out << "failed: " << e.op << " at " << e.result.worst_location << "\n";
  return ok ? kOk : kCheckFailed;
}

int inspect_cmd(const InspectArgs& a, std::ostream& out) {
  auto bundle = load_checkpoint(a.checkpoint);
  const auto& cfg = bundle.model.config();
  out << "architecture " << to_string(cfg.architecture) << " fusion " << to_string(cfg.fusion)
      << "\n";
  const auto table = count_model_params(bundle.model);
  for (const auto& [name, n] : table.rows)
    out << std::left << std::setw(36) << name << n << "\n";
  out << std::left << std::setw(36) << "total" << table.total << "\n";
  out << std::left << std::setw(36) << "fusion_subtotal" << table.fusion_subtotal << "\n";
  return kOk;
}

}  // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Factorized bilinear pooling for toy visual question answering"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--config", gen.config, "Generator config (JSON)");
  gen_cmd->add_option("--out", gen.out, "Output dataset (JSONL)")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples")->required();

  TrainArgs tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a model");
  tr_cmd->add_option("--data", tr.data, "Training dataset")->required();
  tr_cmd->add_option("--val", tr.val, "Validation dataset")->required();
  tr_cmd->add_option("--model-config", tr.model_config, "Model config (JSON)");
  tr_cmd->add_option("--train-config", tr.train_config, "Training config (JSON)");
  tr_cmd->add_option("--out-dir", tr.out_dir, "Output directory")->required();
  tr_cmd->add_flag("--fixed-clock", tr.fixed_clock, "Write 0 for every wallclock_ms");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev_cmd->add_option("--data", ev.data, "Dataset")->required();
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint");
  ev_cmd->add_flag("--oracle", ev.oracle, "Predict the annotators' modal answer");
  ev_cmd->add_option("--constant-answer", ev.constant_answer, "Predict this answer everywhere");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Run finite-difference gradient checks");
  gc_cmd->add_option("--scope", gc.scope, "primitive|fusion|attention|model")
      ->check(CLI::IsMember({"primitive", "fusion", "attention", "model"}));
  gc_cmd->add_option("--corrupt-op", gc.corrupt_op)->group("");

  InspectArgs in;
  auto* in_cmd = app.add_subcommand("inspect", "Print a checkpoint's parameter table");
  in_cmd->add_option("--checkpoint", in.checkpoint, "Checkpoint")->required();

  for (auto* sub : {gen_cmd, tr_cmd, ev_cmd, gc_cmd, in_cmd})
    sub->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen, seed, out);
    if (*tr_cmd) return train_cmd(tr, seed, out);
    if (*ev_cmd) return eval_cmd(ev, out);
    if (*gc_cmd) return gradcheck_cmd(gc, seed, out);
    if (*in_cmd) return inspect_cmd(in, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const MismatchError& e) {
    err << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const ShapeError& e) {
    err << "mismatch: " << e.what() << "\n";
    return kMismatch;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}

int run(int argc, char** argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace mfb::cli
