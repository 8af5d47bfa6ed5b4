// One PASS/FAIL line per criterion. `acceptance --only N` runs a single one.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mfb/answers.hpp"
#include "mfb/checkpoint.hpp"
#include "mfb/dataset.hpp"
#include "mfb/fusion.hpp"
#include "mfb/gradcheck_suite.hpp"
#include "mfb/layers.hpp"
#include "mfb/model.hpp"
#include "mfb/trainer.hpp"
#include "oracle.hpp"

using namespace mfb;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clockwork = std::chrono::steady_clock;

double seconds_since(Clockwork::time_point start) {
  return std::chrono::duration<double>(Clockwork::now() - start).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(precision);
  s << v;
  return s.str();
}

Tensor random(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

constexpr NormSpec kNoNorm{false, false};

// ---- 1 ---------------------------------------------------------------------

Outcome factorization_oracle() {
  const auto start = Clockwork::now();
  Rng rng(101);
  double worst = 0.0;
  const int configs = 250;
  for (int c = 0; c < configs; ++c) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6);
    const std::size_t k = 1 + rng.below(3), o = 1 + rng.below(4);
    MfbBlock b({m, n, k, o, 0.0}, false);
    b.init(rng);
    const Tensor x = random({m}, rng), y = random({n}, rng);
    Graph g;
    Var z = mfb::mfb(b, g.input(x), g.input(y), rng, kNoNorm);
    auto expect = oracle::bilinear(vec(x), vec(y), vec(b.proj_x.weight.value),
                                   vec(b.proj_y.weight.value), m, n, k, o);
    for (std::size_t i = 0; i < o; ++i) worst = std::max(worst, std::abs(z.value()[i] - expect[i]));
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-10 && elapsed < 10.0,
          std::to_string(configs) + " configs, max |diff| " + sci(worst) + ", " +
              fmt(elapsed, 2) + " s"};
}

// ---- 2 ---------------------------------------------------------------------

Outcome mlb_special_case() {
  Rng rng(202);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.below(6), n = 1 + rng.below(6), o = 1 + rng.below(4);
    MfbBlock b({m, n, 1, o, 0.0}, true);
    b.init(rng);
    b.proj_x.bias->value = random({o}, rng);
    b.proj_y.bias->value = random({o}, rng);
    const Tensor x = random({m}, rng), y = random({n}, rng);
    Graph g;
    Var fused = mfb::mfb(b, g.input(x), g.input(y), rng, kNoNorm);
    Var raw = mlb_raw(b.proj_x, b.proj_y, g.input(x), g.input(y));
    if (!(fused.value() == raw.value())) ++mismatches;
  }
  return {mismatches == 0, "100 instances, " + std::to_string(mismatches) + " not bit-equal"};
}

// ---- 3 ---------------------------------------------------------------------

Outcome gradient_suite() {
  const auto start = Clockwork::now();
  std::size_t ops = 0, failed = 0;
  double worst = 0.0;
  std::string names;
  for (GradScope scope :
       {GradScope::primitive, GradScope::fusion, GradScope::attention, GradScope::model}) {
    for (const auto& e : run_gradcheck_suite(scope, 0)) {
      ++ops;
      worst = std::max(worst, e.result.worst_rel_error);
      if (!e.result.passed()) {
        ++failed;
        names += " " + e.op;
      }
    }
  }
  const double elapsed = seconds_since(start);
  return {failed == 0 && elapsed < 300.0,
          std::to_string(ops) + " ops, " + std::to_string(failed) + " failed" + names +
              ", worst rel " + sci(worst) + ", " + fmt(elapsed, 1) + " s"};
}

// ---- 4 ---------------------------------------------------------------------

double kld_value(const Tensor& z, const Tensor& y) {
  Graph g;
  return kld_loss(g.input(z), y).value()[0];
}

Outcome kld_identities() {
  Rng rng(404);
  double self_worst = 0.0, grad_worst = 0.0, fd_worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    Parameter logits(random({n}, rng, -2, 2));
    Tensor y({n});
    double total = 0.0;
    for (auto& v : y.data()) total += (v = rng.uniform(0.0, 1.0));
    for (auto& v : y.data()) v /= total;
    if (trial % 3 == 0) {
      y.fill(0.0);
      y[rng.below(n)] = 1.0;
    }
    self_worst = std::max(self_worst, std::abs(kld_value(y, y)));

    Graph g;
    Var z = softmax(g.parameter(logits), 0);
    g.backward(kld_loss(z, y));
    for (std::size_t i = 0; i < n; ++i)
      grad_worst = std::max(grad_worst, std::abs(logits.grad[i] - (z.value()[i] - y[i])));
    auto numeric = oracle::central_difference(
        [&] {
          Graph g2;
          return kld_loss(softmax(g2.input(logits.value), 0), y).value()[0];
        },
        logits.value.data());
    for (std::size_t i = 0; i < n; ++i)
      fd_worst = std::max(fd_worst, std::abs(numeric[i] - (z.value()[i] - y[i])));
  }
  const double ln2 = kld_value(Tensor::vector({0.5, 0.5}), Tensor::vector({1, 0}));
  const double other = kld_value(Tensor::vector({0.25, 0.75}), Tensor::vector({0.5, 0.5}));
  const bool pass = self_worst <= 1e-12 && fd_worst <= 1e-4 && grad_worst <= 1e-4 &&
                    std::abs(ln2 - std::log(2.0)) <= 1e-6 && std::abs(other - 0.143841) <= 1e-6;
  return {pass, "kld(y,y) " + sci(self_worst) + ", |grad-(z-y)| " +
                    sci(grad_worst) + ", |fd-(z-y)| " + sci(fd_worst) +
                    ", values " + fmt(ln2, 6) + " " + fmt(other, 6)};
}

// ---- 5 ---------------------------------------------------------------------

Outcome mfh_contracts() {
  Rng rng(505);
  bool widths = true;
  std::vector<std::size_t> block_counts, model_counts, described;
  for (std::size_t p : {1, 2, 3}) {
    const MfbConfig block{5, 4, 2, 3, 0.0};
    std::vector<MfbBlock> blocks;
    for (std::size_t i = 0; i < p; ++i) {
      blocks.emplace_back(block, true);
      blocks.back().init(rng);
    }
    Graph g;
    Var out = mfh_forward(blocks, g.input(random({5}, rng)), g.input(random({4}, rng)), rng);
    if (out.size() != block.o * p) widths = false;
    block_counts.push_back(count_fusion_params(MfhConfig{block, p}));

    ModelConfig cfg;
    cfg.fusion = FusionKind::mfh;
    cfg.mfh_order = p;
    cfg.question_vocab = 10;
    cfg.num_answers = 7;
    cfg.image_dim = 16;
    cfg.grid_count = 9;
    VqaModel model(cfg);
    model.init();
    if (cfg.fused_width() != cfg.o * p) widths = false;
    Graph g2;
    Rng fwd(1);
    const std::vector<std::size_t> tokens{1, 2, 3};
    model.forward(g2, random({9, 16}, rng, 0, 1), tokens, fwd);
    model_counts.push_back(count_model_params(model).fusion_subtotal);
    described.push_back(describe_params(cfg).fusion_subtotal);
  }
  auto linear = [](const std::vector<std::size_t>& c) {
    return c[1] == 2 * c[0] && c[2] == 3 * c[0];
  };
  const bool pass =
      widths && linear(block_counts) && linear(model_counts) && model_counts == described;
  return {pass, std::string("widths ") + (widths ? "o*p" : "wrong") + ", model fusion subtotal " +
                    std::to_string(model_counts[0]) + " " + std::to_string(model_counts[1]) +
                    " " + std::to_string(model_counts[2])};
}

// ---- training runs ---------------------------------------------------------

struct Split {
  std::vector<VqaSample> train;
  std::vector<VqaSample> val;
};

Split synthetic(double noise) {
  GeneratorConfig gen;
  gen.noise = noise;
  gen.seed = 1;
  Split s;
  s.train = generate(gen, 5000);
  gen.seed = 2;
  s.val = generate(gen, 1000);
  return s;
}

TrainConfig toy_schedule(TargetStrategy strategy) {
  TrainConfig t;
  t.epochs = 10;
  t.batch_size = 16;
  t.strategy = strategy;
  t.seed = 1;
  return t;
}

struct Curve {
  std::vector<double> val;  // per epoch
  double final() const { return val.back(); }
  // First 1-based epoch reaching `fraction` of this curve's final accuracy.
  std::size_t epochs_to(double fraction) const {
    for (std::size_t e = 0; e < val.size(); ++e)
      if (val[e] >= fraction * final()) return e + 1;
    return val.size();
  }
  std::string str() const {
    std::string s;
    for (double v : val) s += (s.empty() ? "" : " ") + fmt(v, 3);
    return s;
  }
};

Curve run(const Split& data, ModelConfig cfg, const TrainConfig& tcfg) {
  cfg.init_seed = tcfg.seed;
  auto prepared = prepare_run(cfg, data.train, data.val);
  VqaModel model(prepared.model);
  model.init();
  auto result = train(model, prepared.tokens, prepared.answers, data.train, data.val, tcfg,
                      [] { return std::int64_t{0}; });
  Curve c;
  for (const auto& r : result.log.split("val")) c.val.push_back(*r.accuracy);
  return c;
}

// ---- 6 ---------------------------------------------------------------------

Outcome l2_ablation() {
  const Split data = synthetic(0.2);
  const auto tcfg = toy_schedule(TargetStrategy::kld);
  ModelConfig standard;
  ModelConfig no_l2;
  no_l2.l2_norm = false;
  const Curve a = run(data, standard, tcfg);
  const Curve b = run(data, no_l2, tcfg);
  std::cout << "  standard: " << a.str() << "\n  no l2:    " << b.str() << "\n";
  return {a.final() >= b.final(),
          "final standard " + fmt(a.final()) + " vs no l2 " + fmt(b.final())};
}

// ---- 7 ---------------------------------------------------------------------

Outcome strategy_comparison() {
  const Split data = synthetic(0.2);
  const Curve kld = run(data, {}, toy_schedule(TargetStrategy::kld));
  const Curve sampling = run(data, {}, toy_schedule(TargetStrategy::answer_sampling));
  const Curve max_prob = run(data, {}, toy_schedule(TargetStrategy::max_prob));
  std::cout << "  kld:             " << kld.str() << "\n  answer_sampling: " << sampling.str()
            << "\n  max_prob:        " << max_prob.str() << "\n";
  const bool accuracy = kld.final() >= max_prob.final() && sampling.final() >= max_prob.final();
  const bool speed = kld.epochs_to(0.95) <= sampling.epochs_to(0.95);
  return {accuracy && speed,
          "final kld " + fmt(kld.final()) + ", answer_sampling " + fmt(sampling.final()) +
              ", max_prob " + fmt(max_prob.final()) + "; epochs to 95%: kld " +
              std::to_string(kld.epochs_to(0.95)) + ", answer_sampling " +
              std::to_string(sampling.epochs_to(0.95))};
}

// ---- 8 ---------------------------------------------------------------------

Outcome learnability() {
  const auto start = Clockwork::now();
  const Split data = synthetic(0.0);
  ModelConfig cfg;
  cfg.lstm_hidden = 32;
  cfg.k = 3;
  cfg.o = 64;
  const auto prepared = prepare_run(cfg, data.train, data.val);
  const auto& m = prepared.model;
  const bool dims = m.image_dim <= 32 && m.grid_count <= 16 && m.num_answers <= 40;
  const Curve c = run(data, cfg, toy_schedule(TargetStrategy::kld));
  double best = 0.0;
  for (double v : c.val) best = std::max(best, v);
  const double elapsed = seconds_since(start);
  std::cout << "  val: " << c.str() << "\n";
  return {dims && best >= 0.90 && elapsed < 900.0,
          "d_img " + std::to_string(m.image_dim) + ", G " + std::to_string(m.grid_count) +
              ", N " + std::to_string(m.num_answers) + ", best val " + fmt(best) + " in " +
              std::to_string(c.val.size()) + " epochs, " + fmt(elapsed, 1) + " s"};
}

// ---- 9 ---------------------------------------------------------------------

Outcome vqa_metric() {
  int wrong = 0;
  for (std::size_t matches = 0; matches <= 10; ++matches) {
    AnswerList answers(matches, "yes");
    answers.resize(10, "no");
    const double expect = matches >= 3 ? 1.0 : static_cast<double>(matches) / 3.0;
    if (vqa_accuracy("yes", answers) != expect) ++wrong;
    AnswerList only(matches, "two");
    if (vqa_accuracy("two", only) != expect) ++wrong;
  }
  return {wrong == 0, "counts 0..10, " + std::to_string(wrong) + " wrong"};
}

// ---- 10 --------------------------------------------------------------------

Outcome determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("mfb_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  GeneratorConfig gen;
  gen.noise = 0.2;
  gen.seed = 7;
  write_dataset(generate(gen, 300), (dir / "a.jsonl").string());
  write_dataset(generate(gen, 300), (dir / "b.jsonl").string());
  const bool data_same =
      read_text_file((dir / "a.jsonl").string()) == read_text_file((dir / "b.jsonl").string());

  const auto train_set = generate(gen, 200);
  gen.seed = 8;
  const auto val_set = generate(gen, 50);
  ModelConfig cfg;
  cfg.lstm_hidden = 8;
  cfg.embed_dim = 6;
  cfg.o = 8;
  cfg.att_hidden = 8;
  const auto prepared = prepare_run(cfg, train_set, val_set);
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batch_size = 16;
  auto once = [&] {
    VqaModel model(prepared.model);
    model.init();
    return train(model, prepared.tokens, prepared.answers, train_set, val_set, tcfg,
                 [] { return std::int64_t{0}; });
  };
  auto first = once();
  const auto second = once();
  const bool log_same = first.log.to_jsonl() == second.log.to_jsonl();

  ModelBundle bundle{first.final, prepared.tokens, prepared.answers};
  const std::string path = (dir / "final.ckpt").string();
  save_checkpoint(bundle, path);
  auto loaded = load_checkpoint(path);
  bool logits_same = true;
  for (const auto& s : val_set) {
    auto tokens = prepared.tokens.encode(s.question);
    Rng r1(0), r2(0);
    Graph g1, g2;
    const Tensor a = bundle.model.forward(g1, s.grid, tokens, r1).logits.value();
    const Tensor b = loaded.model.forward(g2, s.grid, tokens, r2).logits.value();
    if (!(a == b)) logits_same = false;
  }
  fs::remove_all(dir);
  return {data_same && log_same && logits_same,
          std::string("dataset ") + (data_same ? "identical" : "differs") + ", metrics " +
              (log_same ? "identical" : "differ") + ", checkpoint logits " +
              (logits_same ? "bit-exact" : "differ")};
}

struct Criterion {
  const char* name;
  std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"factorization oracle", factorization_oracle},
      {"mlb special case", mlb_special_case},
      {"gradient suite", gradient_suite},
      {"kld identities", kld_identities},
      {"mfh dimension and parameter contracts", mfh_contracts},
      {"l2 normalization ablation", l2_ablation},
      {"target strategy comparison", strategy_comparison},
      {"end-to-end learnability", learnability},
      {"vqa metric conformance", vqa_metric},
      {"determinism and persistence", determinism},
  };
  std::size_t only = 0;
  if (argc == 3 && std::string(argv[1]) == "--only") {
    only = std::strtoul(argv[2], nullptr, 10);
    if (only < 1 || only > criteria.size()) {
      std::cerr << "criterion must be in 1.." << criteria.size() << "\n";
      return 2;
    }
  } else if (argc != 1) {
    std::cerr << "usage: acceptance [--only N]\n";
    return 2;
  }
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && only != i + 1) continue;
    Outcome o;
    try {
      o = criteria[i].check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " ("
              << criteria[i].name << "): " << o.detail << std::endl;
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
