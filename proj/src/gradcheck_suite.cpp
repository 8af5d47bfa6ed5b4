#include "mfb/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "mfb/answers.hpp"
#include "mfb/attention.hpp"
#include "mfb/errors.hpp"
#include "mfb/model.hpp"

namespace mfb {

GradScope parse_grad_scope(const std::string& s) {
  if (s == "primitive") return GradScope::primitive;
  if (s == "fusion") return GradScope::fusion;
  if (s == "attention") return GradScope::attention;
  if (s == "model") return GradScope::model;
  throw ConfigError("unknown gradcheck scope '" + s + "'");
}

const char* to_string(GradScope s) {
  switch (s) {
    case GradScope::primitive: return "primitive";
    case GradScope::fusion: return "fusion";
    case GradScope::attention: return "attention";
    case GradScope::model: return "model";
  }
  return "primitive";
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values keep at least `margin` away from zero.
Tensor away_from_zero(Shape shape, Rng& rng, double margin) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data())
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  return t;
}

// Random linear read-out of `out`, so every output entry matters.
Var project(Var out, Rng& rng) {
  Tensor w = random_tensor(out.shape(), rng);
  return sum_all(hadamard(out, out.graph().constant(std::move(w))));
}

using Builder = std::function<Var(Graph&, std::vector<Var>&)>;

struct Case {
  std::vector<std::unique_ptr<Parameter>> inputs;
  Builder build;
};

GradCheckResult run_case(Case& c) {
  std::vector<Parameter*> params;
  for (auto& p : c.inputs) params.push_back(p.get());
  return check_gradients(params, [&](Graph& g) {
    std::vector<Var> vars;
    for (auto* p : params) vars.push_back(g.parameter(*p));
    return c.build(g, vars);
  });
}

// An op check: `make` draws a fresh random case for each point.
struct OpCheck {
  std::string op;
  std::size_t points;
  std::function<Case(Rng&)> make;
};

Case unary_case(Tensor x, std::function<Var(Var)> f, Rng& rng) {
  Case c;
  c.inputs.push_back(std::make_unique<Parameter>(std::move(x)));
  c.build = [f, seed = rng.next_u64()](Graph&, std::vector<Var>& v) {
    Rng r(seed);
    return project(f(v[0]), r);
  };
  return c;
}

Case binary_case(Tensor a, Tensor b, std::function<Var(Var, Var)> f, Rng& rng) {
  Case c;
  c.inputs.push_back(std::make_unique<Parameter>(std::move(a)));
  c.inputs.push_back(std::make_unique<Parameter>(std::move(b)));
  c.build = [f, seed = rng.next_u64()](Graph&, std::vector<Var>& v) {
    Rng r(seed);
    return project(f(v[0], v[1]), r);
  };
  return c;
}

std::vector<OpCheck> primitive_checks() {
  std::vector<OpCheck> checks;
  auto dim = [](Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  };
  checks.push_back({"matmul", 100, [dim](Rng& rng) {
                      const auto r = dim(rng, 1, 4), s = dim(rng, 1, 4), t = dim(rng, 1, 4);
                      return binary_case(random_tensor({r, s}, rng), random_tensor({s, t}, rng),
                                         [](Var a, Var b) { return matmul(a, b); }, rng);
                    }});
  checks.push_back({"hadamard", 100, [dim](Rng& rng) {
                      const Shape s{dim(rng, 1, 6)};
                      return binary_case(random_tensor(s, rng), random_tensor(s, rng),
                                         [](Var a, Var b) { return hadamard(a, b); }, rng);
                    }});
  checks.push_back({"add", 100, [dim](Rng& rng) {
                      const Shape s{dim(rng, 1, 3), dim(rng, 1, 3)};
                      return binary_case(random_tensor(s, rng), random_tensor(s, rng),
                                         [](Var a, Var b) { return add(a, b); }, rng);
                    }});
  checks.push_back({"sub", 100, [dim](Rng& rng) {
                      const Shape s{dim(rng, 1, 3), dim(rng, 1, 3)};
                      return binary_case(random_tensor(s, rng), random_tensor(s, rng),
                                         [](Var a, Var b) { return sub(a, b); }, rng);
                    }});
  checks.push_back({"scale", 100, [dim](Rng& rng) {
                      const double f = rng.uniform(-2, 2);
                      return unary_case(random_tensor({dim(rng, 1, 6)}, rng),
                                        [f](Var x) { return scale(x, f); }, rng);
                    }});
  checks.push_back({"relu", 100, [dim](Rng& rng) {
                      return unary_case(away_from_zero({dim(rng, 1, 6)}, rng, 1e-3),
                                        [](Var x) { return relu(x); }, rng);
                    }});
  checks.push_back({"tanh", 100, [dim](Rng& rng) {
                      return unary_case(random_tensor({dim(rng, 1, 6)}, rng),
                                        [](Var x) { return tanh(x); }, rng);
                    }});
  checks.push_back({"sigmoid", 100, [dim](Rng& rng) {
                      return unary_case(random_tensor({dim(rng, 1, 6)}, rng),
                                        [](Var x) { return sigmoid(x); }, rng);
                    }});
  checks.push_back({"exp", 100, [dim](Rng& rng) {
                      return unary_case(random_tensor({dim(rng, 1, 6)}, rng),
                                        [](Var x) { return exp(x); }, rng);
                    }});
  checks.push_back({"log", 100, [dim](Rng& rng) {
                      // log is only defined for positive inputs.
                      return unary_case(random_tensor({dim(rng, 1, 6)}, rng, 0.1, 2.0),
                                        [](Var x) { return log(x); }, rng);
                    }});
  checks.push_back({"concat", 100, [dim](Rng& rng) {
                      const std::size_t axis = rng.below(2);
                      Shape a{dim(rng, 1, 3), dim(rng, 1, 3)}, b = a;
                      b[axis] = dim(rng, 1, 3);
                      return binary_case(random_tensor(a, rng), random_tensor(b, rng),
                                         [axis](Var x, Var y) { return concat({x, y}, axis); },
                                         rng);
                    }});
  checks.push_back({"reshape", 100, [dim](Rng& rng) {
                      const auto r = dim(rng, 1, 3), c = dim(rng, 1, 3);
                      return unary_case(random_tensor({r, c}, rng),
                                        [r, c](Var x) { return reshape(x, {c * r}); }, rng);
                    }});
  checks.push_back({"transpose", 100, [dim](Rng& rng) {
                      return unary_case(random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng),
                                        [](Var x) { return transpose(x); }, rng);
                    }});
  checks.push_back({"sum", 100, [dim](Rng& rng) {
                      const std::size_t axis = rng.below(3);
                      return unary_case(
                          random_tensor({dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3)}, rng),
                          [axis](Var x) { return sum(x, axis); }, rng);
                    }});
  checks.push_back({"sum_all", 100, [dim](Rng& rng) {
                      return unary_case(random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng),
                                        [](Var x) { return sum_all(x); }, rng);
                    }});
  checks.push_back({"broadcast_rows", 100, [dim](Rng& rng) {
                      const auto rows = dim(rng, 1, 4);
                      return unary_case(random_tensor({dim(rng, 1, 4)}, rng),
                                        [rows](Var x) { return broadcast_rows(x, rows); }, rng);
                    }});
  checks.push_back({"slice", 100, [dim](Rng& rng) {
                      const auto n = dim(rng, 2, 6);
                      const auto start = static_cast<std::size_t>(rng.below(n - 1));
                      const auto len = 1 + static_cast<std::size_t>(rng.below(n - start));
                      return unary_case(random_tensor({2, n}, rng), [start, len](Var x) {
                        return slice(x, 1, start, len);
                      }, rng);
                    }});
  checks.push_back({"gather_rows", 100, [dim](Rng& rng) {
                      const auto rows = dim(rng, 1, 5);
                      std::vector<std::size_t> ids(dim(rng, 1, 6));
                      for (auto& id : ids) id = rng.below(rows);
                      return unary_case(random_tensor({rows, dim(rng, 1, 3)}, rng),
                                        [ids](Var x) { return gather_rows(x, ids); }, rng);
                    }});
  checks.push_back({"softmax", 100, [dim](Rng& rng) {
                      const std::size_t axis = rng.below(2);
                      return unary_case(random_tensor({dim(rng, 1, 4), dim(rng, 1, 6)}, rng),
                                        [axis](Var x) { return softmax(x, axis); }, rng);
                    }});
  checks.push_back({"dropout", 100, [dim](Rng& rng) {
                      const auto mask_seed = rng.next_u64();
                      return unary_case(random_tensor({dim(rng, 1, 8)}, rng), [mask_seed](Var x) {
                        Rng r(mask_seed);
                        return dropout({0.5, Mode::training}, x, r);
                      }, rng);
                    }});
  return checks;
}

struct ModuleCheck {
  std::string op;
  std::size_t points;
  std::function<GradCheckResult(Rng&)> run;
};

std::vector<Parameter*> linear_params(LinearLayer& l) {
  std::vector<Parameter*> out{&l.weight};
  if (l.bias) out.push_back(&*l.bias);
  return out;
}

void randomize_biases(LinearLayer& l, Rng& rng) {
  if (l.bias)
    for (auto& v : l.bias->value.data()) v = rng.uniform(-0.5, 0.5);
}

std::vector<ModuleCheck> fusion_checks() {
  std::vector<ModuleCheck> checks;
  auto small = [](Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
  };
  checks.push_back({"sum_pool", 20, [small](Rng& rng) {
                      const auto k = small(rng, 1, 3), o = small(rng, 1, 4);
                      Parameter x(random_tensor({2, k * o}, rng));
                      const auto ws = rng.next_u64();
                      std::vector<Parameter*> ps{&x};
                      return check_gradients(ps, [&](Graph& g) {
                        Rng r(ws);
                        return project(sum_pool(g.parameter(x), k), r);
                      });
                    }});
  checks.push_back({"power_norm", 20, [small](Rng& rng) {
                      Parameter x(away_from_zero({small(rng, 1, 6)}, rng, 1e-2));
                      const auto ws = rng.next_u64();
                      std::vector<Parameter*> ps{&x};
                      return check_gradients(ps, [&](Graph& g) {
                        Rng r(ws);
                        return project(power_norm(g.parameter(x)), r);
                      });
                    }});
  checks.push_back({"l2_norm", 20, [small](Rng& rng) {
                      Parameter x(random_tensor({small(rng, 1, 3), small(rng, 2, 8)}, rng));
                      const auto ws = rng.next_u64();
                      std::vector<Parameter*> ps{&x};
                      return check_gradients(ps, [&](Graph& g) {
                        Rng r(ws);
                        return project(l2_norm(g.parameter(x)), r);
                      });
                    }});
  auto block_check = [small](Rng& rng, std::size_t order, NormSpec norm) {
    MfbConfig cfg{small(rng, 2, 5), small(rng, 2, 5), small(rng, 1, 3), small(rng, 2, 4), 0.0};
    std::vector<MfbBlock> blocks;
    std::vector<Parameter*> ps;
    for (std::size_t i = 0; i < order; ++i) {
      blocks.emplace_back(cfg);
      blocks.back().init(rng);
      randomize_biases(blocks.back().proj_x, rng);
      randomize_biases(blocks.back().proj_y, rng);
    }
    for (auto& b : blocks)
      for (auto* l : {&b.proj_x, &b.proj_y})
        for (auto* p : linear_params(*l)) ps.push_back(p);
    Parameter x(random_tensor({cfg.m}, rng)), y(random_tensor({cfg.n}, rng));
    // Redraw inputs until every pooled value sits clear of the power-norm kink.
    for (;;) {
      Graph g;
      Rng r(0);
      Var pooled = mfh_forward(blocks, g.constant(x.value), g.constant(y.value), r, {false, false});
      double smallest = 1e300;
      for (double v : pooled.value().data()) smallest = std::min(smallest, std::abs(v));
      if (smallest >= 0.05) break;
      x.value = random_tensor({cfg.m}, rng);
      y.value = random_tensor({cfg.n}, rng);
    }
    ps.push_back(&x);
    ps.push_back(&y);
    const auto ws = rng.next_u64();
    return check_gradients(ps, [&](Graph& g) {
      Rng r(ws);
      Var out = mfh_forward(blocks, g.parameter(x), g.parameter(y), r, norm);
      return project(out, r);
    });
  };
  checks.push_back(
      {"mfb", 20, [block_check](Rng& rng) { return block_check(rng, 1, NormSpec{}); }});
  checks.push_back(
      {"mfh_p2", 20, [block_check](Rng& rng) { return block_check(rng, 2, NormSpec{}); }});
  checks.push_back({"mlb", 20, [small](Rng& rng) {
                      const auto m = small(rng, 1, 5), n = small(rng, 1, 5), o = small(rng, 1, 4);
                      LinearLayer px(m, o), py(n, o);
                      px.init(rng);
                      py.init(rng);
                      randomize_biases(px, rng);
                      randomize_biases(py, rng);
                      Parameter x(random_tensor({m}, rng)), y(random_tensor({n}, rng));
                      std::vector<Parameter*> ps{&px.weight, &*px.bias, &py.weight, &*py.bias, &x,
                                                 &y};
                      const auto ws = rng.next_u64();
                      return check_gradients(ps, [&](Graph& g) {
                        Rng r(ws);
                        return project(mlb(px, py, g.parameter(x), g.parameter(y)), r);
                      });
                    }});
  return checks;
}

std::vector<ModuleCheck> attention_checks() {
  std::vector<ModuleCheck> checks;
  checks.push_back({"lstm_step", 5, [](Rng& rng) {
                      LstmCell cell(3, 4);
                      cell.init(rng);
                      for (auto& v : cell.bias.value.data()) v = rng.uniform(-0.5, 0.5);
                      std::vector<Parameter> xs;
                      for (int t = 0; t < 3; ++t) xs.emplace_back(random_tensor({3}, rng));
                      std::vector<Parameter*> ps{&cell.w_input, &cell.w_hidden, &cell.bias};
                      for (auto& x : xs) ps.push_back(&x);
                      return check_gradients(ps, [&](Graph& g) {
                        LstmState s{g.constant(Tensor({4})), g.constant(Tensor({4}))};
                        for (auto& x : xs) s = lstm_step(cell, g.parameter(x), s.h, s.c);
                        return sum_all(s.h);
                      });
                    }});
  checks.push_back({"encode_question", 5, [](Rng& rng) {
                      EmbeddingLayer emb(6, 3);
                      LstmCell cell(3, 4);
                      emb.init(rng);
                      cell.init(rng);
                      std::vector<std::size_t> tokens{1, 4, 2};
                      std::vector<Parameter*> ps{&emb.table, &cell.w_input, &cell.w_hidden,
                                                 &cell.bias};
                      const auto ws = rng.next_u64();
                      return check_gradients(ps, [&](Graph& g) {
                        Rng r(ws);
                        auto enc = encode_question(emb, cell, g, tokens, 5);
                        return add(project(enc.all_states, r), project(enc.last_state, r));
                      });
                    }});
  checks.push_back({"question_self_attention", 5, [](Rng& rng) {
                      AttentionHead head(4, 5, 2);
                      head.init(rng);
                      randomize_biases(head.hidden, rng);
                      Parameter states(random_tensor({5, 4}, rng));
                      const std::vector<bool> mask{false, false, false, true, true};
                      std::vector<Parameter*> ps = linear_params(head.hidden);
                      for (auto* p : linear_params(head.logits)) ps.push_back(p);
                      ps.push_back(&states);
                      const auto ws = rng.next_u64();
                      return check_gradients(ps, [&](Graph& g) {
                        Rng r(ws);
                        auto out = question_self_attention(head, g.parameter(states), mask);
                        return add(project(out.attended, r), project(out.weights, r));
                      });
                    }});
  checks.push_back({"image_attention", 5, [](Rng& rng) {
                      MfbConfig cfg{3, 4, 2, 3, 0.0};
                      MfbBlock fuse(cfg);
                      fuse.init(rng);
                      randomize_biases(fuse.proj_x, rng);
                      randomize_biases(fuse.proj_y, rng);
                      AttentionHead head(cfg.o, 4, 2);
                      head.init(rng);
                      randomize_biases(head.hidden, rng);
                      Parameter grids(random_tensor({4, 3}, rng)), q(random_tensor({4}, rng));
                      std::vector<Parameter*> ps;
                      for (auto* l : {&fuse.proj_x, &fuse.proj_y, &head.hidden, &head.logits})
                        for (auto* p : linear_params(*l)) ps.push_back(p);
                      ps.push_back(&grids);
                      ps.push_back(&q);
                      const auto ws = rng.next_u64();
                      return check_gradients(ps, [&](Graph& g) {
                        Rng r(ws);
                        auto out =
                            image_attention(head, fuse, g.parameter(grids), g.parameter(q), r);
                        return add(project(out.attended, r), project(out.weights, r));
                      });
                    }});
  return checks;
}

ModelConfig tiny_model(Architecture arch, FusionKind fusion) {
  ModelConfig c;
  c.architecture = arch;
  c.fusion = fusion;
  c.question_vocab = 6;
  c.num_answers = 5;
  c.max_len = 4;
  c.embed_dim = 3;
  c.lstm_hidden = 4;
  c.image_dim = 6;
  c.grid_count = 3;
  c.k = 2;
  c.o = 3;
  c.mfh_order = 2;
  c.q_glimpses = 2;
  c.i_glimpses = 2;
  c.att_hidden = 4;
  return c;
}

GradCheckResult model_check(ModelConfig cfg, Rng& rng) {
  cfg.init_seed = rng.next_u64();
  VqaModel model(cfg);
  model.init();
  for (auto& [name, p] : model.named_parameters())
    if (name.ends_with(".bias") && name != "lstm.bias")
      for (auto& v : p->value.data()) v = rng.uniform(-0.3, 0.3);
  model.set_mode(Mode::inference);
  Tensor grids = random_tensor({cfg.grid_count, cfg.image_dim}, rng, 0.0, 1.0);
  const std::vector<std::size_t> tokens{2, 5, 1};
  Tensor target = random_tensor({cfg.num_answers}, rng, 0.0, 1.0);
  double total = 0.0;
  for (double v : target.data()) total += v;
  for (auto& v : target.data()) v /= total;
  std::vector<Parameter*> ps;
  for (auto& [_, p] : model.named_parameters()) ps.push_back(p);
  Rng unused(0);
  return check_gradients(ps, [&](Graph& g) {
    Var logits = model.forward(g, grids, tokens, unused).logits;
    return kld_loss(softmax(logits, 0), target);
  });
}

std::vector<ModuleCheck> model_checks() {
  std::vector<ModuleCheck> checks;
  checks.push_back({"kld_loss", 20, [](Rng& rng) {
                      const std::size_t n = 2 + rng.below(5);
                      Parameter logits(random_tensor({n}, rng));
                      Tensor y = random_tensor({n}, rng, 0.0, 1.0);
                      y[rng.below(n)] = 0.0;  // exercise the 0 log 0 convention
                      double total = 0.0;
                      for (double v : y.data()) total += v;
                      for (auto& v : y.data()) v /= total;
                      std::vector<Parameter*> ps{&logits};
                      return check_gradients(ps, [&](Graph& g) {
                        return kld_loss(softmax(g.parameter(logits), 0), y);
                      });
                    }});
  checks.push_back({"cross_entropy", 20, [](Rng& rng) {
                      const std::size_t n = 2 + rng.below(5);
                      Parameter logits(random_tensor({n}, rng));
                      const std::size_t target = rng.below(n);
                      std::vector<Parameter*> ps{&logits};
                      return check_gradients(ps, [&](Graph& g) {
                        return cross_entropy(softmax(g.parameter(logits), 0), target);
                      });
                    }});
  for (auto [arch, fusion, name] :
       {std::tuple{Architecture::baseline, FusionKind::mfb, "baseline_mfb"},
        std::tuple{Architecture::baseline, FusionKind::mfh, "baseline_mfh"},
        std::tuple{Architecture::baseline, FusionKind::mlb, "baseline_mlb"},
        std::tuple{Architecture::coattention, FusionKind::mfb, "coattention_mfb"},
        std::tuple{Architecture::coattention, FusionKind::mfh, "coattention_mfh"}}) {
    const ModelConfig cfg = tiny_model(arch, fusion);
    checks.push_back({name, 2, [cfg](Rng& rng) { return model_check(cfg, rng); }});
  }
  return checks;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(GradScope scope, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckEntry> entries;
  if (scope == GradScope::primitive) {
    for (auto& check : primitive_checks()) {
      GradCheckEntry e{check.op, check.points, {}};
      for (std::size_t i = 0; i < check.points; ++i) {
        Case c = check.make(rng);
        e.result.merge(run_case(c));
      }
      entries.push_back(std::move(e));
    }
    return entries;
  }
  std::vector<ModuleCheck> checks;
  switch (scope) {
    case GradScope::fusion: checks = fusion_checks(); break;
    case GradScope::attention: checks = attention_checks(); break;
    case GradScope::model: checks = model_checks(); break;
    case GradScope::primitive: break;
  }
  for (auto& check : checks) {
    GradCheckEntry e{check.op, check.points, {}};
    for (std::size_t i = 0; i < check.points; ++i) e.result.merge(check.run(rng));
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace mfb
