#include "mfb/trainer.hpp"

#include <chrono>
#include <cmath>

#include "json_util.hpp"
#include "mfb/errors.hpp"

namespace mfb {

const char* to_string(TargetStrategy s) {
  switch (s) {
    case TargetStrategy::max_prob: return "max_prob";
    case TargetStrategy::answer_sampling: return "answer_sampling";
    case TargetStrategy::kld: return "kld";
  }
  return "kld";
}

TargetStrategy parse_strategy(const std::string& s) {
  if (s == "max_prob") return TargetStrategy::max_prob;
  if (s == "answer_sampling") return TargetStrategy::answer_sampling;
  if (s == "kld") return TargetStrategy::kld;
  throw ConfigError("unknown strategy '" + s + "' (expected max_prob | answer_sampling | kld)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train config: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("train config: base_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0))
    throw ConfigError("train config: decay_factor must be in (0, 1]");
  if (decay_interval == 0) throw ConfigError("train config: decay_interval must be positive");
}

double default_decay_factor(FusionKind fusion) { return fusion == FusionKind::mfh ? 0.25 : 0.5; }

TrainConfig train_config_from_json(const std::string& text, FusionKind fusion) {
  const auto j = detail::parse_json(text, "train config");
  detail::StrictObject obj(j, "train config");
  TrainConfig c;
  c.decay_factor = default_decay_factor(fusion);
  obj.read("epochs", c.epochs);
  obj.read("batch_size", c.batch_size);
  obj.read("base_lr", c.base_lr);
  obj.read("decay_factor", c.decay_factor);
  obj.read("decay_interval", c.decay_interval);
  c.strategy = parse_strategy(obj.read_string("strategy", to_string(c.strategy)));
  obj.read("seed", c.seed);
  obj.finish();
  c.validate();
  return c;
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
  const auto steps = static_cast<double>(epoch / cfg.decay_interval);
  return cfg.base_lr * std::pow(cfg.decay_factor, steps);
}

void adam_step(AdamState& state, const NamedParameters& params, double lr) {
  for (const auto& [name, p] : params)
    if (!p->grad.all_finite()) throw NumericalError("non-finite gradient in parameter '" + name + "'");
  ++state.t;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (const auto& [name, p] : params) {
    auto [it, fresh] = state.moments.try_emplace(name);
    auto& mom = it->second;
    if (fresh || mom.m.shape() != p->value.shape()) {
      mom.m = Tensor::zeros_like(p->value);
      mom.v = Tensor::zeros_like(p->value);
    }
    double* theta = p->value.ptr();
    const double* g = p->grad.ptr();
    double* m = mom.m.ptr();
    double* v = mom.v.ptr();
    for (std::size_t i = 0, n = p->value.size(); i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

void MetricsLog::append(MetricRecord record) {
  if (!records_.empty() && record.iter < records_.back().iter)
    throw std::logic_error("metrics log: iteration index went backwards");
  records_.push_back(std::move(record));
}

std::vector<MetricRecord> MetricsLog::split(const std::string& name) const {
  std::vector<MetricRecord> out;
  for (const auto& r : records_)
    if (r.split == name) out.push_back(r);
  return out;
}

std::string MetricsLog::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    nlohmann::ordered_json j;
    j["iter"] = r.iter;
    j["epoch"] = r.epoch;
    j["split"] = r.split;
    if (r.loss) j["loss"] = *r.loss;
    if (r.accuracy) j["accuracy"] = *r.accuracy;
    j["lr"] = r.lr;
    j["wallclock_ms"] = r.wallclock_ms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

EvalReport score_predictions(std::span<const std::string> predictions,
                             std::span<const VqaSample> samples) {
  if (predictions.size() != samples.size())
    throw MismatchError("score_predictions: prediction count does not match sample count");
  EvalReport report;
  for (auto t : {AnswerType::yes_no, AnswerType::number, AnswerType::other})
    report.by_type[answer_type_name(t)] = {};
  double total = 0.0;
  std::map<std::string, double> sums;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double acc = vqa_accuracy(predictions[i], samples[i].answers);
    total += acc;
    const std::string type = answer_type_name(classify_answer_type(samples[i].answers));
    sums[type] += acc;
    ++report.by_type[type].count;
  }
  report.count = samples.size();
  report.accuracy = samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
  for (auto& [type, t] : report.by_type)
    if (t.count) t.accuracy = sums[type] / static_cast<double>(t.count);
  return report;
}

std::vector<std::string> predict(VqaModel& model, const TokenVocab& tokens,
                                 const AnswerVocab& answers, std::span<const VqaSample> samples) {
  if (answers.size() != model.config().num_answers)
    throw MismatchError("answer vocabulary size does not match the model");
  const Mode previous = model.mode();
  model.set_mode(Mode::inference);
  Rng unused(0);
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto ids = tokens.encode(s.question);
    Graph g;
    const Tensor& logits = model.forward(g, s.grid, ids, unused).logits.value();
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    out.push_back(answers.answer(best));
  }
  model.set_mode(previous);
  return out;
}

EvalReport evaluate(VqaModel& model, const TokenVocab& tokens, const AnswerVocab& answers,
                    std::span<const VqaSample> samples) {
  const auto predictions = predict(model, tokens, answers, samples);
  return score_predictions(predictions, samples);
}

Clock steady_clock_ms() {
  const auto start = std::chrono::steady_clock::now();
  return [start] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 start)
        .count();
  };
}

namespace {

struct Prepared {
  const VqaSample* sample;
  std::vector<std::size_t> tokens;
  Tensor distribution;
  std::size_t modal_answer;
};

}  // namespace

TrainResult train(const VqaModel& initial, const TokenVocab& tokens, const AnswerVocab& answers,
                  std::span<const VqaSample> train_set, std::span<const VqaSample> val_set,
                  const TrainConfig& cfg, Clock clock) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: training set is empty");
  if (val_set.empty()) throw ConfigError("train: validation set is empty");
  if (answers.size() != initial.config().num_answers)
    throw MismatchError("train: answer vocabulary size does not match the model");
  if (!clock) clock = [] { return std::int64_t{0}; };

  TrainResult result{initial, initial, {}, -1.0, 0, 0, 0};
  std::vector<Prepared> prepared;
  prepared.reserve(train_set.size());
  for (const auto& s : train_set) {
    bool any = false;
    for (const auto& a : s.answers) any = any || answers.id(a).has_value();
    if (!any) {
      ++result.dropped_samples;
      continue;
    }
    prepared.push_back({&s, tokens.encode(s.question), build_distribution(s.answers, answers).probs,
                        max_prob_target(s.answers, answers)});
  }
  if (prepared.empty()) throw ConfigError("train: no training sample has an in-vocabulary answer");

  VqaModel& model = result.final;
  auto params = model.named_parameters();
  AdamState adam;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(prepared.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t iter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    rng.shuffle(order);
    model.set_mode(Mode::training);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      model.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const Prepared& p = prepared[order[b]];
        Graph g;
        Var z = softmax(model.forward(g, p.sample->grid, p.tokens, rng).logits, 0);
        Var loss;
        switch (cfg.strategy) {
          case TargetStrategy::kld: loss = kld_loss(z, p.distribution); break;
          case TargetStrategy::max_prob: loss = cross_entropy(z, p.modal_answer); break;
          case TargetStrategy::answer_sampling:
            loss = cross_entropy(z, answer_sampling_target(p.sample->answers, answers, rng));
            break;
        }
        const double value = loss.value()[0];
        if (!std::isfinite(value))
          throw NumericalError("non-finite loss at iteration " + std::to_string(iter + 1));
        batch_loss += value;
        g.backward(scale(loss, inv_batch));
      }
      adam_step(adam, params, lr);
      ++iter;
      result.log.append({iter, epoch + 1, "train", batch_loss * inv_batch, std::nullopt, lr, clock()});
    }
    const EvalReport report = evaluate(model, tokens, answers, val_set);
    result.log.append({iter, epoch + 1, "val", std::nullopt, report.accuracy, lr, clock()});
    if (report.accuracy > result.best_accuracy) {
      result.best_accuracy = report.accuracy;
      result.best_epoch = epoch + 1;
      result.best = model;
    }
  }
  result.iterations = iter;
  model.set_mode(Mode::inference);
  result.best.set_mode(Mode::inference);
  return result;
}

PreparedRun prepare_run(ModelConfig cfg, std::span<const VqaSample> train_set,
                        std::span<const VqaSample> question_sources) {
  if (train_set.empty()) throw MismatchError("training set is empty");
  PreparedRun run{cfg, TokenVocab::build(train_set, question_sources), {}};
  std::vector<AnswerList> lists;
  lists.reserve(train_set.size());
  for (const auto& s : train_set) lists.push_back(s.answers);
  run.answers = AnswerVocab::build(lists, cfg.num_answers);
  auto fill = [](std::size_t& field, std::size_t actual, const char* name) {
    if (field == 0) {
      field = actual;
    } else if (field != actual) {
      throw MismatchError(std::string(name) + " is " + std::to_string(field) +
                          " but the data gives " + std::to_string(actual));
    }
  };
  const Tensor& grid = train_set.front().grid;
  fill(run.model.question_vocab, run.tokens.size(), "question_vocab");
  fill(run.model.grid_count, grid.dim(0), "grid_count");
  fill(run.model.image_dim, grid.dim(1), "image_dim");
  // The vocabulary may come out smaller than the requested cap.
  run.model.num_answers = run.answers.size();
  run.model.validate();
  check_compatible(run.model, run.tokens, train_set);
  return run;
}

void check_compatible(const ModelConfig& cfg, const TokenVocab& tokens,
                      std::span<const VqaSample> samples) {
  if (samples.empty()) throw MismatchError("no samples");
  if (tokens.size() != cfg.question_vocab)
    throw MismatchError("token vocabulary size does not match the model");
  for (const auto& s : samples) {
    const std::string where = "sample " + std::to_string(s.id) + ": ";
    if (s.grid.rank() != 2 || s.grid.dim(0) != cfg.grid_count || s.grid.dim(1) != cfg.image_dim)
      throw MismatchError(where + "grid " + shape_str(s.grid.shape()) + " but the model expects [" +
                          std::to_string(cfg.grid_count) + "x" + std::to_string(cfg.image_dim) +
                          "]");
    if (s.question.size() > cfg.max_len)
      throw MismatchError(where + "question has " + std::to_string(s.question.size()) +
                          " tokens, max_len is " + std::to_string(cfg.max_len));
    tokens.encode(s.question);
  }
}

}  // namespace mfb
