#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfb/answers.hpp"
#include "mfb/dataset.hpp"
#include "mfb/model.hpp"

namespace mfb {

enum class TargetStrategy { max_prob, answer_sampling, kld };

const char* to_string(TargetStrategy s);
TargetStrategy parse_strategy(const std::string& s);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double base_lr = 0.0007;
  double decay_factor = 0.5;  // 0.5 for MFB, 0.25 for MFH
  std::size_t decay_interval = 4;
  TargetStrategy strategy = TargetStrategy::kld;
  std::uint64_t seed = 1;

  void validate() const;
};

// decay_factor defaults by fusion kind when the file does not set it.
TrainConfig train_config_from_json(const std::string& text, FusionKind fusion);
double default_decay_factor(FusionKind fusion);

// base_lr * decay_factor^floor(epoch / decay_interval), epochs counted from 0.
double lr_at(const TrainConfig& cfg, std::size_t epoch);

struct AdamState {
  struct Moments {
    Tensor m;
    Tensor v;
  };
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::size_t t = 0;
  std::map<std::string, Moments> moments;
};

// Bias-corrected Adam on every parameter's grad. Throws NumericalError naming
// the parameter, before updating anything, if a gradient is not finite.
void adam_step(AdamState& state, const NamedParameters& params, double lr);

struct MetricRecord {
  std::size_t iter = 0;
  std::size_t epoch = 0;
  std::string split;  // "train" or "val"
  std::optional<double> loss;
  std::optional<double> accuracy;
  double lr = 0.0;
  std::int64_t wallclock_ms = 0;
};

class MetricsLog {
 public:
  // Iteration indices must not decrease.
  void append(MetricRecord record);
  const std::vector<MetricRecord>& records() const { return records_; }
  std::vector<MetricRecord> split(const std::string& name) const;
  std::string to_jsonl() const;

 private:
  std::vector<MetricRecord> records_;
};

struct TypeAccuracy {
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::size_t count = 0;
  std::map<std::string, TypeAccuracy> by_type;  // yes/no, number, other
};

// Scores predictions[i] against samples[i].answers.
EvalReport score_predictions(std::span<const std::string> predictions,
                             std::span<const VqaSample> samples);
// Argmax answers with dropout off.
std::vector<std::string> predict(VqaModel& model, const TokenVocab& tokens,
                                 const AnswerVocab& answers, std::span<const VqaSample> samples);
EvalReport evaluate(VqaModel& model, const TokenVocab& tokens, const AnswerVocab& answers,
                    std::span<const VqaSample> samples);

// Milliseconds since the run started; only ever written to the log.
using Clock = std::function<std::int64_t()>;
Clock steady_clock_ms();

struct TrainResult {
  VqaModel best;
  VqaModel final;
  MetricsLog log;
  double best_accuracy = 0.0;
  std::size_t best_epoch = 0;  // 1-based
  std::size_t iterations = 0;
  std::size_t dropped_samples = 0;  // training samples with no in-vocab answer
};

TrainResult train(const VqaModel& initial, const TokenVocab& tokens, const AnswerVocab& answers,
                  std::span<const VqaSample> train_set, std::span<const VqaSample> val_set,
                  const TrainConfig& cfg, Clock clock = steady_clock_ms());

// Vocabularies and the model config with every data-dependent dimension
// filled in. Answers come from the training split only; question tokens also
// include those of `question_sources` (e.g. the validation split). Dimensions
// already set in `cfg` must agree with the data (MismatchError otherwise).
// num_answers, when set, keeps the most frequent answers.
struct PreparedRun {
  ModelConfig model;
  TokenVocab tokens;
  AnswerVocab answers;
};
PreparedRun prepare_run(ModelConfig cfg, std::span<const VqaSample> train_set,
                        std::span<const VqaSample> question_sources = {});

// Throws MismatchError when samples cannot be fed to a model built for cfg.
void check_compatible(const ModelConfig& cfg, const TokenVocab& tokens,
                      std::span<const VqaSample> samples);

}  // namespace mfb
