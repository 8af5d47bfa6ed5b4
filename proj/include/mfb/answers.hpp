#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfb/autograd.hpp"
#include "mfb/rng.hpp"

namespace mfb {

// Repeatable list of annotator answers for one question.
using AnswerList = std::vector<std::string>;

// Lowercases and trims surrounding whitespace.
std::string normalize_answer(std::string_view answer);

// Answers ordered by descending training frequency, ties lexicographic.
class AnswerVocab {
 public:
  AnswerVocab() = default;
  explicit AnswerVocab(std::vector<std::string> ordered);

  // Counts every annotator answer and keeps the `top_n` most frequent
  // (all of them when top_n == 0).
  static AnswerVocab build(std::span<const AnswerList> lists, std::size_t top_n = 0);

  std::size_t size() const { return answers_.size(); }
  const std::string& answer(std::size_t id) const { return answers_.at(id); }
  std::optional<std::size_t> id(const std::string& answer) const;
  const std::vector<std::string>& answers() const { return answers_; }

  bool operator==(const AnswerVocab& other) const { return answers_ == other.answers_; }

 private:
  std::vector<std::string> answers_;
  std::map<std::string, std::size_t> index_;
};

// Probability vector over the vocabulary; entries in [0,1], sums to 1.
struct AnswerDistribution {
  Tensor probs;
};

// Occurrence frequency of each in-vocab answer; out-of-vocab answers are
// dropped before normalizing.
AnswerDistribution build_distribution(const AnswerList& answers, const AnswerVocab& vocab);

// sum_i y_i log(y_i / z_i) with 0 log(0/z) = 0. `z` must be a strictly
// positive probability vector (a softmax output); `y` is a constant.
Var kld_loss(Var z, const Tensor& y);
// Hard-label softmax loss, -log z_c.
Var cross_entropy(Var z, std::size_t target);

// Uniform draw from the in-vocab entries of the (multiset) list.
std::size_t answer_sampling_target(const AnswerList& answers, const AnswerVocab& vocab, Rng& rng);
// The modal in-vocab answer; ties go to the lower vocabulary id.
std::size_t max_prob_target(const AnswerList& answers, const AnswerVocab& vocab);

// min(count(predicted in answers) / 3, 1).
double vqa_accuracy(const std::string& predicted, const AnswerList& answers);

enum class AnswerType { yes_no, number, other };

const char* answer_type_name(AnswerType type);
// Classified from the most frequent annotator answer.
AnswerType classify_answer_type(const AnswerList& answers);

}  // namespace mfb
