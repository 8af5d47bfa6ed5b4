#include "mfb/answers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mfb/errors.hpp"

namespace mfb {

std::string normalize_answer(std::string_view answer) {
  std::size_t b = 0, e = answer.size();
  while (b < e && std::isspace(static_cast<unsigned char>(answer[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(answer[e - 1]))) --e;
  std::string out(answer.substr(b, e - b));
  for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

AnswerVocab::AnswerVocab(std::vector<std::string> ordered) : answers_(std::move(ordered)) {
  for (std::size_t i = 0; i < answers_.size(); ++i)
    if (!index_.emplace(answers_[i], i).second)
      throw ConfigError("answer vocabulary has duplicate entry '" + answers_[i] + "'");
}

AnswerVocab AnswerVocab::build(std::span<const AnswerList> lists, std::size_t top_n) {
  std::map<std::string, std::size_t> counts;
  for (const auto& list : lists)
    for (const auto& a : list) ++counts[normalize_answer(a)];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is lexicographic already; stable sort keeps that order on ties.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (top_n > 0 && ranked.size() > top_n) ranked.resize(top_n);
  std::vector<std::string> ordered;
  ordered.reserve(ranked.size());
  for (auto& [answer, _] : ranked) ordered.push_back(answer);
  return AnswerVocab(std::move(ordered));
}

std::optional<std::size_t> AnswerVocab::id(const std::string& answer) const {
  auto it = index_.find(normalize_answer(answer));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

std::vector<std::size_t> in_vocab_ids(const AnswerList& answers, const AnswerVocab& vocab) {
  std::vector<std::size_t> ids;
  ids.reserve(answers.size());
  for (const auto& a : answers)
    if (auto id = vocab.id(a)) ids.push_back(*id);
  if (ids.empty()) throw MismatchError("answer list is empty after vocabulary filtering");
  return ids;
}

}  // namespace

AnswerDistribution build_distribution(const AnswerList& answers, const AnswerVocab& vocab) {
  const auto ids = in_vocab_ids(answers, vocab);
  std::vector<std::size_t> counts(vocab.size(), 0);
  for (auto id : ids) ++counts[id];
  Tensor probs({vocab.size()});
  const auto total = static_cast<double>(ids.size());
  for (std::size_t i = 0; i < counts.size(); ++i) probs[i] = static_cast<double>(counts[i]) / total;
  return {std::move(probs)};
}

Var kld_loss(Var z, const Tensor& y) {
  const Tensor& zv = z.value();
  if (zv.shape() != y.shape())
    throw ShapeError("kld_loss: prediction " + shape_str(zv.shape()) + " vs target " +
                     shape_str(y.shape()));
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] > 0.0) loss += y[i] * std::log(y[i] / zv[i]);
  return z.graph().apply("kld_loss", Tensor({1}, loss), {z}, [y](const BackwardContext& c) {
    Tensor* dz = c.input_grads[0];
    if (!dz) return;
    const Tensor& zv = *c.inputs[0];
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] > 0.0) (*dz)[i] -= c.grad[0] * y[i] / zv[i];
  });
}

Var cross_entropy(Var z, std::size_t target) {
  if (target >= z.size())
    throw ShapeError("cross_entropy: target " + std::to_string(target) + " out of range");
  Tensor y = Tensor::zeros_like(z.value());
  y[target] = 1.0;
  return kld_loss(z, y);
}

std::size_t answer_sampling_target(const AnswerList& answers, const AnswerVocab& vocab, Rng& rng) {
  const auto ids = in_vocab_ids(answers, vocab);
  return ids[static_cast<std::size_t>(rng.below(ids.size()))];
}

std::size_t max_prob_target(const AnswerList& answers, const AnswerVocab& vocab) {
  const auto ids = in_vocab_ids(answers, vocab);
  std::map<std::size_t, std::size_t> counts;
  for (auto id : ids) ++counts[id];
  std::size_t best = counts.begin()->first, best_count = 0;
  for (auto [id, count] : counts)
    if (count > best_count) {
      best = id;
      best_count = count;
    }
  return best;
}

double vqa_accuracy(const std::string& predicted, const AnswerList& answers) {
  const std::string key = normalize_answer(predicted);
  std::size_t count = 0;
  for (const auto& a : answers)
    if (normalize_answer(a) == key) ++count;
  return std::min(static_cast<double>(count) / 3.0, 1.0);
}

const char* answer_type_name(AnswerType type) {
  switch (type) {
    case AnswerType::yes_no: return "yes/no";
    case AnswerType::number: return "number";
    case AnswerType::other: return "other";
  }
  return "other";
}

AnswerType classify_answer_type(const AnswerList& answers) {
  if (answers.empty()) return AnswerType::other;
  std::map<std::string, std::size_t> counts;
  for (const auto& a : answers) ++counts[normalize_answer(a)];
  const auto mode = std::max_element(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
                      return a.second < b.second;
                    })->first;
  if (mode == "yes" || mode == "no") return AnswerType::yes_no;
  if (!mode.empty() && std::all_of(mode.begin(), mode.end(), [](unsigned char ch) {
        return std::isdigit(ch);
      }))
    return AnswerType::number;
  return AnswerType::other;
}

}  // namespace mfb
