#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mfb/answers.hpp"
#include "mfb/tensor.hpp"

namespace mfb {

struct VqaSample {
  std::uint64_t id = 0;
  Tensor grid;                        // [G x d_img]
  std::vector<std::string> question;  // tokens
  AnswerList answers;                 // one entry per simulated annotator

  bool operator==(const VqaSample&) const = default;
};

// Templates, one per answer pool: color_of_shape (other), count_of_color
// (number), shape_at_position (other), exists (yes/no).
struct GeneratorConfig {
  std::size_t grid_side = 3;
  std::vector<std::string> shapes{"circle", "square", "triangle"};
  std::vector<std::string> colors{"red", "green", "blue", "yellow"};
  std::vector<std::string> templates{"color_of_shape", "count_of_color", "shape_at_position",
                                     "exists"};
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  std::size_t annotators = 10;
  double noise = 0.0;  // epsilon: chance an annotator gives a distractor
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t grid_count() const { return grid_side * grid_side; }
  // one-hot shape + one-hot color + one-hot position
  std::size_t feature_dim() const { return shapes.size() + colors.size() + grid_count(); }

  bool operator==(const GeneratorConfig&) const = default;
};

std::string generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const std::string& text);

// Sample i depends only on (cfg, i), so prefixes and shards are consistent.
std::vector<VqaSample> generate(const GeneratorConfig& cfg, std::size_t count);

// True answer recomputed from the grid features and question tokens.
std::string solve(const GeneratorConfig& cfg, const VqaSample& sample);

// One JSON object per line: {id, grid, question, answers}.
std::string dataset_to_jsonl(std::span<const VqaSample> samples);
std::vector<VqaSample> dataset_from_jsonl(const std::string& text, const std::string& source = "");
void write_dataset(std::span<const VqaSample> samples, const std::string& path);
std::vector<VqaSample> read_dataset(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// Closed question-token vocabulary; id 0 is the pad token.
class TokenVocab {
 public:
  static constexpr const char* kPad = "<pad>";

  TokenVocab();
  explicit TokenVocab(std::vector<std::string> tokens);  // tokens[0] must be the pad token
  // Every question word of both sample sets, sorted.
  static TokenVocab build(std::span<const VqaSample> samples,
                          std::span<const VqaSample> more = {});

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // MismatchError on an unknown token.
  std::vector<std::size_t> encode(std::span<const std::string> question) const;

  bool operator==(const TokenVocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

struct DatasetSummary {
  std::size_t samples = 0;
  std::map<std::string, std::size_t> answer_types;  // yes/no, number, other
  std::size_t question_vocab = 0;                   // excluding pad
  std::size_t answer_vocab = 0;
};

DatasetSummary summarize(std::span<const VqaSample> samples);

}  // namespace mfb
