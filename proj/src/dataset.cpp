#include "mfb/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json_util.hpp"
#include "mfb/errors.hpp"
#include "mfb/rng.hpp"

namespace mfb {

namespace {

const std::vector<std::string>& row_names(std::size_t side) {
  static const std::vector<std::vector<std::string>> names{
      {"top", "bottom"}, {"top", "middle", "bottom"}, {"top", "upper", "lower", "bottom"}};
  return names.at(side - 2);
}

const std::vector<std::string>& col_names(std::size_t side) {
  static const std::vector<std::vector<std::string>> names{
      {"left", "right"}, {"left", "center", "right"}, {"far-left", "left", "right", "far-right"}};
  return names.at(side - 2);
}

const std::set<std::string> kTemplates{"color_of_shape", "count_of_color", "shape_at_position",
                                       "exists"};

struct Object {
  std::size_t shape;
  std::size_t color;
};

// cells[i] is empty or holds one object.
using Scene = std::vector<std::optional<Object>>;

struct Question {
  std::vector<std::string> tokens;
  std::string answer;
  std::vector<std::string> pool;  // answers of the same kind, for distractors
};

std::vector<std::string> number_pool(const GeneratorConfig& cfg) {
  std::vector<std::string> pool;
  for (std::size_t i = 0; i <= cfg.max_objects; ++i) pool.push_back(std::to_string(i));
  return pool;
}

std::optional<Question> make_question(const GeneratorConfig& cfg, const std::string& kind,
                                      const Scene& scene, Rng& rng) {
  const std::size_t side = cfg.grid_side;
  if (kind == "color_of_shape") {
    std::vector<std::size_t> unique;
    for (std::size_t s = 0; s < cfg.shapes.size(); ++s) {
      std::size_t n = 0;
      for (const auto& cell : scene) n += cell && cell->shape == s;
      if (n == 1) unique.push_back(s);
    }
    if (unique.empty()) return std::nullopt;
    const std::size_t s = unique[rng.below(unique.size())];
    std::string color;
    for (const auto& cell : scene)
      if (cell && cell->shape == s) color = cfg.colors[cell->color];
    return Question{{"what", "color", "is", "the", cfg.shapes[s]}, color, cfg.colors};
  }
  if (kind == "count_of_color") {
    const std::size_t c = rng.below(cfg.colors.size());
    std::size_t n = 0;
    for (const auto& cell : scene) n += cell && cell->color == c;
    return Question{{"how", "many", cfg.colors[c], "objects", "are", "there"}, std::to_string(n),
                    number_pool(cfg)};
  }
  if (kind == "shape_at_position") {
    std::vector<std::size_t> occupied;
    for (std::size_t i = 0; i < scene.size(); ++i)
      if (scene[i]) occupied.push_back(i);
    if (occupied.empty()) return std::nullopt;
    const std::size_t cell = occupied[rng.below(occupied.size())];
    return Question{{"what", "shape", "is", "in", "the", row_names(side)[cell / side],
                     col_names(side)[cell % side]},
                    cfg.shapes[scene[cell]->shape], cfg.shapes};
  }
  // exists: half the questions ask about a present (color, shape) pair.
  std::set<std::pair<std::size_t, std::size_t>> present;
  for (const auto& cell : scene)
    if (cell) present.emplace(cell->color, cell->shape);
  std::vector<std::pair<std::size_t, std::size_t>> absent;
  for (std::size_t c = 0; c < cfg.colors.size(); ++c)
    for (std::size_t s = 0; s < cfg.shapes.size(); ++s)
      if (!present.count({c, s})) absent.emplace_back(c, s);
  const bool ask_present = absent.empty() || (!present.empty() && rng.bernoulli(0.5));
  std::pair<std::size_t, std::size_t> pick;
  if (ask_present) {
    std::vector<std::pair<std::size_t, std::size_t>> options(present.begin(), present.end());
    pick = options[rng.below(options.size())];
  } else {
    pick = absent[rng.below(absent.size())];
  }
  return Question{{"is", "there", "a", cfg.colors[pick.first], cfg.shapes[pick.second]},
                  ask_present ? "yes" : "no",
                  {"yes", "no"}};
}

Tensor encode_scene(const GeneratorConfig& cfg, const Scene& scene) {
  const std::size_t shapes = cfg.shapes.size(), colors = cfg.colors.size();
  Tensor grid({scene.size(), cfg.feature_dim()});
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (scene[i]) {
      grid.at(i, scene[i]->shape) = 1.0;
      grid.at(i, shapes + scene[i]->color) = 1.0;
    }
    grid.at(i, shapes + colors + i) = 1.0;
  }
  return grid;
}

Scene decode_scene(const GeneratorConfig& cfg, const Tensor& grid) {
  if (grid.rank() != 2 || grid.dim(0) != cfg.grid_count() || grid.dim(1) != cfg.feature_dim())
    throw MismatchError("grid " + shape_str(grid.shape()) + " does not match generator config");
  const std::size_t shapes = cfg.shapes.size();
  Scene scene(grid.dim(0));
  for (std::size_t i = 0; i < scene.size(); ++i) {
    std::optional<std::size_t> s, c;
    for (std::size_t j = 0; j < shapes; ++j)
      if (grid.at(i, j) == 1.0) s = j;
    for (std::size_t j = 0; j < cfg.colors.size(); ++j)
      if (grid.at(i, shapes + j) == 1.0) c = j;
    if (s && c) scene[i] = Object{*s, *c};
  }
  return scene;
}

std::size_t index_of(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw MismatchError("unknown word '" + name + "' in question");
  return static_cast<std::size_t>(it - names.begin());
}

}  // namespace

void GeneratorConfig::validate() const {
  if (grid_side < 2 || grid_side > 4)
    throw ConfigError("generator: grid_side must be in [2, 4], got " + std::to_string(grid_side));
  if (shapes.size() < 2 || colors.size() < 2)
    throw ConfigError("generator: need at least two shapes and two colors");
  std::set<std::string> words(shapes.begin(), shapes.end());
  words.insert(colors.begin(), colors.end());
  if (words.size() != shapes.size() + colors.size())
    throw ConfigError("generator: shape and color names must be distinct");
  if (templates.empty()) throw ConfigError("generator: at least one template is required");
  for (const auto& t : templates)
    if (!kTemplates.count(t)) throw ConfigError("generator: unknown template '" + t + "'");
  if (min_objects < 1 || min_objects > max_objects || max_objects > grid_count())
    throw ConfigError("generator: need 1 <= min_objects <= max_objects <= grid cells");
  if (annotators < 1) throw ConfigError("generator: annotators must be at least 1");
  if (!(noise >= 0.0 && noise < 0.5))
    throw ConfigError("generator: noise must be in [0, 0.5), got " + std::to_string(noise));
}

std::string generator_config_to_json(const GeneratorConfig& c) {
  nlohmann::ordered_json j;
  j["grid_side"] = c.grid_side;
  j["shapes"] = c.shapes;
  j["colors"] = c.colors;
  j["templates"] = c.templates;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["annotators"] = c.annotators;
  j["noise"] = c.noise;
  j["seed"] = c.seed;
  return j.dump(2);
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  const auto j = detail::parse_json(text, "generator config");
  detail::StrictObject obj(j, "generator config");
  GeneratorConfig c;
  obj.read("grid_side", c.grid_side);
  obj.read("shapes", c.shapes);
  obj.read("colors", c.colors);
  obj.read("templates", c.templates);
  obj.read("min_objects", c.min_objects);
  obj.read("max_objects", c.max_objects);
  obj.read("annotators", c.annotators);
  obj.read("noise", c.noise);
  obj.read("seed", c.seed);
  obj.finish();
  c.validate();
  return c;
}

std::vector<VqaSample> generate(const GeneratorConfig& cfg, std::size_t count) {
  cfg.validate();
  if (count == 0) throw ConfigError("generator: sample count must be at least 1");
  std::vector<VqaSample> samples;
  samples.reserve(count);
  const std::size_t cells = cfg.grid_count();
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
    std::optional<Question> q;
    Scene scene;
    while (!q) {
      scene.assign(cells, std::nullopt);
      std::vector<std::size_t> order(cells);
      for (std::size_t c = 0; c < cells; ++c) order[c] = c;
      rng.shuffle(order);
      const std::size_t objects =
          cfg.min_objects + rng.below(cfg.max_objects - cfg.min_objects + 1);
      for (std::size_t o = 0; o < objects; ++o)
        scene[order[o]] = Object{rng.below(cfg.shapes.size()), rng.below(cfg.colors.size())};
      q = make_question(cfg, cfg.templates[rng.below(cfg.templates.size())], scene, rng);
    }
    VqaSample s;
    s.id = i;
    s.grid = encode_scene(cfg, scene);
    s.question = q->tokens;
    std::vector<std::string> distractors;
    for (const auto& a : q->pool)
      if (a != q->answer) distractors.push_back(a);
    for (std::size_t a = 0; a < cfg.annotators; ++a) {
      if (rng.uniform() < cfg.noise)
        s.answers.push_back(distractors[rng.below(distractors.size())]);
      else
        s.answers.push_back(q->answer);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

std::string solve(const GeneratorConfig& cfg, const VqaSample& sample) {
  const Scene scene = decode_scene(cfg, sample.grid);
  const auto& q = sample.question;
  if (q.size() == 5 && q[0] == "what" && q[1] == "color") {
    const std::size_t s = index_of(cfg.shapes, q[4]);
    for (const auto& cell : scene)
      if (cell && cell->shape == s) return cfg.colors[cell->color];
  } else if (q.size() == 6 && q[0] == "how" && q[1] == "many") {
    const std::size_t c = index_of(cfg.colors, q[2]);
    std::size_t n = 0;
    for (const auto& cell : scene) n += cell && cell->color == c;
    return std::to_string(n);
  } else if (q.size() == 7 && q[0] == "what" && q[1] == "shape") {
    const std::size_t r = index_of(row_names(cfg.grid_side), q[5]);
    const std::size_t c = index_of(col_names(cfg.grid_side), q[6]);
    const auto& cell = scene[r * cfg.grid_side + c];
    if (cell) return cfg.shapes[cell->shape];
  } else if (q.size() == 5 && q[0] == "is" && q[1] == "there") {
    const std::size_t c = index_of(cfg.colors, q[3]);
    const std::size_t s = index_of(cfg.shapes, q[4]);
    for (const auto& cell : scene)
      if (cell && cell->color == c && cell->shape == s) return "yes";
    return "no";
  }
  throw MismatchError("question is not answerable from the scene");
}

std::string dataset_to_jsonl(std::span<const VqaSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    auto grid = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < s.grid.dim(0); ++r) {
      auto row = nlohmann::ordered_json::array();
      for (std::size_t c = 0; c < s.grid.dim(1); ++c) row.push_back(s.grid.at(r, c));
      grid.push_back(std::move(row));
    }
    j["grid"] = std::move(grid);
    j["question"] = s.question;
    j["answers"] = s.answers;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace {

VqaSample parse_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  if (!j.is_object()) throw std::invalid_argument("record is not an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "id" && it.key() != "grid" && it.key() != "question" && it.key() != "answers")
      throw std::invalid_argument("unknown field '" + it.key() + "'");
  VqaSample s;
  if (!j.contains("id") || !j["id"].is_number_unsigned())
    throw std::invalid_argument("missing or invalid 'id'");
  s.id = j["id"].get<std::uint64_t>();
  const auto& grid = j.at("grid");
  if (!grid.is_array() || grid.empty() || !grid[0].is_array() || grid[0].empty())
    throw std::invalid_argument("'grid' must be a nonempty array of nonempty rows");
  const std::size_t cols = grid[0].size();
  std::vector<double> data;
  for (const auto& row : grid) {
    if (!row.is_array() || row.size() != cols) throw std::invalid_argument("ragged 'grid'");
    for (const auto& v : row) {
      if (!v.is_number()) throw std::invalid_argument("non-numeric grid entry");
      data.push_back(v.get<double>());
    }
  }
  s.grid = Tensor({grid.size(), cols}, std::move(data));
  s.question = j.at("question").get<std::vector<std::string>>();
  s.answers = j.at("answers").get<std::vector<std::string>>();
  if (s.question.empty()) throw std::invalid_argument("empty 'question'");
  if (s.answers.empty()) throw std::invalid_argument("empty 'answers'");
  return s;
}

}  // namespace

std::vector<VqaSample> dataset_from_jsonl(const std::string& text, const std::string& source) {
  std::vector<VqaSample> samples;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      samples.push_back(parse_record(line));
    } catch (const std::exception& e) {
      throw IoError((source.empty() ? std::string("dataset") : source) + ":" +
                    std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  return samples;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path + "'");
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("error writing '" + path + "'");
}

void write_dataset(std::span<const VqaSample> samples, const std::string& path) {
  write_text_file(path, dataset_to_jsonl(samples));
}

std::vector<VqaSample> read_dataset(const std::string& path) {
  return dataset_from_jsonl(read_text_file(path), path);
}

TokenVocab::TokenVocab() : TokenVocab(std::vector<std::string>{kPad}) {}

TokenVocab::TokenVocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty() || tokens_[0] != kPad)
    throw ConfigError("token vocabulary must start with the pad token");
  for (std::size_t i = 0; i < tokens_.size(); ++i)
    if (!index_.emplace(tokens_[i], i).second)
      throw ConfigError("token vocabulary has duplicate entry '" + tokens_[i] + "'");
}

TokenVocab TokenVocab::build(std::span<const VqaSample> samples,
                             std::span<const VqaSample> more) {
  std::set<std::string> words;
  for (const auto& s : samples) words.insert(s.question.begin(), s.question.end());
  for (const auto& s : more) words.insert(s.question.begin(), s.question.end());
  words.erase(kPad);
  std::vector<std::string> tokens{kPad};
  tokens.insert(tokens.end(), words.begin(), words.end());
  return TokenVocab(std::move(tokens));
}

std::vector<std::size_t> TokenVocab::encode(std::span<const std::string> question) const {
  std::vector<std::size_t> ids;
  ids.reserve(question.size());
  for (const auto& w : question) {
    auto it = index_.find(w);
    if (it == index_.end() || it->second == 0)
      throw MismatchError("unknown question token '" + w + "'");
    ids.push_back(it->second);
  }
  return ids;
}

DatasetSummary summarize(std::span<const VqaSample> samples) {
  DatasetSummary s;
  s.samples = samples.size();
  for (auto t : {AnswerType::yes_no, AnswerType::number, AnswerType::other})
    s.answer_types[answer_type_name(t)] = 0;
  std::vector<AnswerList> lists;
  lists.reserve(samples.size());
  for (const auto& v : samples) {
    ++s.answer_types[answer_type_name(classify_answer_type(v.answers))];
    lists.push_back(v.answers);
  }
  s.question_vocab = TokenVocab::build(samples).size() - 1;
  s.answer_vocab = AnswerVocab::build(lists).size();
  return s;
}

}  // namespace mfb
