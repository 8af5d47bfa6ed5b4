#include <gtest/gtest.h>

#include <filesystem>

#include "mfb/answers.hpp"
#include "mfb/checkpoint.hpp"
#include "mfb/dataset.hpp"
#include "mfb/errors.hpp"

using namespace mfb;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mfb_test_" + name)).string();
}

GeneratorConfig noisy(double eps, std::uint64_t seed = 3) {
  GeneratorConfig c;
  c.noise = eps;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Generate, NoiselessAnnotatorsAgreeWithSolver) {
  const auto cfg = noisy(0.0);
  for (const auto& s : generate(cfg, 500)) {
    ASSERT_EQ(s.answers.size(), 10u);
    const std::string truth = solve(cfg, s);
    for (const auto& a : s.answers) EXPECT_EQ(a, truth);
  }
}

TEST(Generate, NoiseRateConcentrates) {
  const auto cfg = noisy(0.2);
  const auto samples = generate(cfg, 10000);
  std::size_t agree = 0, total = 0;
  for (const auto& s : samples) {
    const std::string truth = solve(cfg, s);
    for (const auto& a : s.answers) {
      agree += a == truth;
      ++total;
    }
  }
  const double frac = static_cast<double>(agree) / total;
  EXPECT_GE(frac, 0.79);
  EXPECT_LE(frac, 0.81);
}

TEST(Generate, DistractorsShareTheAnswerType) {
  const auto cfg = noisy(0.4);
  for (const auto& s : generate(cfg, 300)) {
    const auto truth_type = classify_answer_type({solve(cfg, s)});
    for (const auto& a : s.answers) EXPECT_EQ(classify_answer_type({a}), truth_type);
  }
}

TEST(Generate, SceneEncoding) {
  const auto cfg = noisy(0.0);
  for (const auto& s : generate(cfg, 200)) {
    ASSERT_EQ(s.grid.shape(), (Shape{9, 16}));
    std::size_t objects = 0;
    for (std::size_t cell = 0; cell < 9; ++cell) {
      double shape = 0, color = 0, pos = 0;
      for (std::size_t f = 0; f < 3; ++f) shape += s.grid.at(cell, f);
      for (std::size_t f = 3; f < 7; ++f) color += s.grid.at(cell, f);
      for (std::size_t f = 7; f < 16; ++f) pos += s.grid.at(cell, f);
      EXPECT_EQ(pos, 1.0);
      EXPECT_EQ(s.grid.at(cell, 7 + cell), 1.0);
      EXPECT_EQ(shape, color);
      objects += shape == 1.0;
    }
    EXPECT_GE(objects, cfg.min_objects);
    EXPECT_LE(objects, cfg.max_objects);
  }
}

TEST(Generate, AllAnswerTypesAppear) {
  auto summary = summarize(generate(noisy(0.0), 1000));
  EXPECT_EQ(summary.samples, 1000u);
  for (const char* t : {"yes/no", "number", "other"}) EXPECT_GT(summary.answer_types[t], 0u) << t;
}

TEST(Generate, Deterministic) {
  const auto a = dataset_to_jsonl(generate(noisy(0.2, 9), 1000));
  const auto b = dataset_to_jsonl(generate(noisy(0.2, 9), 1000));
  EXPECT_EQ(a, b);
  EXPECT_EQ(fnv1a64(reinterpret_cast<const std::uint8_t*>(a.data()), a.size()),
            fnv1a64(reinterpret_cast<const std::uint8_t*>(b.data()), b.size()));
  EXPECT_NE(a, dataset_to_jsonl(generate(noisy(0.2, 10), 1000)));
}

TEST(Generate, OtherGridSides) {
  for (std::size_t side : {2, 4}) {
    GeneratorConfig cfg;
    cfg.grid_side = side;
    for (const auto& s : generate(cfg, 200)) {
      EXPECT_EQ(s.grid.dim(0), side * side);
      EXPECT_EQ(solve(cfg, s), s.answers[0]);
    }
  }
}

TEST(GeneratorConfig, Validation) {
  GeneratorConfig c;
  c.grid_side = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.noise = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.min_objects = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(generator_config_from_json(R"({"nosie": 0.2})"), ConfigError);
  EXPECT_THROW(generate(GeneratorConfig{}, 0), ConfigError);
  GeneratorConfig parsed = generator_config_from_json(R"({"noise": 0.2, "seed": 4})");
  EXPECT_EQ(parsed.noise, 0.2);
  EXPECT_EQ(generator_config_from_json(generator_config_to_json(parsed)), parsed);
}

TEST(DatasetIo, RoundTrip) {
  const auto samples = generate(noisy(0.2), 50);
  const auto path = temp_path("roundtrip.jsonl");
  write_dataset(samples, path);
  EXPECT_EQ(read_dataset(path), samples);
  write_dataset(std::vector<VqaSample>{samples[7]}, path);
  EXPECT_EQ(read_dataset(path), std::vector<VqaSample>{samples[7]});
  write_dataset({}, path);
  EXPECT_EQ(read_text_file(path), "");
  EXPECT_TRUE(read_dataset(path).empty());
  std::filesystem::remove(path);
}

TEST(DatasetIo, MalformedRecordsNameTheLine) {
  const auto good = dataset_to_jsonl(generate(noisy(0.0), 1));
  const std::vector<std::string> bad{
      "{not json",
      R"({"id":1,"grid":[[1,0],[1]],"question":["a"],"answers":["b"]})",
      R"({"id":1,"grid":[],"question":["a"],"answers":["b"]})",
      R"({"id":1,"grid":[[1]],"question":[],"answers":["b"]})",
      R"({"id":1,"grid":[[1]],"question":["a"],"answers":[]})",
      R"({"id":1,"grid":[[1]],"question":["a"],"answers":["b"],"extra":2})",
      R"({"id":-1,"grid":[[1]],"question":["a"],"answers":["b"]})",
  };
  for (const auto& line : bad) {
    try {
      dataset_from_jsonl(good + line + "\n", "data.jsonl");
      ADD_FAILURE() << line;
    } catch (const IoError& e) {
      EXPECT_NE(std::string(e.what()).find("data.jsonl:2:"), std::string::npos) << e.what();
    }
  }
  EXPECT_THROW(read_dataset("/nonexistent/data.jsonl"), IoError);
}

TEST(TokenVocab, BuildAndEncode) {
  std::vector<VqaSample> samples(2);
  samples[0].question = {"is", "there", "a", "red"};
  samples[1].question = {"what", "is", "red"};
  auto v = TokenVocab::build(samples);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"<pad>", "a", "is", "red", "there", "what"}));
  EXPECT_EQ(v.encode(samples[1].question), (std::vector<std::size_t>{5, 2, 3}));
  EXPECT_THROW(v.encode(std::vector<std::string>{"blue"}), MismatchError);
}
