#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfb/attention.hpp"
#include "mfb/fusion.hpp"
#include "mfb/layers.hpp"

namespace mfb {

enum class Architecture { baseline, coattention };
enum class FusionKind { mfb, mfh, mlb };

const char* to_string(Architecture a);
const char* to_string(FusionKind f);
Architecture parse_architecture(const std::string& s);
FusionKind parse_fusion_kind(const std::string& s);

struct ModelConfig {
  Architecture architecture = Architecture::coattention;
  FusionKind fusion = FusionKind::mfb;
  std::size_t question_vocab = 0;  // includes the pad token at id 0
  std::size_t num_answers = 0;     // N
  std::size_t max_len = 12;        // T
  std::size_t embed_dim = 16;
  std::size_t lstm_hidden = 32;
  std::size_t image_dim = 0;
  std::size_t grid_count = 0;
  std::size_t k = 3;
  std::size_t o = 64;
  std::size_t mfh_order = 2;
  double fusion_dropout = 0.1;
  double lstm_dropout = 0.3;
  std::size_t q_glimpses = 2;
  std::size_t i_glimpses = 2;
  std::size_t att_hidden = 64;
  bool power_norm = true;
  bool l2_norm = true;
  std::uint64_t init_seed = 1;

  void validate() const;
  // Widths of the x (image) and y (question) inputs of the final fusion.
  std::size_t fusion_m() const;
  std::size_t fusion_n() const;
  std::size_t fused_width() const;
  NormSpec norm() const { return {power_norm, l2_norm}; }

  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
// Strict: unknown keys and bad values are ConfigError.
ModelConfig model_config_from_json(const std::string& text);

using NamedParameters = std::vector<std::pair<std::string, Parameter*>>;

struct ForwardOutput {
  Var logits;            // [N]
  Var question_weights;  // [q_glimpses x T], co-attention only
  Var image_weights;     // [i_glimpses x G], co-attention only
};

class VqaModel {
 public:
  explicit VqaModel(ModelConfig cfg);
  VqaModel(const VqaModel&) = default;
  VqaModel& operator=(const VqaModel&) = default;

  const ModelConfig& config() const { return config_; }

  // Deterministic from config().init_seed.
  void init();
  void set_mode(Mode mode);
  Mode mode() const { return mode_; }

  // Stable dotted names in a fixed order, e.g. fusion.block0.proj_x.weight.
  NamedParameters named_parameters();
  void zero_grad();

  // Dispatches on the architecture. Baseline uses the mean grid feature.
  ForwardOutput forward(Graph& g, const Tensor& grids, std::span<const std::size_t> tokens,
                        Rng& rng);

 private:
  friend Var forward_baseline(VqaModel&, Graph&, const Tensor&, std::span<const std::size_t>,
                              Rng&);
  friend ForwardOutput forward_coattention(VqaModel&, Graph&, const Tensor&,
                                           std::span<const std::size_t>, Rng&);
  Var fuse(Var x, Var y, Rng& rng);

  ModelConfig config_;
  Mode mode_ = Mode::inference;
  EmbeddingLayer embedding_;
  LstmCell lstm_;
  AttentionHead q_head_;
  AttentionHead i_head_;
  MfbBlock i_fuse_;
  std::vector<MfbBlock> blocks_;
  LinearLayer mlb_x_;
  LinearLayer mlb_y_;
  LinearLayer classifier_;
};

// image_feat: [d_img] global feature, l2-normalized before fusion.
Var forward_baseline(VqaModel& model, Graph& g, const Tensor& image_feat,
                     std::span<const std::size_t> tokens, Rng& rng);
// grids: [G x d_img].
ForwardOutput forward_coattention(VqaModel& model, Graph& g, const Tensor& grids,
                                  std::span<const std::size_t> tokens, Rng& rng);

// Mean over grid rows.
Tensor global_image_feature(const Tensor& grids);

struct ParamTable {
  std::vector<std::pair<std::string, std::size_t>> rows;
  std::size_t total = 0;
  std::size_t fusion_subtotal = 0;  // parameters under "fusion."
};

ParamTable count_model_params(VqaModel& model);
// Same totals computed from the config alone.
ParamTable describe_params(const ModelConfig& cfg);

}  // namespace mfb
