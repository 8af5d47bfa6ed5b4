#include "mfb/model.hpp"

#include "json_util.hpp"
#include "mfb/errors.hpp"

namespace mfb {

const char* to_string(Architecture a) {
  return a == Architecture::baseline ? "baseline" : "coattention";
}

const char* to_string(FusionKind f) {
  switch (f) {
    case FusionKind::mfb: return "mfb";
    case FusionKind::mfh: return "mfh";
    case FusionKind::mlb: return "mlb";
  }
  return "mfb";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "baseline") return Architecture::baseline;
  if (s == "coattention") return Architecture::coattention;
  throw ConfigError("unknown architecture '" + s + "' (expected baseline | coattention)");
}

FusionKind parse_fusion_kind(const std::string& s) {
  if (s == "mfb") return FusionKind::mfb;
  if (s == "mfh") return FusionKind::mfh;
  if (s == "mlb") return FusionKind::mlb;
  throw ConfigError("unknown fusion '" + s + "' (expected mfb | mfh | mlb)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(question_vocab, "question_vocab");
  positive(num_answers, "num_answers");
  positive(max_len, "max_len");
  positive(embed_dim, "embed_dim");
  positive(lstm_hidden, "lstm_hidden");
  positive(image_dim, "image_dim");
  positive(grid_count, "grid_count");
  positive(k, "k");
  positive(o, "o");
  positive(mfh_order, "mfh_order");
  positive(q_glimpses, "q_glimpses");
  positive(i_glimpses, "i_glimpses");
  positive(att_hidden, "att_hidden");
  for (auto [v, name] : {std::pair{fusion_dropout, "fusion_dropout"}, {lstm_dropout, "lstm_dropout"}})
    if (!(v >= 0.0 && v < 1.0))
      throw ConfigError(std::string("model config: ") + name + " must be in [0, 1)");
}

std::size_t ModelConfig::fusion_m() const {
  return architecture == Architecture::baseline ? image_dim : i_glimpses * image_dim;
}

std::size_t ModelConfig::fusion_n() const {
  return architecture == Architecture::baseline ? lstm_hidden : q_glimpses * lstm_hidden;
}

std::size_t ModelConfig::fused_width() const { return fusion == FusionKind::mfh ? o * mfh_order : o; }

std::string model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["architecture"] = to_string(c.architecture);
  j["fusion"] = to_string(c.fusion);
  j["question_vocab"] = c.question_vocab;
  j["num_answers"] = c.num_answers;
  j["max_len"] = c.max_len;
  j["embed_dim"] = c.embed_dim;
  j["lstm_hidden"] = c.lstm_hidden;
  j["image_dim"] = c.image_dim;
  j["grid_count"] = c.grid_count;
  j["k"] = c.k;
  j["o"] = c.o;
  j["mfh_order"] = c.mfh_order;
  j["fusion_dropout"] = c.fusion_dropout;
  j["lstm_dropout"] = c.lstm_dropout;
  j["q_glimpses"] = c.q_glimpses;
  j["i_glimpses"] = c.i_glimpses;
  j["att_hidden"] = c.att_hidden;
  j["power_norm"] = c.power_norm;
  j["l2_norm"] = c.l2_norm;
  j["init_seed"] = c.init_seed;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  const auto j = detail::parse_json(text, "model config");
  detail::StrictObject obj(j, "model config");
  ModelConfig c;
  c.architecture = parse_architecture(obj.read_string("architecture", to_string(c.architecture)));
  c.fusion = parse_fusion_kind(obj.read_string("fusion", to_string(c.fusion)));
  obj.read("question_vocab", c.question_vocab);
  obj.read("num_answers", c.num_answers);
  obj.read("max_len", c.max_len);
  obj.read("embed_dim", c.embed_dim);
  obj.read("lstm_hidden", c.lstm_hidden);
  obj.read("image_dim", c.image_dim);
  obj.read("grid_count", c.grid_count);
  obj.read("k", c.k);
  obj.read("o", c.o);
  obj.read("mfh_order", c.mfh_order);
  obj.read("fusion_dropout", c.fusion_dropout);
  obj.read("lstm_dropout", c.lstm_dropout);
  obj.read("q_glimpses", c.q_glimpses);
  obj.read("i_glimpses", c.i_glimpses);
  obj.read("att_hidden", c.att_hidden);
  obj.read("power_norm", c.power_norm);
  obj.read("l2_norm", c.l2_norm);
  obj.read("init_seed", c.init_seed);
  obj.finish();
  return c;
}

namespace {

MfbConfig fusion_block_config(const ModelConfig& c) {
  return MfbConfig{c.fusion_m(), c.fusion_n(), c.k, c.o, c.fusion_dropout};
}

MfbConfig image_fuse_config(const ModelConfig& c) {
  return MfbConfig{c.image_dim, c.q_glimpses * c.lstm_hidden, c.k, c.o, c.fusion_dropout};
}

void add_linear(NamedParameters& out, const std::string& prefix, LinearLayer& l) {
  out.emplace_back(prefix + ".weight", &l.weight);
  if (l.bias) out.emplace_back(prefix + ".bias", &*l.bias);
}

}  // namespace

VqaModel::VqaModel(ModelConfig cfg) : config_(std::move(cfg)) {
  config_.validate();
  const auto& c = config_;
  embedding_ = EmbeddingLayer(c.question_vocab, c.embed_dim);
  lstm_ = LstmCell(c.embed_dim, c.lstm_hidden);
  if (c.architecture == Architecture::coattention) {
    q_head_ = AttentionHead(c.lstm_hidden, c.att_hidden, c.q_glimpses);
    i_fuse_ = MfbBlock(image_fuse_config(c));
    i_head_ = AttentionHead(c.o, c.att_hidden, c.i_glimpses);
  }
  switch (c.fusion) {
    case FusionKind::mfb: blocks_.emplace_back(fusion_block_config(c)); break;
    case FusionKind::mfh:
      for (std::size_t i = 0; i < c.mfh_order; ++i) blocks_.emplace_back(fusion_block_config(c));
      break;
    case FusionKind::mlb:
      mlb_x_ = LinearLayer(c.fusion_m(), c.o);
      mlb_y_ = LinearLayer(c.fusion_n(), c.o);
      break;
  }
  classifier_ = LinearLayer(c.fused_width(), c.num_answers);
}

NamedParameters VqaModel::named_parameters() {
  NamedParameters out;
  out.emplace_back("embedding.table", &embedding_.table);
  out.emplace_back("lstm.w_input", &lstm_.w_input);
  out.emplace_back("lstm.w_hidden", &lstm_.w_hidden);
  out.emplace_back("lstm.bias", &lstm_.bias);
  if (config_.architecture == Architecture::coattention) {
    add_linear(out, "q_att.hidden", q_head_.hidden);
    add_linear(out, "q_att.logits", q_head_.logits);
    add_linear(out, "i_att.fuse.proj_x", i_fuse_.proj_x);
    add_linear(out, "i_att.fuse.proj_y", i_fuse_.proj_y);
    add_linear(out, "i_att.hidden", i_head_.hidden);
    add_linear(out, "i_att.logits", i_head_.logits);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string prefix = "fusion.block" + std::to_string(i);
    add_linear(out, prefix + ".proj_x", blocks_[i].proj_x);
    add_linear(out, prefix + ".proj_y", blocks_[i].proj_y);
  }
  if (config_.fusion == FusionKind::mlb) {
    add_linear(out, "fusion.proj_x", mlb_x_);
    add_linear(out, "fusion.proj_y", mlb_y_);
  }
  add_linear(out, "classifier", classifier_);
  return out;
}

void VqaModel::init() {
  Rng rng(config_.init_seed);
  embedding_.init(rng);
  lstm_.init(rng);
  if (config_.architecture == Architecture::coattention) {
    q_head_.init(rng);
    i_fuse_.init(rng);
    i_head_.init(rng);
  }
  for (auto& b : blocks_) b.init(rng);
  if (config_.fusion == FusionKind::mlb) {
    mlb_x_.init(rng);
    mlb_y_.init(rng);
  }
  classifier_.init(rng);
}

void VqaModel::set_mode(Mode mode) {
  mode_ = mode;
  i_fuse_.dropout.mode = mode;
  for (auto& b : blocks_) b.dropout.mode = mode;
}

void VqaModel::zero_grad() {
  for (auto& [_, p] : named_parameters()) p->zero_grad();
}

Var VqaModel::fuse(Var x, Var y, Rng& rng) {
  switch (config_.fusion) {
    case FusionKind::mfb: return mfb(blocks_.front(), x, y, rng, config_.norm());
    case FusionKind::mfh: return mfh_forward(blocks_, x, y, rng, config_.norm());
    case FusionKind::mlb: return mlb(mlb_x_, mlb_y_, x, y);
  }
  throw ConfigError("unknown fusion kind");
}

ForwardOutput VqaModel::forward(Graph& g, const Tensor& grids, std::span<const std::size_t> tokens,
                                Rng& rng) {
  if (config_.architecture == Architecture::baseline)
    return {forward_baseline(*this, g, global_image_feature(grids), tokens, rng), {}, {}};
  return forward_coattention(*this, g, grids, tokens, rng);
}

Tensor global_image_feature(const Tensor& grids) {
  if (grids.rank() != 2) throw ShapeError("grids must be [G x d], got " + shape_str(grids.shape()));
  const std::size_t rows = grids.dim(0), cols = grids.dim(1);
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) out[j] += grids.at(r, j);
  for (auto& v : out.data()) v /= static_cast<double>(rows);
  return out;
}

Var forward_baseline(VqaModel& model, Graph& g, const Tensor& image_feat,
                     std::span<const std::size_t> tokens, Rng& rng) {
  const auto& c = model.config_;
  if (c.architecture != Architecture::baseline)
    throw ConfigError("forward_baseline needs a baseline architecture");
  if (image_feat.shape() != Shape{c.image_dim})
    throw ShapeError("baseline: image feature " + shape_str(image_feat.shape()) +
                     " does not match image_dim " + std::to_string(c.image_dim));
  Var image = l2_norm(g.constant(image_feat));
  auto enc = encode_question(model.embedding_, model.lstm_, g, tokens, c.max_len);
  Var question = dropout({c.lstm_dropout, model.mode_}, enc.last_state, rng);
  return linear_forward(model.classifier_, model.fuse(image, question, rng));
}

ForwardOutput forward_coattention(VqaModel& model, Graph& g, const Tensor& grids,
                                  std::span<const std::size_t> tokens, Rng& rng) {
  const auto& c = model.config_;
  if (c.architecture != Architecture::coattention)
    throw ConfigError("forward_coattention needs a coattention architecture");
  if (grids.rank() != 2 || grids.dim(1) != c.image_dim)
    throw ShapeError("coattention: grids " + shape_str(grids.shape()) +
                     " do not match image_dim " + std::to_string(c.image_dim));
  auto enc = encode_question(model.embedding_, model.lstm_, g, tokens, c.max_len);
  Var states = dropout({c.lstm_dropout, model.mode_}, enc.all_states, rng);
  auto q = question_self_attention(model.q_head_, states, enc.pad_mask);
  auto img = image_attention(model.i_head_, model.i_fuse_, g.constant(grids), q.attended, rng,
                             c.norm());
  Var logits = linear_forward(model.classifier_, model.fuse(img.attended, q.attended, rng));
  return {logits, q.weights, img.weights};
}

ParamTable count_model_params(VqaModel& model) {
  ParamTable t;
  for (auto& [name, p] : model.named_parameters()) {
    t.rows.emplace_back(name, p->size());
    t.total += p->size();
    if (name.starts_with("fusion.")) t.fusion_subtotal += p->size();
  }
  return t;
}

ParamTable describe_params(const ModelConfig& c) {
  c.validate();
  ParamTable t;
  auto add = [&t](const std::string& name, std::size_t n) {
    t.rows.emplace_back(name, n);
    t.total += n;
    if (name.starts_with("fusion.")) t.fusion_subtotal += n;
  };
  auto linear = [&add](const std::string& prefix, std::size_t in, std::size_t out) {
    add(prefix + ".weight", in * out);
    add(prefix + ".bias", out);
  };
  const std::size_t h = c.lstm_hidden, ko = c.k * c.o;
  add("embedding.table", c.question_vocab * c.embed_dim);
  add("lstm.w_input", c.embed_dim * 4 * h);
  add("lstm.w_hidden", h * 4 * h);
  add("lstm.bias", 4 * h);
  if (c.architecture == Architecture::coattention) {
    linear("q_att.hidden", h, c.att_hidden);
    linear("q_att.logits", c.att_hidden, c.q_glimpses);
    linear("i_att.fuse.proj_x", c.image_dim, ko);
    linear("i_att.fuse.proj_y", c.q_glimpses * h, ko);
    linear("i_att.hidden", c.o, c.att_hidden);
    linear("i_att.logits", c.att_hidden, c.i_glimpses);
  }
  const std::size_t blocks =
      c.fusion == FusionKind::mfh ? c.mfh_order : (c.fusion == FusionKind::mfb ? 1 : 0);
  for (std::size_t i = 0; i < blocks; ++i) {
    const std::string prefix = "fusion.block" + std::to_string(i);
    linear(prefix + ".proj_x", c.fusion_m(), ko);
    linear(prefix + ".proj_y", c.fusion_n(), ko);
  }
  if (c.fusion == FusionKind::mlb) {
    linear("fusion.proj_x", c.fusion_m(), c.o);
    linear("fusion.proj_y", c.fusion_n(), c.o);
  }
  linear("classifier", c.fused_width(), c.num_answers);
  return t;
}

}  // namespace mfb
