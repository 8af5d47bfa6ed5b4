#include "mfb/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>

#include "json_util.hpp"
#include "mfb/errors.hpp"

namespace mfb {

namespace {

constexpr char kMagic[8] = {'M', 'F', 'B', 'C', 'K', 'P', 'T', '\0'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str32(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& in, std::size_t limit) : in_(in), limit_(limit) {}
  void need(std::size_t n) const {
    if (pos_ + n > limit_) throw IoError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(ModelBundle& bundle) {
  nlohmann::ordered_json header;
  header["model"] = nlohmann::ordered_json::parse(model_config_to_json(bundle.model.config()));
  header["question_tokens"] = bundle.tokens.tokens();
  header["answers"] = bundle.answers.answers();
  const std::string header_text = header.dump();

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(header_text.size());
  w.bytes(header_text.data(), header_text.size());
  const auto params = bundle.model.named_parameters();
  w.u64(params.size());
  for (const auto& [name, p] : params) {
    w.str32(name);
    const Shape& shape = p->value.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u64(d);
    for (double v : p->value.data()) w.f64(v);
  }
  auto& buf = w.buffer();
  w.u64(fnv1a64(buf.data(), buf.size()));
  return std::move(buf);
}

ModelBundle decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw IoError("checkpoint: bad magic (not a checkpoint file)");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + i]) << (8 * i);
  if (stored != fnv1a64(bytes.data(), body)) throw IoError("checkpoint: checksum mismatch");

  Reader r(bytes, body);
  r.str(sizeof kMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  const auto header_len = r.u64();
  const std::string header_text = r.str(header_len);
  std::optional<ModelBundle> parsed;
  try {
    const auto header = detail::parse_json(header_text, "checkpoint header");
    ModelConfig cfg = model_config_from_json(header.at("model").dump());
    parsed.emplace(ModelBundle{
        VqaModel(cfg), TokenVocab(header.at("question_tokens").get<std::vector<std::string>>()),
        AnswerVocab(header.at("answers").get<std::vector<std::string>>())});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  ModelBundle bundle = std::move(*parsed);

  auto params = bundle.model.named_parameters();
  const auto count = r.u64();
  if (count != params.size())
    throw MismatchError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " +
                        std::to_string(params.size()));
  for (auto& [name, p] : params) {
    const std::string stored_name = r.str(r.u32());
    if (stored_name != name)
      throw MismatchError("checkpoint: expected tensor '" + name + "', found '" + stored_name + "'");
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    if (shape != p->value.shape())
      throw MismatchError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                          ", model expects " + shape_str(p->value.shape()));
    for (auto& v : p->value.data()) v = r.f64();
  }
  if (r.pos() != body) throw IoError("checkpoint: trailing bytes before checksum");
  return bundle;
}

void save_checkpoint(ModelBundle& bundle, const std::string& path) {
  const auto bytes = encode_checkpoint(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing '" + path + "'");
}

ModelBundle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mfb
