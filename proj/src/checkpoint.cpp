#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fsner/training.hpp"
#include "json.hpp"

namespace fsner {

namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "FSNERCKP";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DataError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                      std::to_string(pos_));
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t uint(std::size_t width, const char* what) {
    auto s = take(width, what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

json encoder_to_json(const EncoderConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"vocab_size", c.vocab_size},
          {"hidden_dim", c.hidden_dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ff_dim", c.ff_dim},
          {"dropout", c.dropout},
          {"max_len", c.max_len},
          {"window", c.window},
          {"position_scale", c.position_scale},
          {"seed", c.seed}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.kind = encoder_kind_from_string(j.at("kind").get<std::string>());
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.position_scale = j.at("position_scale").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json metadata(const Checkpoint& c) {
  const auto& p = c.model.config.projection;
  json labels = {{"classes", c.labels.entity_classes()},
                 {"role", c.labels.role() == DomainRole::Source ? "source" : "target"}};
  json map = json::object();
  for (const auto& [cls, phrase] : c.label_map.entries()) map[cls] = phrase;
  return {{"encoder", encoder_to_json(c.model.config.encoder)},
          {"projection", {{"input_dim", p.input_dim}, {"hidden_dim", p.hidden_dim}, {"output_dim", p.output_dim}}},
          {"vocab", {{"lowercase", c.vocab.lowercase()}, {"tokens", c.vocab.tokens()}}},
          {"labels", labels},
          {"label_map", map}};
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kMagic);
  put_u32(out, Checkpoint::kFormatVersion);
  const std::string meta = metadata(c).dump();
  put_u64(out, meta.size());
  out += meta;
  put_u32(out, static_cast<std::uint32_t>(c.model.params.size()));
  for (const auto& [name, t] : c.model.params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u64(out, d);
    for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.remaining() < kMagic.size() || in.take(kMagic.size(), "magic") != kMagic) {
    throw DataError("not a checkpoint file (bad magic bytes)");
  }
  const auto version = in.uint(4, "format version");
  if (version != Checkpoint::kFormatVersion) {
    throw DataError("unsupported checkpoint format version " + std::to_string(version) + " (expected " +
                    std::to_string(Checkpoint::kFormatVersion) + ")");
  }
  const auto meta_len = in.uint(8, "metadata length");
  if (meta_len > in.remaining()) throw DataError("checkpoint truncated: metadata block incomplete");
  const auto meta_text = in.take(meta_len, "metadata");

  Checkpoint c;
  try {
    const json meta = json::parse(meta_text);
    c.model.config.encoder = encoder_from_json(meta.at("encoder"));
    const auto& p = meta.at("projection");
    c.model.config.projection = {p.at("input_dim").get<std::size_t>(), p.at("hidden_dim").get<std::size_t>(),
                                 p.at("output_dim").get<std::size_t>()};
    const auto& v = meta.at("vocab");
    c.vocab = Vocabulary::from_tokens(v.at("tokens").get<std::vector<std::string>>(), v.at("lowercase").get<bool>());
    const auto& l = meta.at("labels");
    c.labels = LabelSet(l.at("classes").get<std::vector<std::string>>(),
                        l.at("role").get<std::string>() == "target" ? DomainRole::Target : DomainRole::Source);
    for (const auto& [cls, phrase] : meta.at("label_map").items()) c.label_map.set(cls, phrase.get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata is malformed: ") + e.what());
  }

  const auto count = in.uint(4, "tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = in.uint(4, "tensor name length");
    std::string name(in.take(name_len, "tensor name"));
    const auto rank = in.uint(4, "tensor rank");
    if (rank > 8) throw DataError("checkpoint tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      shape.push_back(in.uint(8, "tensor dims"));
      n *= shape.back();
    }
    if (n > in.remaining() / 8) throw DataError("checkpoint truncated in tensor '" + name + "'");
    std::vector<double> values(n);
    for (auto& x : values) x = std::bit_cast<double>(in.uint(8, "tensor values"));
    if (!c.model.params.emplace(name, Tensor(std::move(shape), std::move(values))).second) {
      throw DataError("checkpoint has duplicate tensor '" + name + "'");
    }
  }
  if (!in.done()) throw DataError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint to '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace fsner
