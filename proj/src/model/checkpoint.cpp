// SPDX-License-Identifier: Apache-2.0
#include "ddnt/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ddnt {

namespace {

constexpr char kMagic[4] = {'D', 'D', 'N', 'T'};

class Writer {
public:
  void bytes(const void *p, std::size_t n) {
    const auto *b = static_cast<const std::uint8_t *>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U> void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i)
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

private:
  std::vector<std::uint8_t> out_;
};

class Reader {
public:
  explicit Reader(const std::vector<std::uint8_t> &b) : b_(b) {}

  const std::uint8_t *take(std::size_t n, const char *what) {
    if (n > b_.size() - pos_)
      throw CheckpointTruncatedError(
          std::string("checkpoint truncated while reading ") + what + " at byte " +
          std::to_string(pos_) + " (need " + std::to_string(n) + ", have " +
          std::to_string(b_.size() - pos_) + ")");
    const auto *p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename U> U le(const char *what) {
    const auto *p = take(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
    return v;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

private:
  const std::vector<std::uint8_t> &b_;
  std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model &model) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kCheckpointVersion);
  const auto cfg = model.config.to_text();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  const auto &entries = model.params.entries();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto &e : entries) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(e.value.rank()));
    for (auto d : e.value.shape())
      w.le<std::uint64_t>(d);
    for (auto v : e.value.vec())
      w.f32(v);
  }
  return w.take();
}

Model deserialize_checkpoint(const std::vector<std::uint8_t> &bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0)
    throw CheckpointFormatError("not a checkpoint: bad magic bytes");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw CheckpointFormatError("unsupported checkpoint version " +
                                std::to_string(version));
  const auto cfg_len = r.le<std::uint32_t>("config length");
  const auto *cfg_bytes = r.take(cfg_len, "config text");
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(
        std::string_view(reinterpret_cast<const char *>(cfg_bytes), cfg_len));
  } catch (const ConfigError &e) {
    throw CheckpointFormatError(std::string("checkpoint config: ") + e.what());
  }
  // The reference model fixes the expected names, order and shapes.
  Model model = build_model(cfg, 0);
  auto &entries = model.params.entries();
  const auto count = r.le<std::uint32_t>("tensor count");
  if (count != entries.size())
    throw CheckpointShapeError(
        "", "checkpoint holds " + std::to_string(count) +
                " tensors but its config needs " +
                std::to_string(entries.size()));
  for (auto &e : entries) {
    const auto name_len = r.le<std::uint16_t>("name length");
    const auto *np = r.take(name_len, "tensor name");
    const std::string name(reinterpret_cast<const char *>(np), name_len);
    if (name != e.name)
      throw CheckpointShapeError(name, "checkpoint tensor '" + name +
                                           "' where the config expects '" +
                                           e.name + "'");
    const auto rank = r.le<std::uint8_t>("rank");
    Shape shape(rank);
    for (auto &d : shape)
      d = static_cast<std::size_t>(r.le<std::uint64_t>("dimension"));
    if (shape != e.value.shape())
      throw CheckpointShapeError(name, "shape mismatch for '" + name +
                                           "': file has " + shape_str(shape) +
                                           ", config expects " +
                                           shape_str(e.value.shape()));
    const auto *vp = r.take(e.value.numel() * 4, "tensor values");
    for (std::size_t i = 0; i < e.value.numel(); ++i) {
      std::uint32_t u = 0;
      for (std::size_t b = 0; b < 4; ++b)
        u |= static_cast<std::uint32_t>(vp[4 * i + b]) << (8 * b);
      e.value[i] = std::bit_cast<float>(u);
    }
  }
  if (r.remaining() != 0)
    throw CheckpointFormatError("checkpoint has " +
                                std::to_string(r.remaining()) +
                                " trailing bytes");
  return model;
}

void save_checkpoint(const Model &model, const std::filesystem::path &path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw CheckpointError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char *>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f)
    throw CheckpointError("failed writing '" + path.string() + "'");
}

Model load_checkpoint(const std::filesystem::path &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

} // namespace ddnt
