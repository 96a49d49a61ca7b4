#include "rsam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

namespace rsam {

namespace {

constexpr std::string_view kMagic = "RSAM";

class Writer {
 public:
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

  template <typename T>
  void little(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u16(std::uint16_t v) { little(v); }
  void u32(std::uint32_t v) { little(v); }
  void f32(float v) { little(std::bit_cast<std::uint32_t>(v)); }
  void text(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  bool done() const { return pos_ == in_.size(); }
  std::size_t offset() const { return pos_; }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte offset " + std::to_string(pos_) + " while reading " + what);
    }
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  template <typename T>
  T little(const char* what) {
    const auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
    return v;
  }

  std::string text(const char* what) {
    const std::uint32_t n = little<std::uint32_t>(what);
    const auto s = take(n, what);
    return std::string(s.begin(), s.end());
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const LayerParams& params, const RunConfig& config) {
  Writer w;
  w.bytes(kMagic);
  w.u16(kCheckpointVersion);
  w.text(render_config(config));
  for (const auto& e : params.entries()) {
    w.text(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.tensor.values()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(kMagic.size(), "magic");
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), magic.size()) != kMagic) {
    throw FormatError("not an RSAM checkpoint (bad magic)");
  }
  const auto version = r.little<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config = parse_config(r.text("config"));
  ck.config.validate();
  LayerParams params = init_rsam(ck.config.model, 0);

  std::size_t slot = 0;
  const auto entries = params.entries();
  while (!r.done()) {
    const std::size_t at = r.offset();
    const std::string name = r.text("tensor name");
    const std::uint32_t rank = r.little<std::uint32_t>("tensor rank");
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = r.little<std::uint32_t>("tensor dims");
    if (slot >= entries.size() || entries[slot].name != name) {
      throw CheckpointMismatch("checkpoint tensor '" + name + "' at byte offset " + std::to_string(at) +
                               " does not match the model (expected " +
                               (slot < entries.size() ? "'" + entries[slot].name + "'" : std::string("no more tensors")) +
                               ")");
    }
    Tensor t = entries[slot].tensor;
    if (t.shape() != shape) {
      throw CheckpointMismatch("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                               " but the model expects " + shape_str(t.shape()));
    }
    const auto raw = r.take(t.size() * 4, "tensor values");
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) | static_cast<std::uint32_t>(raw[4 * i + 1]) << 8 |
                                 static_cast<std::uint32_t>(raw[4 * i + 2]) << 16 |
                                 static_cast<std::uint32_t>(raw[4 * i + 3]) << 24;
      v[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    ++slot;
  }
  if (slot != entries.size()) {
    throw CheckpointMismatch("checkpoint is missing tensor '" + entries[slot].name + "'");
  }
  ck.params = std::move(params);
  return ck;
}

void checkpoint_save(const LayerParams& params, const RunConfig& config, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace rsam
