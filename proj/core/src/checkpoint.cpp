#include "bitadapt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bitadapt/errors.hpp"

namespace bitadapt {

namespace {

static_assert(sizeof(float) == 4);

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& b) : b_(b) {}

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint truncated");
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(b_[pos_] | (b_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_ + static_cast<std::size_t>(i)]} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<unsigned char>& b_;
  std::size_t pos_ = 0;
};

std::string meta_text(const CheckpointMeta& m) {
  std::string shape;
  for (std::size_t i = 0; i < m.input_shape.size(); ++i) shape += (i ? "x" : "") + std::to_string(m.input_shape[i]);
  return "model.kind=" + m.model_kind + "\nmodel.width=" + std::to_string(m.model_width) +
         "\nmodel.input_shape=" + shape + "\nepoch=" + std::to_string(m.epoch) + "\nrng=" + m.rng_state + "\n";
}

std::size_t meta_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint metadata '" + key + "' is not a number");
  }
}

CheckpointMeta parse_meta(const std::string& text) {
  CheckpointMeta m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError(CheckpointError::Kind::malformed, "bad checkpoint metadata line");
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "model.kind") {
      m.model_kind = value;
    } else if (key == "model.width") {
      m.model_width = meta_number(key, value);
    } else if (key == "model.input_shape") {
      std::size_t start = 0;
      while (start < value.size()) {
        auto x = value.find('x', start);
        if (x == std::string::npos) x = value.size();
        m.input_shape.push_back(meta_number(key, value.substr(start, x - start)));
        start = x + 1;
      }
    } else if (key == "epoch") {
      m.epoch = meta_number(key, value);
    } else if (key == "rng") {
      m.rng_state = value;
    }
  }
  return m;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Params& params, const CheckpointMeta& meta) {
  Writer w;
  w.bytes("MBQT");
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xFFFF) throw CheckpointError(CheckpointError::Kind::malformed, "tensor name too long");
    if (t.rank() > 0xFF) throw CheckpointError(CheckpointError::Kind::malformed, "tensor rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (auto v : t.data()) w.f32(v);
  }
  const auto text = meta_text(meta);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MBQT", 4) != 0) {
    if (bytes.size() < 4) throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint truncated");
    throw CheckpointError(CheckpointError::Kind::bad_magic, "not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.bytes(4);
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointError::Kind::unsupported_version,
                          "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.bytes(r.u16());
    const auto rank = r.u8();
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      numel *= shape.back();
    }
    if (numel == 0) throw CheckpointError(CheckpointError::Kind::malformed, "tensor " + name + " is empty");
    r.need(numel * 4);
    std::vector<float> values(numel);
    for (auto& v : values) v = r.f32();
    ckpt.payload_bytes += numel * 4;
    if (!ckpt.params.emplace(name, Tensor::from_data(shape, std::move(values), true)).second) {
      throw CheckpointError(CheckpointError::Kind::malformed, "duplicate tensor " + name);
    }
  }
  const auto text = r.bytes(r.u32());
  if (!r.done()) throw CheckpointError(CheckpointError::Kind::malformed, "trailing bytes after checkpoint");
  ckpt.meta = parse_meta(text);
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Params& params, const CheckpointMeta& meta) {
  const auto bytes = encode_checkpoint(params, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

ModelSpec checkpoint_model(const Checkpoint& ckpt) {
  if (ckpt.meta.model_kind.empty()) {
    throw CheckpointError(CheckpointError::Kind::malformed, "checkpoint does not record its model");
  }
  ModelSpec spec;
  try {
    spec = build_model(parse_model_kind(ckpt.meta.model_kind), ckpt.meta.model_width, ckpt.meta.input_shape);
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::malformed, std::string("checkpoint model: ") + e.what());
  }
  try {
    check_params(spec, ckpt.params);
  } catch (const ShapeError& e) {
    throw CheckpointError(CheckpointError::Kind::malformed, e.what());
  }
  return spec;
}

}  // namespace bitadapt
