#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "bitadapt/data.hpp"
#include "bitadapt/errors.hpp"

namespace bitadapt {

namespace {

constexpr std::uint32_t kLabelMagic = 0x00000801;
constexpr std::uint32_t kImageMagic3 = 0x00000803;
constexpr std::uint32_t kImageMagic4 = 0x00000804;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, path.string(), "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

struct IdxHeader {
  std::uint32_t magic;
  std::vector<std::uint32_t> dims;
  std::size_t payload_offset;
};

IdxHeader parse_header(const std::vector<unsigned char>& b, const std::string& path) {
  if (b.size() < 4) throw IdxError(IdxError::Kind::truncated, path, "truncated header");
  const std::uint32_t magic = be32(b, 0);
  if (magic != kLabelMagic && magic != kImageMagic3 && magic != kImageMagic4) {
    throw IdxError(IdxError::Kind::bad_magic, path, "bad magic number");
  }
  const std::size_t ndims = magic & 0xFF;
  if (b.size() < 4 + 4 * ndims) throw IdxError(IdxError::Kind::truncated, path, "truncated header");
  IdxHeader h{magic, {}, 4 + 4 * ndims};
  std::size_t total = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    const auto d = be32(b, 4 + 4 * i);
    if (d == 0 && i > 0) throw IdxError(IdxError::Kind::bad_dimensions, path, "zero-sized dimension");
    h.dims.push_back(d);
    total *= d;
  }
  if (b.size() < h.payload_offset + total) {
    throw IdxError(IdxError::Kind::truncated, path, "truncated payload");
  }
  if (b.size() > h.payload_offset + total) {
    throw IdxError(IdxError::Kind::bad_dimensions, path, "trailing bytes after payload");
  }
  return h;
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto ib = read_all(images);
  const auto lb = read_all(labels);
  const auto ih = parse_header(ib, images.string());
  const auto lh = parse_header(lb, labels.string());
  if (ih.magic == kLabelMagic) throw IdxError(IdxError::Kind::bad_magic, images.string(), "expected an image file");
  if (lh.magic != kLabelMagic) throw IdxError(IdxError::Kind::bad_magic, labels.string(), "expected a label file");
  if (ih.dims[0] != lh.dims[0]) {
    throw IdxError(IdxError::Kind::count_mismatch, images.string(),
                   "count mismatch: " + std::to_string(ih.dims[0]) + " images vs " + std::to_string(lh.dims[0]) +
                       " labels");
  }
  if (ih.dims[0] == 0) throw IdxError(IdxError::Kind::bad_dimensions, images.string(), "no samples");

  LabeledDataset ds;
  if (ih.magic == kImageMagic3) {
    ds.image_shape = {1, ih.dims[1], ih.dims[2]};
  } else {
    ds.image_shape = {ih.dims[1], ih.dims[2], ih.dims[3]};
  }
  const std::size_t n = ih.dims[0] * ds.image_numel();
  ds.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.pixels[i] = static_cast<float>(ib[ih.payload_offset + i]) / 255.0f;
  ds.labels.resize(lh.dims[0]);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) ds.labels[i] = lb[lh.payload_offset + i];
  ds.build_index();
  return ds;
}

void write_idx(const LabeledDataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (ds.image_shape.size() != 3) throw std::invalid_argument("write_idx: image shape must be (C, H, W)");
  std::ofstream im(images, std::ios::binary);
  std::ofstream lb(labels, std::ios::binary);
  if (!im) throw IdxError(IdxError::Kind::io, images.string(), "cannot create file");
  if (!lb) throw IdxError(IdxError::Kind::io, labels.string(), "cannot create file");
  const auto count = static_cast<std::uint32_t>(ds.size());
  if (ds.image_shape[0] == 1) {
    put_be32(im, kImageMagic3);
    put_be32(im, count);
  } else {
    put_be32(im, kImageMagic4);
    put_be32(im, count);
    put_be32(im, static_cast<std::uint32_t>(ds.image_shape[0]));
  }
  put_be32(im, static_cast<std::uint32_t>(ds.image_shape[1]));
  put_be32(im, static_cast<std::uint32_t>(ds.image_shape[2]));
  std::vector<char> bytes(ds.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(ds.pixels[i], 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  im.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  put_be32(lb, kLabelMagic);
  put_be32(lb, count);
  for (auto y : ds.labels) {
    if (y < 0 || y > 255) throw std::invalid_argument("write_idx: label " + std::to_string(y) + " does not fit a byte");
    lb.put(static_cast<char>(static_cast<unsigned char>(y)));
  }
  if (!im || !lb) throw IdxError(IdxError::Kind::io, images.string(), "write failed");
}

}  // namespace bitadapt
