#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bitadapt/random.hpp"
#include "bitadapt/tensor.hpp"

namespace bitadapt {

/// Images (count, C, H, W) with values in [0, 1] and integer class labels.
struct LabeledDataset {
  Shape image_shape;  // (C, H, W)
  std::vector<float> pixels;
  std::vector<std::int64_t> labels;
  /// Class id -> sample indices in ascending order. Filled by build_index().
  std::map<std::int64_t, std::vector<std::size_t>> class_index;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return shape_numel(image_shape); }
  std::vector<std::int64_t> classes() const;

  /// Rebuilds class_index and checks the invariants (sizes agree, pixels in
  /// [0, 1]); throws std::invalid_argument otherwise.
  void build_index();

  /// Stacks the selected images into (n, C, H, W).
  Tensor images(std::span<const std::size_t> indices) const;
  std::vector<std::int64_t> labels_at(std::span<const std::size_t> indices) const;
};

/// Reads an IDX image file (u8, magic 0x803 for (n, H, W) or 0x804 for
/// (n, C, H, W)) and an IDX label file (u8, magic 0x801). Pixels are scaled by
/// 1/255. Throws IdxError.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Writes the dataset as IDX, rounding pixels to the nearest 1/255 step.
/// Labels must fit in a byte.
void write_idx(const LabeledDataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels);

/// One N-way K-shot episode. Support and query samples are ordered class by
/// class and labelled by position of their class in `classes`.
struct Episode {
  std::vector<std::int64_t> classes;
  std::size_t ways = 0, shots = 0, queries = 0;
  std::vector<std::size_t> support_indices;
  std::vector<std::size_t> query_indices;
  Tensor support_x, query_x;
  std::vector<std::int64_t> support_y, query_y;
};

/// Picks N classes from `split` and, per class, K support plus Q query samples
/// without replacement. Throws std::invalid_argument when the split or a class
/// is too small.
Episode sample_episode(const LabeledDataset& ds, std::span<const std::int64_t> split, std::size_t ways,
                       std::size_t shots, std::size_t queries, Rng& rng);

/// Index batches over [0, count). Order is drawn once at construction.
class BatchIterator {
 public:
  BatchIterator(std::size_t count, std::size_t batch_size, bool shuffle, bool drop_last, Rng& rng);

  /// Fills `batch` with the next indices; false once the epoch is exhausted.
  bool next(std::vector<std::size_t>& batch);
  std::size_t batches() const;

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  bool drop_last_;
  std::size_t pos_ = 0;
};

struct ClassSplit {
  std::vector<std::int64_t> meta_train;
  std::vector<std::int64_t> meta_test;

  /// First `train_count` classes (ascending) train, the rest test.
  static ClassSplit by_count(const LabeledDataset& ds, std::size_t train_count);
  /// Throws std::invalid_argument if the sets overlap or name unknown classes.
  void validate(const LabeledDataset& ds) const;
};

/// Procedural glyph dataset: each class is a fixed set of random strokes and
/// each sample a random affine view of it, rendered with anti-aliasing and
/// stored on the 1/255 grid.
struct GlyphConfig {
  std::uint64_t seed = 0;
  std::size_t num_classes = 60;
  std::size_t samples_per_class = 20;
  std::size_t image_size = 28;
  /// Index of the first sample drawn per class; disjoint ranges give
  /// independent splits of the same classes.
  std::size_t first_sample = 0;
  /// Strength of the per-sample distortion, 1 is the default.
  double jitter = 1.0;
  /// Std-dev of additive pixel noise before clamping.
  double noise = 0.0;
};

LabeledDataset make_glyphs(const GlyphConfig& config);

}  // namespace bitadapt
