#include <algorithm>
#include <set>
#include <stdexcept>

#include "bitadapt/data.hpp"

namespace bitadapt {

std::vector<std::int64_t> LabeledDataset::classes() const {
  std::vector<std::int64_t> out;
  out.reserve(class_index.size());
  for (const auto& [c, idx] : class_index) out.push_back(c);
  return out;
}

void LabeledDataset::build_index() {
  if (image_shape.size() != 3 || image_numel() == 0) throw std::invalid_argument("dataset image shape must be (C, H, W)");
  if (pixels.size() != labels.size() * image_numel()) {
    throw std::invalid_argument("dataset has " + std::to_string(pixels.size()) + " pixels for " +
                                std::to_string(labels.size()) + " labels");
  }
  for (auto v : pixels) {
    if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("dataset pixel outside [0, 1]");
  }
  class_index.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) class_index[labels[i]].push_back(i);
}

Tensor LabeledDataset::images(std::span<const std::size_t> indices) const {
  const std::size_t per = image_numel();
  std::vector<float> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw std::out_of_range("sample index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  return Tensor::from_data(std::move(shape), std::move(out));
}

std::vector<std::int64_t> LabeledDataset::labels_at(std::span<const std::size_t> indices) const {
  std::vector<std::int64_t> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
  return out;
}

Episode sample_episode(const LabeledDataset& ds, std::span<const std::int64_t> split, std::size_t ways,
                       std::size_t shots, std::size_t queries, Rng& rng) {
  if (ways == 0 || shots == 0) throw std::invalid_argument("episode needs N >= 1 and K >= 1");
  if (split.size() < ways) {
    throw std::invalid_argument("episode needs " + std::to_string(ways) + " classes, split has " +
                                std::to_string(split.size()));
  }
  std::vector<std::int64_t> pool(split.begin(), split.end());
  // Partial Fisher-Yates: the first `ways` slots become the chosen classes.
  for (std::size_t i = 0; i < ways; ++i) {
    const std::size_t j = i + rng.uniform_index(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  Episode ep;
  ep.ways = ways;
  ep.shots = shots;
  ep.queries = queries;
  ep.classes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(ways));
  for (std::size_t n = 0; n < ways; ++n) {
    auto it = ds.class_index.find(ep.classes[n]);
    if (it == ds.class_index.end() || it->second.size() < shots + queries) {
      throw std::invalid_argument("class " + std::to_string(ep.classes[n]) + " has fewer than " +
                                  std::to_string(shots + queries) + " samples");
    }
    std::vector<std::size_t> members = it->second;
    for (std::size_t i = 0; i < shots + queries; ++i) {
      const std::size_t j = i + rng.uniform_index(members.size() - i);
      std::swap(members[i], members[j]);
    }
    for (std::size_t i = 0; i < shots; ++i) {
      ep.support_indices.push_back(members[i]);
      ep.support_y.push_back(static_cast<std::int64_t>(n));
    }
    for (std::size_t i = shots; i < shots + queries; ++i) {
      ep.query_indices.push_back(members[i]);
      ep.query_y.push_back(static_cast<std::int64_t>(n));
    }
  }
  ep.support_x = ds.images(ep.support_indices);
  if (queries > 0) ep.query_x = ds.images(ep.query_indices);
  return ep;
}

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, bool shuffle, bool drop_last, Rng& rng)
    : order_(count), batch_size_(batch_size), drop_last_(drop_last) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  for (std::size_t i = 0; i < count; ++i) order_[i] = i;
  if (shuffle) rng.shuffle(std::span<std::size_t>(order_));
}

bool BatchIterator::next(std::vector<std::size_t>& batch) {
  const std::size_t left = order_.size() - pos_;
  if (left == 0 || (drop_last_ && left < batch_size_)) return false;
  const std::size_t take = std::min(left, batch_size_);
  batch.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + take));
  pos_ += take;
  return true;
}

std::size_t BatchIterator::batches() const {
  return drop_last_ ? order_.size() / batch_size_ : (order_.size() + batch_size_ - 1) / batch_size_;
}

ClassSplit ClassSplit::by_count(const LabeledDataset& ds, std::size_t train_count) {
  auto all = ds.classes();
  if (train_count > all.size()) throw std::invalid_argument("split asks for more classes than the dataset has");
  ClassSplit s;
  s.meta_train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(train_count));
  s.meta_test.assign(all.begin() + static_cast<std::ptrdiff_t>(train_count), all.end());
  return s;
}

void ClassSplit::validate(const LabeledDataset& ds) const {
  std::set<std::int64_t> seen;
  for (const auto* part : {&meta_train, &meta_test}) {
    for (auto c : *part) {
      if (!ds.class_index.contains(c)) throw std::invalid_argument("split names unknown class " + std::to_string(c));
      if (!seen.insert(c).second) throw std::invalid_argument("class " + std::to_string(c) + " is in both splits");
    }
  }
}

}  // namespace bitadapt
