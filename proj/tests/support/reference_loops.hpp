#pragma once

// Plain, unquantized training loops written directly against the tensor ops.
// They never touch the engines, the quantizers or the optimizer class, and
// serve as the baseline the engines must collapse to at full precision.

#include <cstring>
#include <vector>

#include "bitadapt/data.hpp"
#include "bitadapt/models.hpp"
#include "bitadapt/ops.hpp"

namespace bitadapt::reference {

inline void zero(Params& p) {
  for (auto& [n, t] : p) t.zero_grad();
}

// w <- w - lr * g, elementwise in float.
inline void descend(Params& p, float lr) {
  for (auto& [n, t] : p) {
    if (!t.has_grad()) continue;
    auto w = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - lr * g[i];
  }
}

inline Params copy(const Params& p) {
  Params out;
  for (const auto& [n, t] : p) {
    std::vector<float> v(t.data().begin(), t.data().end());
    out.emplace(n, Tensor::from_data(t.shape(), std::move(v), true));
  }
  return out;
}

/// One epoch of minibatch SGD on cross-entropy.
inline void supervised_epoch(Params& theta, const ModelSpec& spec, const LabeledDataset& ds, std::size_t batch_size,
                             float lr, Rng& data_rng) {
  BatchIterator it(ds.size(), batch_size, true, false, data_rng);
  std::vector<std::size_t> batch;
  while (it.next(batch)) {
    zero(theta);
    cross_entropy(forward(spec, theta, ds.images(batch)), ds.labels_at(batch)).backward();
    descend(theta, lr);
  }
  zero(theta);
}

/// One first-order MAML update with a single task per meta-batch.
inline void fomaml_update(Params& theta, const ModelSpec& spec, const LabeledDataset& ds,
                          std::span<const std::int64_t> classes, std::size_t ways, std::size_t shots,
                          std::size_t queries, std::size_t inner_steps, float inner_lr, float outer_lr,
                          Rng& data_rng) {
  const auto ep = sample_episode(ds, classes, ways, shots, queries, data_rng);
  Params phi = copy(theta);
  for (std::size_t u = 0; u < inner_steps; ++u) {
    zero(phi);
    cross_entropy(forward(spec, phi, ep.support_x), ep.support_y).backward();
    descend(phi, inner_lr);
  }
  zero(phi);
  cross_entropy(forward(spec, phi, ep.query_x), ep.query_y).backward();
  for (auto& [n, t] : theta) {
    auto w = t.mutable_data();
    auto g = phi.at(n).grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = w[i] - outer_lr * g[i];
  }
}

/// One prototypical-network update on a fresh episode.
inline void protonet_update(Params& theta, const ModelSpec& spec, const LabeledDataset& ds,
                            std::span<const std::int64_t> classes, std::size_t ways, std::size_t shots,
                            std::size_t queries, float lr, Rng& data_rng) {
  const auto ep = sample_episode(ds, classes, ways, shots, queries, data_rng);
  std::vector<float> all(ep.support_x.data().begin(), ep.support_x.data().end());
  all.insert(all.end(), ep.query_x.data().begin(), ep.query_x.data().end());
  Shape shape = ep.support_x.shape();
  shape[0] += ep.query_x.dim(0);
  zero(theta);
  const auto emb = forward(spec, theta, Tensor::from_data(shape, std::move(all)));
  const std::size_t ns = ways * shots, nq = ways * queries;
  std::vector<std::size_t> groups(ep.support_y.begin(), ep.support_y.end());
  const auto protos = group_mean(slice_rows(emb, 0, ns), std::span<const std::size_t>(groups), ways);
  const auto d = squared_euclidean_distance(slice_rows(emb, ns, nq), protos);
  const auto loss = scale(nll_loss(log_softmax(scale(d, -1.f), 1), ep.query_y, Reduction::sum),
                          static_cast<float>(1.0 / static_cast<double>(ways * shots)));
  loss.backward();
  descend(theta, lr);
  zero(theta);
}

inline bool bit_identical(const Params& a, const Params& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [n, t] : a) {
    auto it = b.find(n);
    if (it == b.end()) return false;
    auto x = t.data();
    auto y = it->second.data();
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::memcmp(&x[i], &y[i], sizeof(float)) != 0) return false;
    }
  }
  return true;
}

}  // namespace bitadapt::reference
