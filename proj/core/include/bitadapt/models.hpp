#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bitadapt/quant.hpp"
#include "bitadapt/random.hpp"
#include "bitadapt/tensor.hpp"

namespace bitadapt {

enum class ModelKind {
  conv4_pn,       // 4 conv blocks, flattened output is the embedding
  conv5_maml,     // 4 conv blocks of 32 filters plus a linear head
  conv8,          // 6 conv (64/128/256) + 2 linear (512 hidden)
  conv8_reduced,  // same topology at widths 8/16/32, 64 hidden
};

ModelKind parse_model_kind(std::string_view text);
std::string to_string(ModelKind kind);

enum class OutputRole { logits, embedding };

struct LayerDesc {
  enum class Type { conv2d, batch_norm, relu, max_pool, flatten, linear };
  Type type;
  /// Parameter prefix ("conv1", "bn3", "fc") for layers that own parameters.
  std::string name;
  std::size_t in_features = 0;   // channels for conv/bn, features for linear
  std::size_t out_features = 0;
  std::size_t kernel = 0;
  std::size_t padding = 0;
  /// Output shape without the batch dimension.
  Shape out_shape;
};

struct ParamInfo {
  std::string name;
  Shape shape;
  bool batch_norm = false;
};

struct ModelSpec {
  ModelKind kind{};
  std::size_t width = 0;  // head width (classes) or first-stage filter count
  Shape input_shape;      // (C, H, W)
  OutputRole role = OutputRole::logits;
  std::vector<LayerDesc> layers;

  std::size_t output_features() const;
  std::vector<ParamInfo> parameters() const;
  std::size_t parameter_count() const;
  std::size_t batch_norm_parameter_count() const;
  /// Names of the first and last weight tensors in layer order.
  std::string first_weight() const;
  std::string last_weight() const;
};

/// `width` is the class count for classifiers and the filter count of the
/// embedding network (0 picks 64). Max pools that would shrink a side below 1
/// are left out so small inputs still work.
ModelSpec build_model(ModelKind kind, std::size_t width, Shape input_shape);

template <Real T>
using BasicParams = std::map<std::string, BasicTensor<T>>;
using Params = BasicParams<float>;

/// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases, BN scale 1
/// and shift 0. Every parameter requires grad.
Params init_params(const ModelSpec& spec, Rng& rng);

/// Deep copy; the copy shares no storage with `params`.
template <Real T>
BasicParams<T> clone_params(const BasicParams<T>& params) {
  BasicParams<T> out;
  for (const auto& [name, t] : params) out.emplace(name, t.clone());
  return out;
}

template <Real U, Real T>
BasicParams<U> cast_params(const BasicParams<T>& params) {
  BasicParams<U> out;
  for (const auto& [name, t] : params) {
    auto c = t.template cast<U>();
    c.set_requires_grad(t.requires_grad());
    out.emplace(name, std::move(c));
  }
  return out;
}

/// Throws ShapeError unless names and shapes match the spec exactly.
template <Real T>
void check_params(const ModelSpec& spec, const BasicParams<T>& params);

struct QuantPolicy {
  bool quantize_first_layer = false;
  bool quantize_last_layer = false;
  bool quantize_bn = false;  // BN stays full precision; true is rejected
};

/// Observer for tests: the weight tensors each layer consumed and every
/// quantized activation.
template <Real T>
struct BasicForwardTrace {
  std::vector<std::pair<std::string, BasicTensor<T>>> weights;
  std::vector<BasicTensor<T>> activations;
};
using ForwardTrace = BasicForwardTrace<float>;

/// Forward pass under `task`: non-exempt weights are quantized right before
/// use and activations right after each relu. Biases and BN parameters stay
/// full precision.
template <Real T>
BasicTensor<T> forward_quantized(const ModelSpec& spec, const BasicParams<T>& params, const BasicTensor<T>& x,
                                 const BitwidthTask& task, const QuantPolicy& policy = {},
                                 BasicForwardTrace<T>* trace = nullptr);

template <Real T>
BasicTensor<T> forward(const ModelSpec& spec, const BasicParams<T>& params, const BasicTensor<T>& x) {
  return forward_quantized(spec, params, x, BitwidthTask::full_precision());
}

}  // namespace bitadapt
