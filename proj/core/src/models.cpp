#include "bitadapt/models.hpp"

#include <cmath>
#include <stdexcept>

#include "bitadapt/errors.hpp"
#include "bitadapt/ops.hpp"

namespace bitadapt {

ModelKind parse_model_kind(std::string_view text) {
  if (text == "conv4-pn") return ModelKind::conv4_pn;
  if (text == "conv5-maml") return ModelKind::conv5_maml;
  if (text == "conv8") return ModelKind::conv8;
  if (text == "conv8-reduced") return ModelKind::conv8_reduced;
  throw std::invalid_argument("unknown model kind '" + std::string(text) + "'");
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::conv4_pn: return "conv4-pn";
    case ModelKind::conv5_maml: return "conv5-maml";
    case ModelKind::conv8: return "conv8";
    case ModelKind::conv8_reduced: return "conv8-reduced";
  }
  return "?";
}

namespace {

using Type = LayerDesc::Type;

class Builder {
 public:
  explicit Builder(Shape input) : shape_(std::move(input)) {}

  void conv(std::size_t out) {
    const std::string name = "conv" + std::to_string(++convs_);
    layers_.push_back({Type::conv2d, name, shape_[0], out, 3, 1, {out, shape_[1], shape_[2]}});
    shape_ = layers_.back().out_shape;
    batch_norm();
    layers_.push_back({Type::relu, "", 0, 0, 0, 0, shape_});
  }

  void pool() {
    if (shape_[1] < 2 || shape_[2] < 2) return;
    shape_ = {shape_[0], shape_[1] / 2, shape_[2] / 2};
    layers_.push_back({Type::max_pool, "", 0, 0, 2, 0, shape_});
  }

  void flatten() {
    shape_ = {shape_numel(shape_)};
    layers_.push_back({Type::flatten, "", 0, 0, 0, 0, shape_});
  }

  void linear(const std::string& name, std::size_t out) {
    layers_.push_back({Type::linear, name, shape_[0], out, 0, 0, {out}});
    shape_ = {out};
  }

  void batch_norm() {
    const std::string name = "bn" + std::to_string(++bns_);
    layers_.push_back({Type::batch_norm, name, shape_[0], shape_[0], 0, 0, shape_});
  }

  void relu() { layers_.push_back({Type::relu, "", 0, 0, 0, 0, shape_}); }

  std::vector<LayerDesc> take() { return std::move(layers_); }

 private:
  Shape shape_;
  std::vector<LayerDesc> layers_;
  int convs_ = 0;
  int bns_ = 0;
};

void conv8_stack(Builder& b, std::size_t w0, std::size_t hidden, std::size_t classes) {
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::size_t w = w0 << stage;
    b.conv(w);
    b.conv(w);
    b.pool();
  }
  b.flatten();
  b.linear("fc1", hidden);
  b.batch_norm();
  b.relu();
  b.linear("fc2", classes);
}

}  // namespace

ModelSpec build_model(ModelKind kind, std::size_t width, Shape input_shape) {
  if (input_shape.size() != 3 || shape_numel(input_shape) == 0) {
    throw ShapeError("build_model", "input shape must be (C, H, W), got " + shape_to_string(input_shape));
  }
  ModelSpec spec;
  spec.kind = kind;
  spec.input_shape = input_shape;
  Builder b(input_shape);
  switch (kind) {
    case ModelKind::conv4_pn:
      if (width == 0) width = 64;
      for (int i = 0; i < 4; ++i) {
        b.conv(width);
        b.pool();
      }
      b.flatten();
      spec.role = OutputRole::embedding;
      break;
    case ModelKind::conv5_maml:
      if (width == 0) throw ShapeError("build_model", "classifier needs at least one class");
      for (int i = 0; i < 4; ++i) {
        b.conv(32);
        b.pool();
      }
      b.flatten();
      b.linear("fc", width);
      break;
    case ModelKind::conv8:
      if (width == 0) throw ShapeError("build_model", "classifier needs at least one class");
      conv8_stack(b, 64, 512, width);
      break;
    case ModelKind::conv8_reduced:
      if (width == 0) throw ShapeError("build_model", "classifier needs at least one class");
      conv8_stack(b, 8, 64, width);
      break;
  }
  spec.width = width;
  spec.layers = b.take();
  return spec;
}

std::size_t ModelSpec::output_features() const { return layers.back().out_shape[0]; }

std::vector<ParamInfo> ModelSpec::parameters() const {
  std::vector<ParamInfo> out;
  for (const auto& l : layers) {
    switch (l.type) {
      case Type::conv2d:
        out.push_back({l.name + ".weight", {l.out_features, l.in_features, l.kernel, l.kernel}, false});
        break;
      case Type::linear:
        out.push_back({l.name + ".weight", {l.in_features, l.out_features}, false});
        out.push_back({l.name + ".bias", {l.out_features}, false});
        break;
      case Type::batch_norm:
        out.push_back({l.name + ".gamma", {l.out_features}, true});
        out.push_back({l.name + ".beta", {l.out_features}, true});
        break;
      default:
        break;
    }
  }
  return out;
}

std::size_t ModelSpec::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += shape_numel(p.shape);
  return n;
}

std::size_t ModelSpec::batch_norm_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) {
    if (p.batch_norm) n += shape_numel(p.shape);
  }
  return n;
}

std::string ModelSpec::first_weight() const {
  for (const auto& l : layers) {
    if (l.type == Type::conv2d || l.type == Type::linear) return l.name + ".weight";
  }
  return {};
}

std::string ModelSpec::last_weight() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (it->type == Type::conv2d || it->type == Type::linear) return it->name + ".weight";
  }
  return {};
}

Params init_params(const ModelSpec& spec, Rng& rng) {
  Params params;
  for (const auto& p : spec.parameters()) {
    const std::size_t n = shape_numel(p.shape);
    std::vector<float> values(n, 0.0f);
    if (p.name.ends_with(".weight")) {
      const std::size_t fan_in = p.shape.size() == 4 ? p.shape[1] * p.shape[2] * p.shape[3] : p.shape[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
    } else if (p.name.ends_with(".gamma")) {
      std::fill(values.begin(), values.end(), 1.0f);
    }
    params.emplace(p.name, Tensor::from_data(p.shape, std::move(values), true));
  }
  return params;
}

template <Real T>
void check_params(const ModelSpec& spec, const BasicParams<T>& params) {
  const auto expected = spec.parameters();
  if (expected.size() != params.size()) {
    throw ShapeError("check_params", "expected " + std::to_string(expected.size()) + " tensors, got " +
                                         std::to_string(params.size()));
  }
  for (const auto& p : expected) {
    auto it = params.find(p.name);
    if (it == params.end()) throw ShapeError("check_params", "missing parameter " + p.name);
    if (it->second.shape() != p.shape) {
      throw ShapeError("check_params", p.name + " has shape " + shape_to_string(it->second.shape()) +
                                           ", expected " + shape_to_string(p.shape));
    }
  }
}

namespace {

template <Real T>
const BasicTensor<T>& param(const BasicParams<T>& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ShapeError("forward", "missing parameter " + name);
  return it->second;
}

}  // namespace

template <Real T>
BasicTensor<T> forward_quantized(const ModelSpec& spec, const BasicParams<T>& params, const BasicTensor<T>& x,
                                 const BitwidthTask& task, const QuantPolicy& policy, BasicForwardTrace<T>* trace) {
  if (policy.quantize_bn) throw std::invalid_argument("batch-norm layers are never quantized");
  Shape expect = spec.input_shape;
  if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != expect) {
    throw ShapeError("forward", "input " + shape_to_string(x.shape()) + " vs model input " + shape_to_string(expect));
  }
  const std::string first = spec.first_weight();
  const std::string last = spec.last_weight();
  auto weight_for = [&](const std::string& name) {
    const auto& w = param(params, name);
    const bool exempt = (name == first && !policy.quantize_first_layer) || (name == last && !policy.quantize_last_layer);
    auto used = exempt ? w : quantize_weights(w, task.w);
    if (trace) trace->weights.emplace_back(name, used);
    return used;
  };

  BasicTensor<T> h = x;
  for (const auto& l : spec.layers) {
    switch (l.type) {
      case Type::conv2d:
        h = conv2d(h, weight_for(l.name + ".weight"), Conv2dOptions{1, l.padding});
        break;
      case Type::batch_norm:
        h = batch_norm_transductive(h, param(params, l.name + ".gamma"), param(params, l.name + ".beta"));
        break;
      case Type::relu:
        h = quantize_activations(relu(h), task.a);
        if (trace && !task.a.is_fp()) trace->activations.push_back(h);
        break;
      case Type::max_pool:
        h = max_pool2d(h, 2, 2);
        break;
      case Type::flatten:
        h = flatten(h);
        break;
      case Type::linear:
        h = add(matmul(h, weight_for(l.name + ".weight")), param(params, l.name + ".bias"));
        break;
    }
  }
  return h;
}

template void check_params(const ModelSpec&, const BasicParams<float>&);
template void check_params(const ModelSpec&, const BasicParams<double>&);
template Tensor forward_quantized(const ModelSpec&, const BasicParams<float>&, const Tensor&, const BitwidthTask&,
                                  const QuantPolicy&, BasicForwardTrace<float>*);
template TensorD forward_quantized(const ModelSpec&, const BasicParams<double>&, const TensorD&,
                                   const BitwidthTask&, const QuantPolicy&, BasicForwardTrace<double>*);

}  // namespace bitadapt
