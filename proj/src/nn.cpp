#include "tricov/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tricov/random.hpp"

namespace tricov {

std::string describe_shape(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ')';
  return out.str();
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Activations are laid out channel-major, (C, N, H, W); a rank-3 tensor is
// the N = 1 case.
struct Layout {
  std::size_t channels, batch, height, width;
};

template <typename T>
Layout layout_of(const Tensor<T>& t) {
  if (t.rank() == 3) return {t.shape[0], 1, t.shape[1], t.shape[2]};
  return {t.shape[0], t.shape[1], t.shape[2], t.shape[3]};
}

template <typename T>
std::vector<std::size_t> with_spatial(const Tensor<T>& t, std::size_t channels,
                                      std::size_t height, std::size_t width) {
  if (t.rank() == 3) return {channels, height, width};
  return {channels, t.shape[1], height, width};
}

// (C, N, H, W) -> (C*k*k, N*Ho*Wo)
template <typename T>
void im2col(const Tensor<T>& input, std::size_t k, std::vector<T>& cols) {
  const Layout in = layout_of(input);
  const std::size_t out_h = in.height - k + 1;
  const std::size_t out_w = in.width - k + 1;
  const std::size_t plane = in.height * in.width;
  cols.resize(in.channels * k * k * in.batch * out_h * out_w);
  T* dst = cols.data();
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t n = 0; n < in.batch; ++n) {
          const T* base = input.data.data() + (c * in.batch + n) * plane;
          for (std::size_t y = 0; y < out_h; ++y) {
            const T* src = base + (y + ky) * in.width + kx;
            std::copy(src, src + out_w, dst);
            dst += out_w;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& cols, std::size_t k, Tensor<T>& d_input) {
  const Layout in = layout_of(d_input);
  const std::size_t out_h = in.height - k + 1;
  const std::size_t out_w = in.width - k + 1;
  const std::size_t plane = in.height * in.width;
  const T* src = cols.data();
  for (std::size_t c = 0; c < in.channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        for (std::size_t n = 0; n < in.batch; ++n) {
          T* base = d_input.data.data() + (c * in.batch + n) * plane;
          for (std::size_t y = 0; y < out_h; ++y) {
            T* dst = base + (y + ky) * in.width + kx;
            for (std::size_t x = 0; x < out_w; ++x) dst[x] += src[x];
            src += out_w;
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv_input(const Tensor<T>& input, const ConvLayer<T>& layer) {
  const std::size_t r = input.rank();
  if ((r != 3 && r != 4) || input.shape[0] != layer.in_channels ||
      input.shape[r - 2] < layer.kernel_size ||
      input.shape[r - 1] < layer.kernel_size) {
    std::ostringstream msg;
    msg << "layer " << layer.name << " expects (" << layer.in_channels
        << ", >=" << layer.kernel_size << ", >=" << layer.kernel_size
        << ") input, got " << describe_shape(input.shape);
    throw ShapeError(msg.str());
  }
}

}  // namespace

template <typename T>
ConvLayer<T> ConvLayer<T>::make(std::string name, std::size_t in,
                                std::size_t out, std::size_t k, bool relu) {
  ConvLayer layer;
  layer.name = std::move(name);
  layer.kernel_size = k;
  layer.in_channels = in;
  layer.out_channels = out;
  layer.weights = Tensor<T>({out, in, k, k});
  layer.bias = Tensor<T>({out});
  layer.has_relu = relu;
  return layer;
}

template <typename T>
Tensor<T> conv_forward_impl(const Tensor<T>& input, const ConvLayer<T>& layer,
                            std::vector<T>* keep_cols) {
  check_conv_input(input, layer);
  const std::size_t k = layer.kernel_size;
  const Layout in = layout_of(input);
  const std::size_t out_h = in.height - k + 1;
  const std::size_t out_w = in.width - k + 1;
  const auto positions = static_cast<Eigen::Index>(in.batch * out_h * out_w);
  const auto depth = static_cast<Eigen::Index>(layer.in_channels * k * k);
  const auto out_c = static_cast<Eigen::Index>(layer.out_channels);

  Tensor<T> output(with_spatial(input, layer.out_channels, out_h, out_w));
  ConstMatrixMap<T> weights(layer.weights.data.data(), out_c, depth);
  MatrixMap<T> out(output.data.data(), out_c, positions);

  if (k == 1) {
    ConstMatrixMap<T> cols(input.data.data(), depth, positions);
    out.noalias() = weights * cols;
  } else {
    std::vector<T> local;
    std::vector<T>& buffer = keep_cols ? *keep_cols : local;
    im2col(input, k, buffer);
    ConstMatrixMap<T> cols(buffer.data(), depth, positions);
    out.noalias() = weights * cols;
  }

  for (Eigen::Index o = 0; o < out_c; ++o) {
    const T b = layer.bias.data[static_cast<std::size_t>(o)];
    auto row = out.row(o);
    if (layer.has_relu) {
      row = (row.array() + b).cwiseMax(T(0));
    } else {
      row.array() += b;
    }
  }
  return output;
}

template <typename T>
Tensor<T> conv_backward_impl(const Tensor<T>& input, const Tensor<T>& output,
                             const Tensor<T>& d_output, const ConvLayer<T>& layer,
                             LayerGrads<T>& grads, bool need_input_grad,
                             const std::vector<T>* cached_cols) {
  check_conv_input(input, layer);
  if (d_output.shape != output.shape) {
    throw ShapeError("layer " + layer.name + ": gradient shape " +
                     describe_shape(d_output.shape) + " does not match output " +
                     describe_shape(output.shape));
  }
  const std::size_t k = layer.kernel_size;
  const auto positions = static_cast<Eigen::Index>(output.size() / layer.out_channels);
  const auto depth = static_cast<Eigen::Index>(layer.in_channels * k * k);
  const auto out_c = static_cast<Eigen::Index>(layer.out_channels);

  if (grads.weights.size() != layer.weights.size()) {
    grads.weights.assign(layer.weights.size(), T(0));
  }
  if (grads.bias.size() != layer.bias.size()) {
    grads.bias.assign(layer.bias.size(), T(0));
  }

  std::vector<T> masked(d_output.data);
  if (layer.has_relu) {
    for (std::size_t i = 0; i < masked.size(); ++i) {
      if (!(output.data[i] > T(0))) masked[i] = T(0);
    }
  }
  ConstMatrixMap<T> d_out(masked.data(), out_c, positions);

  std::vector<T> buffer;
  const T* cols_ptr = input.data.data();
  if (k != 1) {
    if (cached_cols && cached_cols->size() == static_cast<std::size_t>(depth * positions)) {
      cols_ptr = cached_cols->data();
    } else {
      im2col(input, k, buffer);
      cols_ptr = buffer.data();
    }
  }
  ConstMatrixMap<T> cols(cols_ptr, depth, positions);

  MatrixMap<T> d_weights(grads.weights.data(), out_c, depth);
  d_weights.noalias() += d_out * cols.transpose();
  // sequential sum, independent of buffer alignment
  for (Eigen::Index o = 0; o < out_c; ++o) {
    const T* row = masked.data() + o * positions;
    T acc = T(0);
    for (Eigen::Index p = 0; p < positions; ++p) acc += row[p];
    grads.bias[static_cast<std::size_t>(o)] += acc;
  }

  if (!need_input_grad) return {};

  Tensor<T> d_input(input.shape);
  ConstMatrixMap<T> weights(layer.weights.data.data(), out_c, depth);
  if (k == 1) {
    MatrixMap<T> d_cols(d_input.data.data(), depth, positions);
    d_cols.noalias() = weights.transpose() * d_out;
  } else {
    std::vector<T> d_cols_buffer(static_cast<std::size_t>(depth * positions));
    MatrixMap<T> d_cols(d_cols_buffer.data(), depth, positions);
    d_cols.noalias() = weights.transpose() * d_out;
    col2im_add(d_cols_buffer, k, d_input);
  }
  return d_input;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const ConvLayer<T>& layer) {
  return conv_forward_impl(input, layer, static_cast<std::vector<T>*>(nullptr));
}

template <typename T>
Tensor<T> conv_backward(const Tensor<T>& input, const Tensor<T>& output,
                        const Tensor<T>& d_output, const ConvLayer<T>& layer,
                        LayerGrads<T>& grads, bool need_input_grad) {
  return conv_backward_impl(input, output, d_output, layer, grads, need_input_grad,
                            static_cast<const std::vector<T>*>(nullptr));
}

template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input) {
  const std::size_t r = input.rank();
  if ((r != 3 && r != 4) || input.shape[r - 2] < 2 || input.shape[r - 1] < 2) {
    throw ShapeError("max pool expects (C, [N,] >=2, >=2) input, got " +
                     describe_shape(input.shape));
  }
  const Layout in = layout_of(input);
  const std::size_t planes = in.channels * in.batch;
  const std::size_t out_h = in.height / 2;
  const std::size_t out_w = in.width / 2;

  PoolResult<T> result;
  result.output = Tensor<T>(with_spatial(input, in.channels, out_h, out_w));
  result.argmax.resize(result.output.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * in.height * in.width;
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x, ++o) {
        std::size_t best = base + 2 * y * in.width + 2 * x;
        T best_value = input.data[best];
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * in.width + 2 * x + dx;
            if (input.data[idx] > best_value) {
              best_value = input.data[idx];
              best = idx;
            }
          }
        }
        result.output.data[o] = best_value;
        result.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& d_output,
                           const std::vector<std::uint32_t>& argmax,
                           const std::vector<std::size_t>& input_shape) {
  if (d_output.size() != argmax.size()) {
    throw ShapeError("max pool backward: gradient " +
                     describe_shape(d_output.shape) +
                     " does not match cached argmax count");
  }
  Tensor<T> d_input(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    d_input.data[argmax[i]] += d_output.data[i];
  }
  return d_input;
}

template <typename T>
Network<T>::Network() {
  std::size_t in = 1;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    const auto& spec = kLayerTable[i];
    layers_[i] = ConvLayer<T>::make("conv" + std::to_string(i + 1), in,
                                    spec.features, spec.kernel_size,
                                    i + 1 < kNumLayers);
    in = spec.features;
  }
}

template <typename T>
Network<T> Network<T>::initialized(std::uint64_t seed) {
  Network net;
  Rng rng(seed, 0x1417);
  for (auto& layer : net.layers_) {
    const double fan_in = static_cast<double>(layer.in_channels *
                                              layer.kernel_size * layer.kernel_size);
    const double bound = std::sqrt(6.0 / fan_in);
    for (auto& w : layer.weights.data) w = static_cast<T>(rng.uniform(-bound, bound));
  }
  return net;
}

template <typename T>
std::size_t Network<T>::output_extent(std::size_t n) {
  if (n < kPatchSize) return 0;
  for (const auto& spec : kLayerTable) {
    n = n - spec.kernel_size + 1;
    if (spec.pool_after) n /= 2;
  }
  return n;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, ForwardCache<T>* cache) const {
  Tensor<T> x;
  if (input.rank() == 2) {
    x.shape = {1, input.shape[0], input.shape[1]};
    x.data = input.data;
  } else {
    x.shape = input.shape;
    x.data = input.data;
  }
  const std::size_t r = x.rank();
  if ((r != 3 && r != 4) || x.shape[0] != 1 || x.shape[r - 2] < kPatchSize ||
      x.shape[r - 1] < kPatchSize) {
    throw ShapeError("network input must be (1, [N,] >=32, >=32), got " +
                     describe_shape(input.shape));
  }
  if (cache) cache->valid = false;

  for (std::size_t i = 0; i < kNumLayers; ++i) {
    Tensor<T> y = conv_forward_impl(x, layers_[i], cache ? &cache->cols[i] : nullptr);
    if (cache) {
      cache->inputs[i] = std::move(x);
      cache->outputs[i] = y;
    }
    if (kLayerTable[i].pool_after) {
      auto pooled = maxpool_forward(y);
      if (cache) {
        cache->pool_argmax[i] = std::move(pooled.argmax);
        cache->pool_input_shape[i] = y.shape;
      }
      x = std::move(pooled.output);
    } else {
      x = std::move(y);
    }
  }
  if (cache) cache->valid = true;
  return x;
}

template <typename T>
std::array<T, 2> Network<T>::forward_patch(std::span<const T> pixels,
                                           ForwardCache<T>* cache) const {
  if (pixels.size() != kPatchSize * kPatchSize) {
    throw ShapeError("patch must hold 32x32 values, got " +
                     std::to_string(pixels.size()));
  }
  Tensor<T> input({1, kPatchSize, kPatchSize});
  std::copy(pixels.begin(), pixels.end(), input.data.begin());
  const Tensor<T> out = forward(input, cache);
  return {out.data[0], out.data[1]};
}

template <typename T>
void Network<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& d_output,
                          ParamGrads<T>& grads) const {
  if (!cache.valid) {
    throw std::logic_error("network backward called without a cached forward pass");
  }
  if (d_output.shape != cache.outputs[kNumLayers - 1].shape) {
    throw ShapeError("network backward: gradient " + describe_shape(d_output.shape) +
                     " does not match output " +
                     describe_shape(cache.outputs[kNumLayers - 1].shape));
  }
  Tensor<T> d = d_output;
  for (std::size_t i = kNumLayers; i-- > 0;) {
    if (kLayerTable[i].pool_after) {
      d = maxpool_backward(d, cache.pool_argmax[i], cache.pool_input_shape[i]);
    }
    d = conv_backward_impl(cache.inputs[i], cache.outputs[i], d, layers_[i],
                           grads[i], i > 0, &cache.cols[i]);
  }
}

template <typename T>
void Network<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& d_output) {
  ParamGrads<T> grads = make_grads();
  backward(cache, d_output, grads);
  add_grads(grads);
}

template <typename T>
ParamGrads<T> Network<T>::make_grads() const {
  ParamGrads<T> grads;
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    grads[i].weights.assign(layers_[i].weights.size(), T(0));
    grads[i].bias.assign(layers_[i].bias.size(), T(0));
  }
  return grads;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto& layer : layers_) {
    layer.weights.zero_grad();
    layer.bias.zero_grad();
  }
}

template <typename T>
void Network<T>::add_grads(const ParamGrads<T>& grads) {
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    auto& layer = layers_[i];
    if (!layer.weights.has_grad()) layer.weights.zero_grad();
    if (!layer.bias.has_grad()) layer.bias.zero_grad();
    for (std::size_t j = 0; j < grads[i].weights.size(); ++j) {
      layer.weights.grad[j] += grads[i].weights[j];
    }
    for (std::size_t j = 0; j < grads[i].bias.size(); ++j) {
      layer.bias.grad[j] += grads[i].bias[j];
    }
  }
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, std::span<T> velocity,
              double learning_rate, double momentum) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw ShapeError("sgd_step: parameter, gradient and velocity lengths differ");
  }
  const T mu = static_cast<T>(momentum);
  const T lr = static_cast<T>(learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = mu * velocity[i] - lr * grads[i];
    params[i] += velocity[i];
  }
}

template <typename T>
void sgd_step(Network<T>& network, OptimizerState<T>& state) {
  auto& layers = network.layers();
  if (state.velocity.empty()) {
    for (const auto& layer : layers) {
      state.velocity.emplace_back(layer.weights.size(), T(0));
      state.velocity.emplace_back(layer.bias.size(), T(0));
    }
  }
  if (state.velocity.size() != 2 * kNumLayers) {
    throw ShapeError("optimizer state does not match the network layout");
  }
  for (std::size_t i = 0; i < kNumLayers; ++i) {
    auto& layer = layers[i];
    if (!layer.weights.has_grad() || !layer.bias.has_grad()) {
      throw std::logic_error("sgd_step: gradients of " + layer.name +
                             " are not populated");
    }
    sgd_step<T>(layer.weights.data, layer.weights.grad, state.velocity[2 * i],
                state.learning_rate, state.momentum);
    sgd_step<T>(layer.bias.data, layer.bias.grad, state.velocity[2 * i + 1],
                state.learning_rate, state.momentum);
  }
}

template <typename T>
void lr_decay(OptimizerState<T>& state) {
  ++state.epoch;
  state.learning_rate =
      state.base_learning_rate * std::pow(state.decay_rate, static_cast<double>(state.epoch));
}

#define TRICOV_INSTANTIATE_NN(T)                                                   \
  template struct ConvLayer<T>;                                                    \
  template class Network<T>;                                                       \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, const ConvLayer<T>&);       \
  template Tensor<T> conv_backward<T>(const Tensor<T>&, const Tensor<T>&,          \
                                      const Tensor<T>&, const ConvLayer<T>&,       \
                                      LayerGrads<T>&, bool);                       \
  template PoolResult<T> maxpool_forward<T>(const Tensor<T>&);                     \
  template Tensor<T> maxpool_backward<T>(const Tensor<T>&,                         \
                                         const std::vector<std::uint32_t>&,        \
                                         const std::vector<std::size_t>&);         \
  template void sgd_step<T>(std::span<T>, std::span<const T>, std::span<T>,        \
                            double, double);                                       \
  template void sgd_step<T>(Network<T>&, OptimizerState<T>&);                      \
  template void lr_decay<T>(OptimizerState<T>&);

TRICOV_INSTANTIATE_NN(float)
TRICOV_INSTANTIATE_NN(double)

}  // namespace tricov
