#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tricov/tensor.hpp"

namespace tricov {

inline constexpr std::size_t kPatchSize = 32;
inline constexpr std::size_t kOutputStride = 4;
inline constexpr std::size_t kNumLayers = 5;

struct LayerSpec {
  std::size_t kernel_size;
  std::size_t features;
  bool pool_after;
};

// Kernel sizes and feature counts of the regressor, input is one channel.
inline constexpr std::array<LayerSpec, kNumLayers> kLayerTable{{
    {5, 32, true},
    {5, 128, true},
    {3, 128, false},
    {3, 256, false},
    {1, 2, false},
}};

template <typename T>
struct ConvLayer {
  std::string name;
  std::size_t kernel_size = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Tensor<T> weights;  // (out, in, k, k)
  Tensor<T> bias;     // (out)
  bool has_relu = false;

  static ConvLayer make(std::string name, std::size_t in, std::size_t out,
                        std::size_t k, bool relu);
};

template <typename T>
struct LayerGrads {
  std::vector<T> weights;
  std::vector<T> bias;
};

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

// Valid cross-correlation of a (C, H, W) input plus bias, then ReLU when the
// layer has one.
template <typename T>
Tensor<T> conv_forward(const Tensor<T>& input, const ConvLayer<T>& layer);

// Accumulates weight/bias gradients into `grads`. `output` is the
// post-activation forward result and masks `d_output` through the ReLU.
// Returns the input gradient, or an empty tensor when not requested.
template <typename T>
Tensor<T> conv_backward(const Tensor<T>& input, const Tensor<T>& output,
                        const Tensor<T>& d_output, const ConvLayer<T>& layer,
                        LayerGrads<T>& grads, bool need_input_grad);

// 2x2 non-overlapping max pool, floor on odd extents. Ties keep the first
// element in row-major window order.
template <typename T>
PoolResult<T> maxpool_forward(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool_backward(const Tensor<T>& d_output,
                           const std::vector<std::uint32_t>& argmax,
                           const std::vector<std::size_t>& input_shape);

template <typename T>
struct ForwardCache {
  std::array<Tensor<T>, kNumLayers> inputs;   // input of each convolution
  std::array<Tensor<T>, kNumLayers> outputs;  // post-activation outputs
  std::array<std::vector<T>, kNumLayers> cols;  // im2col buffers
  std::array<std::vector<std::uint32_t>, kNumLayers> pool_argmax;
  std::array<std::vector<std::size_t>, kNumLayers> pool_input_shape;
  bool valid = false;
};

template <typename T>
using ParamGrads = std::array<LayerGrads<T>, kNumLayers>;

// Fully convolutional translation regressor. A 32x32 patch maps to a single
// (dx, dy) cell; larger inputs give a stride-4 grid of predictions.
template <typename T>
class Network {
 public:
  Network();

  // He-style uniform fan-in initialization, zero biases.
  static Network initialized(std::uint64_t seed);

  // Input (H, W), (1, H, W) or a batch (1, N, H, W); output (2, rows, cols)
  // or (2, N, rows, cols).
  Tensor<T> forward(const Tensor<T>& input,
                    ForwardCache<T>* cache = nullptr) const;

  // Convenience for a single 32x32 patch given as 1024 row-major values.
  std::array<T, 2> forward_patch(std::span<const T> pixels,
                                 ForwardCache<T>* cache = nullptr) const;

  // Accumulates parameter gradients for the cached forward pass.
  void backward(const ForwardCache<T>& cache, const Tensor<T>& d_output,
                ParamGrads<T>& grads) const;

  // Same, accumulating into the grad buffers of the layers themselves.
  void backward(const ForwardCache<T>& cache, const Tensor<T>& d_output);

  ParamGrads<T> make_grads() const;
  void zero_grad();
  void add_grads(const ParamGrads<T>& grads);

  std::array<ConvLayer<T>, kNumLayers>& layers() { return layers_; }
  const std::array<ConvLayer<T>, kNumLayers>& layers() const {
    return layers_;
  }

  std::size_t parameter_count() const;

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    for (std::size_t i = 0; i < kNumLayers; ++i) {
      auto& dst = out.layers()[i];
      const auto& src = layers_[i];
      dst.weights.data.assign(src.weights.data.begin(), src.weights.data.end());
      dst.bias.data.assign(src.bias.data.begin(), src.bias.data.end());
    }
    return out;
  }

  // Output grid extent along one axis for a given input extent, 0 when the
  // input is smaller than one patch.
  static std::size_t output_extent(std::size_t input_extent);

 private:
  std::array<ConvLayer<T>, kNumLayers> layers_;
};

template <typename T>
struct OptimizerState {
  double momentum = 0.9;
  double base_learning_rate = 0.1;
  double learning_rate = 0.1;
  double decay_rate = 0.96;
  std::uint32_t epoch = 0;
  // Per layer: weight velocity then bias velocity.
  std::vector<std::vector<T>> velocity;
};

// v <- mu * v - lr * g; p <- p + v
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads,
              std::span<T> velocity, double learning_rate, double momentum);

template <typename T>
void sgd_step(Network<T>& network, OptimizerState<T>& state);

// Advances the epoch counter and sets lr = base * decay^epoch.
template <typename T>
void lr_decay(OptimizerState<T>& state);

}  // namespace tricov
