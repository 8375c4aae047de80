#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "musicnet/tensor.hpp"

// Forward and backward kernels for every layer type of the network.
// Activations are [H x W x C] row-major. Each forward optionally fills a
// cache; the matching backward throws ContractViolation if it is empty.
namespace musicnet::nn {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits; same stream on every platform.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
struct LayerGrad {
  BasicTensor<T> d_weights;
  BasicTensor<T> d_bias;
  BasicTensor<T> d_input;
};

// --- conv2d: 3x3, stride 1, zero "same" padding --------------------------------

template <typename T>
struct Conv2dCache {
  BasicTensor<T> input;
  bool valid = false;
};

/// input [H x W x Cin], kernels [3 x 3 x Cin x Cout], bias [Cout] -> [H x W x Cout].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias, Conv2dCache<T>* cache = nullptr);

/// d_input is skipped (left empty) when need_d_input is false.
template <typename T>
LayerGrad<T> conv2d_backward(const Conv2dCache<T>& cache, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& d_out, bool need_d_input = true);

/// Inference-only fusion of conv2d -> relu -> maxpool2x2. Values equal the
/// unfused chain; no intermediate full-resolution map is materialized.
template <typename T>
BasicTensor<T> conv2d_relu_maxpool(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                   const BasicTensor<T>& bias);

/// Inference-only fusion of conv2d -> relu -> global_max_pool.
template <typename T>
BasicTensor<T> conv2d_relu_global_max(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                      const BasicTensor<T>& bias);

// --- pooling -------------------------------------------------------------------

struct PoolCache {
  Shape input_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
  bool valid = false;
};

/// Disjoint 2x2 windows; a trailing odd row/column is dropped.
template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& input, PoolCache* cache = nullptr);

template <typename T>
LayerGrad<T> maxpool2x2_backward(const PoolCache& cache, const BasicTensor<T>& d_out);

/// [H x W x C] -> [C]
template <typename T>
BasicTensor<T> global_max_pool(const BasicTensor<T>& input, PoolCache* cache = nullptr);

template <typename T>
LayerGrad<T> global_max_pool_backward(const PoolCache& cache, const BasicTensor<T>& d_out);

// --- dense -----------------------------------------------------------------------

template <typename T>
struct DenseCache {
  BasicTensor<T> input;
  bool valid = false;
};

/// input [N], weights [N x M], bias [M] -> [M]
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias, DenseCache<T>* cache = nullptr);

template <typename T>
LayerGrad<T> dense_backward(const DenseCache<T>& cache, const BasicTensor<T>& weights,
                            const BasicTensor<T>& d_out);

// --- activations -----------------------------------------------------------------

struct MaskCache {
  std::vector<std::uint8_t> mask;
  Shape shape;
  double scale = 1.0;  // survivor scale for dropout
  bool valid = false;
};

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input, MaskCache* cache = nullptr);

template <typename T>
LayerGrad<T> relu_backward(const MaskCache& cache, const BasicTensor<T>& d_out);

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// d sigmoid / dx expressed through the output p.
template <typename T>
T sigmoid_backward(T p, T d_out) {
  return d_out * p * (T(1) - p);
}

/// Inverted dropout. Identity (and no RNG use) when training is false.
/// `rng` must be non-null in training mode.
template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, bool training, Rng* rng,
                       MaskCache* cache = nullptr);

template <typename T>
LayerGrad<T> dropout_backward(const MaskCache& cache, const BasicTensor<T>& d_out);

}  // namespace musicnet::nn
