#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "musicnet/audio_io.hpp"
#include "musicnet/featurize.hpp"
#include "musicnet/nn.hpp"
#include "musicnet/tensor.hpp"

namespace musicnet {

inline constexpr std::size_t kNumConv = 4;
inline constexpr std::size_t kNumDense = 3;
inline constexpr std::size_t kNumPooled = 3;  // conv1..conv3 are followed by pool + dropout
inline constexpr double kDefaultDropout = 0.3;

/// Layer widths. The default reproduces the published architecture:
/// conv 32-32-32-64, dense 64-64, single-logit head.
struct Topology {
  std::array<std::size_t, kNumConv> conv_channels{32, 32, 32, 64};
  std::size_t dense_units = 64;

  static Topology table1() { return {}; }
  std::string to_string() const;
  bool operator==(const Topology&) const = default;
};

/// Parameter names in serialisation order.
std::vector<std::string> parameter_names();

/// Expected shape of each trainable tensor, keyed like parameter_names().
std::vector<std::pair<std::string, Shape>> parameter_shapes(const Topology& topology);

template <typename T>
struct NetworkParams {
  std::array<BasicTensor<T>, kNumConv> conv_w;  // [3 x 3 x Cin x Cout]
  std::array<BasicTensor<T>, kNumConv> conv_b;  // [Cout]
  std::array<BasicTensor<T>, kNumDense> dense_w;  // [N x M]
  std::array<BasicTensor<T>, kNumDense> dense_b;  // [M]

  static NetworkParams zeros(const Topology& topology);

  /// Visits (name, tensor) in serialisation order.
  template <typename F>
  void for_each(F&& f) {
    static const char* conv_names[] = {"conv1", "conv2", "conv3", "conv4"};
    static const char* dense_names[] = {"dense1", "dense2", "dense_out"};
    for (std::size_t i = 0; i < kNumConv; ++i) {
      f(std::string(conv_names[i]) + ".weight", conv_w[i]);
      f(std::string(conv_names[i]) + ".bias", conv_b[i]);
    }
    for (std::size_t i = 0; i < kNumDense; ++i) {
      f(std::string(dense_names[i]) + ".weight", dense_w[i]);
      f(std::string(dense_names[i]) + ".bias", dense_b[i]);
    }
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<NetworkParams*>(this)->for_each(
        [&](const std::string& name, BasicTensor<T>& t) { f(name, std::as_const(t)); });
  }

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    for (std::size_t i = 0; i < kNumConv; ++i) {
      out.conv_w[i] = conv_w[i].template cast<U>();
      out.conv_b[i] = conv_b[i].template cast<U>();
    }
    for (std::size_t i = 0; i < kNumDense; ++i) {
      out.dense_w[i] = dense_w[i].template cast<U>();
      out.dense_b[i] = dense_b[i].template cast<U>();
    }
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const BasicTensor<T>& t) { n += t.size(); });
    return n;
  }

  bool operator==(const NetworkParams&) const = default;
};

/// Output shape after each layer, in forward order.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> entries;
};

template <typename T>
struct ForwardCache {
  std::array<nn::Conv2dCache<T>, kNumConv> conv;
  std::array<nn::MaskCache, kNumConv> conv_relu;
  std::array<nn::PoolCache, kNumPooled> pool;
  std::array<nn::MaskCache, kNumPooled> drop;
  nn::PoolCache global_pool;
  std::array<nn::DenseCache<T>, kNumDense> dense;
  std::array<nn::MaskCache, kNumDense - 1> dense_relu;
  bool valid = false;
};

template <typename T>
struct NetworkGrads {
  NetworkParams<T> params;
  BasicTensor<T> d_input;  // empty unless requested
};

/// Options for a single network pass.
struct PassOptions {
  bool training = false;
  double dropout_rate = kDefaultDropout;
  nn::Rng* rng = nullptr;
};

/// features [H x W x 1] -> logit. Throws ContractViolation on shape errors or
/// when training without an RNG.
template <typename T>
T network_forward(const NetworkParams<T>& params, const BasicTensor<T>& features,
                  const PassOptions& options, ForwardCache<T>* cache = nullptr,
                  ShapeTrace* trace = nullptr);

template <typename T>
NetworkGrads<T> network_backward(const NetworkParams<T>& params, const ForwardCache<T>& cache,
                                 T d_logit, bool need_d_input = false);

enum class Mode { infer, train };

struct ParameterCounts {
  std::size_t trainable = 0;
  std::size_t frozen = 0;
};

/// Featurization plan plus the CNN classifier; one object fully determines
/// inference.
struct MusicNetModel {
  Topology topology;
  FeaturePlan plan;
  NetworkParams<float> params;
  Mode mode = Mode::infer;
  double dropout_rate = kDefaultDropout;
  bool featurizer_trainable = false;

  /// All-zero weights; output is 0.5 for every clip.
  static MusicNetModel zeros(const Topology& topology = Topology::table1());
  /// Glorot-uniform weights, zero biases.
  static MusicNetModel glorot(std::uint64_t seed, const Topology& topology = Topology::table1());

  /// Throws TopologyError if any tensor deviates from the declared topology.
  void validate() const;
};

ParameterCounts count_parameters(const MusicNetModel& model);

/// Log-mel features as the network input tensor [n_frames x n_mels x 1].
template <typename T>
BasicTensor<T> features_to_tensor(const LogMelFeature& feature);

/// Probability of music for a conditioned clip. In train mode `rng` drives
/// dropout and must be non-null.
double forward(const MusicNetModel& model, const AudioClip& clip, nn::Rng* rng = nullptr,
               ShapeTrace* trace = nullptr);

/// Same as forward() starting from precomputed features.
double forward_features(const MusicNetModel& model, const LogMelFeature& feature,
                        nn::Rng* rng = nullptr, ShapeTrace* trace = nullptr);

}  // namespace musicnet
