#include "musicnet/model.hpp"

#include <cmath>

namespace musicnet {

namespace {

const char* const kConvNames[] = {"conv1", "conv2", "conv3", "conv4"};
const char* const kPoolNames[] = {"pool1", "pool2", "pool3"};
const char* const kDenseNames[] = {"dense1", "dense2", "dense_out"};

void record(ShapeTrace* trace, const char* name, const Shape& shape) {
  if (trace) trace->entries.emplace_back(name, shape);
}

}  // namespace

std::string Topology::to_string() const {
  std::string s = "conv";
  for (std::size_t i = 0; i < kNumConv; ++i) s += (i ? "-" : " ") + std::to_string(conv_channels[i]);
  s += ", dense " + std::to_string(dense_units) + "-" + std::to_string(dense_units) + "-1";
  return s;
}

std::vector<std::string> parameter_names() {
  std::vector<std::string> names;
  for (const auto& [name, shape] : parameter_shapes(Topology::table1())) names.push_back(name);
  return names;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const Topology& topology) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < kNumConv; ++i) {
    const std::size_t cout = topology.conv_channels[i];
    out.emplace_back(std::string(kConvNames[i]) + ".weight", Shape{3, 3, cin, cout});
    out.emplace_back(std::string(kConvNames[i]) + ".bias", Shape{cout});
    cin = cout;
  }
  const std::size_t units = topology.dense_units;
  const std::size_t dense_in[] = {cin, units, units};
  const std::size_t dense_out[] = {units, units, 1};
  for (std::size_t i = 0; i < kNumDense; ++i) {
    out.emplace_back(std::string(kDenseNames[i]) + ".weight", Shape{dense_in[i], dense_out[i]});
    out.emplace_back(std::string(kDenseNames[i]) + ".bias", Shape{dense_out[i]});
  }
  return out;
}

template <typename T>
NetworkParams<T> NetworkParams<T>::zeros(const Topology& topology) {
  NetworkParams<T> p;
  const auto shapes = parameter_shapes(topology);
  std::size_t i = 0;
  p.for_each([&](const std::string&, BasicTensor<T>& t) { t = BasicTensor<T>(shapes[i++].second); });
  return p;
}

// Same values as the layer-by-layer pass with dropout off, without the
// full-resolution intermediate maps.
template <typename T>
T fused_inference(const NetworkParams<T>& params, const BasicTensor<T>& features, ShapeTrace* trace) {
  BasicTensor<T> x = features;
  for (std::size_t i = 0; i < kNumPooled; ++i) {
    record(trace, kConvNames[i], {x.dim(0), x.dim(1), params.conv_w[i].dim(3)});
    x = nn::conv2d_relu_maxpool(x, params.conv_w[i], params.conv_b[i]);
    record(trace, kPoolNames[i], x.shape());
  }
  record(trace, kConvNames[kNumPooled], {x.dim(0), x.dim(1), params.conv_w[kNumPooled].dim(3)});
  x = nn::conv2d_relu_global_max(x, params.conv_w[kNumPooled], params.conv_b[kNumPooled]);
  record(trace, "global_max_pool", x.shape());
  for (std::size_t i = 0; i < kNumDense; ++i) {
    x = nn::dense(x, params.dense_w[i], params.dense_b[i]);
    if (i + 1 < kNumDense) x = nn::relu(x);
    record(trace, kDenseNames[i], x.shape());
  }
  if (x.size() != 1) throw ContractViolation("output head must emit a single logit");
  return x[0];
}

template <typename T>
T network_forward(const NetworkParams<T>& params, const BasicTensor<T>& features,
                  const PassOptions& options, ForwardCache<T>* cache, ShapeTrace* trace) {
  if (features.rank() != 3 || features.dim(2) != 1) {
    throw ContractViolation("network input must be [H x W x 1], got " +
                            shape_string(features.shape()));
  }
  if (options.training && options.dropout_rate > 0.0 && options.rng == nullptr) {
    throw ContractViolation("training-mode forward requires an RNG");
  }

  if (!cache && !options.training) return fused_inference(params, features, trace);

  BasicTensor<T> x = features;
  for (std::size_t i = 0; i < kNumConv; ++i) {
    x = nn::conv2d(x, params.conv_w[i], params.conv_b[i], cache ? &cache->conv[i] : nullptr);
    x = nn::relu(x, cache ? &cache->conv_relu[i] : nullptr);
    record(trace, kConvNames[i], x.shape());
    if (i < kNumPooled) {
      x = nn::maxpool2x2(x, cache ? &cache->pool[i] : nullptr);
      x = nn::dropout(x, options.dropout_rate, options.training, options.rng,
                      cache ? &cache->drop[i] : nullptr);
      record(trace, kPoolNames[i], x.shape());
    }
  }
  x = nn::global_max_pool(x, cache ? &cache->global_pool : nullptr);
  record(trace, "global_max_pool", x.shape());
  for (std::size_t i = 0; i < kNumDense; ++i) {
    x = nn::dense(x, params.dense_w[i], params.dense_b[i], cache ? &cache->dense[i] : nullptr);
    if (i + 1 < kNumDense) x = nn::relu(x, cache ? &cache->dense_relu[i] : nullptr);
    record(trace, kDenseNames[i], x.shape());
  }
  if (x.size() != 1) throw ContractViolation("output head must emit a single logit");
  if (cache) cache->valid = true;
  return x[0];
}

template <typename T>
NetworkGrads<T> network_backward(const NetworkParams<T>& params, const ForwardCache<T>& cache,
                                 T d_logit, bool need_d_input) {
  if (!cache.valid) throw ContractViolation("network_backward: forward cache is empty");
  NetworkGrads<T> g;
  BasicTensor<T> d({1}, std::vector<T>{d_logit});

  for (std::size_t i = kNumDense; i-- > 0;) {
    if (i + 1 < kNumDense) d = nn::relu_backward(cache.dense_relu[i], d).d_input;
    auto lg = nn::dense_backward(cache.dense[i], params.dense_w[i], d);
    g.params.dense_w[i] = std::move(lg.d_weights);
    g.params.dense_b[i] = std::move(lg.d_bias);
    d = std::move(lg.d_input);
  }
  d = nn::global_max_pool_backward(cache.global_pool, d).d_input;
  for (std::size_t i = kNumConv; i-- > 0;) {
    d = nn::relu_backward(cache.conv_relu[i], d).d_input;
    auto lg = nn::conv2d_backward(cache.conv[i], params.conv_w[i], d, i > 0 || need_d_input);
    g.params.conv_w[i] = std::move(lg.d_weights);
    g.params.conv_b[i] = std::move(lg.d_bias);
    d = std::move(lg.d_input);
    if (i > 0) {
      d = nn::dropout_backward(cache.drop[i - 1], d).d_input;
      d = nn::maxpool2x2_backward(cache.pool[i - 1], d).d_input;
    }
  }
  if (need_d_input) g.d_input = std::move(d);
  return g;
}

template struct NetworkParams<float>;
template struct NetworkParams<double>;
template float network_forward(const NetworkParams<float>&, const BasicTensor<float>&,
                               const PassOptions&, ForwardCache<float>*, ShapeTrace*);
template double network_forward(const NetworkParams<double>&, const BasicTensor<double>&,
                                const PassOptions&, ForwardCache<double>*, ShapeTrace*);
template NetworkGrads<float> network_backward(const NetworkParams<float>&,
                                              const ForwardCache<float>&, float, bool);
template NetworkGrads<double> network_backward(const NetworkParams<double>&,
                                               const ForwardCache<double>&, double, bool);

MusicNetModel MusicNetModel::zeros(const Topology& topology) {
  MusicNetModel m;
  m.topology = topology;
  m.plan = FeaturePlan::make_default();
  m.params = NetworkParams<float>::zeros(topology);
  return m;
}

MusicNetModel MusicNetModel::glorot(std::uint64_t seed, const Topology& topology) {
  MusicNetModel m = zeros(topology);
  nn::Rng rng(seed);
  m.params.for_each([&](const std::string& name, Tensor& t) {
    if (t.rank() < 2) return;  // biases stay zero
    double fan_in, fan_out;
    if (t.rank() == 4) {
      fan_in = 9.0 * static_cast<double>(t.dim(2));
      fan_out = 9.0 * static_cast<double>(t.dim(3));
    } else {
      fan_in = static_cast<double>(t.dim(0));
      fan_out = static_cast<double>(t.dim(1));
    }
    (void)name;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (float& v : t.data()) v = static_cast<float>((2.0 * nn::uniform01(rng) - 1.0) * limit);
  });
  return m;
}

void MusicNetModel::validate() const {
  const auto shapes = parameter_shapes(topology);
  std::size_t i = 0;
  params.for_each([&](const std::string& name, const Tensor& t) {
    if (t.shape() != shapes[i].second) {
      throw TopologyError("tensor " + name + " has shape " + shape_string(t.shape()) +
                          ", expected " + shape_string(shapes[i].second));
    }
    ++i;
  });
  plan.validate();
}

ParameterCounts count_parameters(const MusicNetModel& model) {
  ParameterCounts c;
  c.trainable = model.params.count();
  const auto basis = static_cast<std::size_t>(model.plan.real_basis.size() +
                                              model.plan.imag_basis.size());
  const auto fixed = static_cast<std::size_t>(model.plan.mel_weights.size() +
                                              model.plan.window.size());
  if (model.featurizer_trainable) {
    c.trainable += basis;
    c.frozen = fixed;
  } else {
    c.frozen = basis + fixed;
  }
  return c;
}

template <typename T>
BasicTensor<T> features_to_tensor(const LogMelFeature& feature) {
  AlignedVector<T> data(feature.values.begin(), feature.values.end());
  return BasicTensor<T>({feature.n_frames, feature.n_mels, 1}, std::move(data));
}

template BasicTensor<float> features_to_tensor(const LogMelFeature&);
template BasicTensor<double> features_to_tensor(const LogMelFeature&);

double forward_features(const MusicNetModel& model, const LogMelFeature& feature, nn::Rng* rng,
                        ShapeTrace* trace) {
  PassOptions opts;
  opts.training = model.mode == Mode::train;
  opts.dropout_rate = model.dropout_rate;
  opts.rng = rng;
  if (opts.training && rng == nullptr) {
    throw ContractViolation("train-mode forward requires an RNG");
  }
  const float logit = network_forward<float>(model.params, features_to_tensor<float>(feature), opts, nullptr, trace);
  return nn::sigmoid(static_cast<double>(logit));
}

double forward(const MusicNetModel& model, const AudioClip& clip, nn::Rng* rng, ShapeTrace* trace) {
  if (!is_conditioned(clip)) {
    throw ContractViolation("forward expects a conditioned clip (144000 samples at 16 kHz), got " +
                            std::to_string(clip.samples.size()) + " samples at " +
                            std::to_string(clip.sample_rate_hz) + " Hz");
  }
  const LogMelFeature feature = featurize_clip(clip, model.plan);
  if (trace) trace->entries.emplace_back("featurize", Shape{feature.n_frames, feature.n_mels});
  return forward_features(model, feature, rng, trace);
}

}  // namespace musicnet
