#include "musicnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "musicnet/weights_io.hpp"
#include "parallel.hpp"

namespace musicnet {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractViolation("batch_size must be >= 1");
  if (!(lr >= 0.0)) throw ContractViolation("lr must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ContractViolation("Adam betas must lie in (0, 1)");
  }
  if (!(eps_adam > 0.0)) throw ContractViolation("eps_adam must be positive");
  if (max_epochs < 0) throw ContractViolation("max_epochs must be >= 0");
  if (early_stop_patience < 1) throw ContractViolation("early_stop_patience must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ContractViolation("dropout rate must be in [0, 1)");
}

double bce_loss(double p, int y) {
  if (y != 0 && y != 1) throw ContractViolation("bce_loss: label must be 0 or 1");
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

double bce_mean(std::span<const double> probs, std::span<const int> labels) {
  if (probs.size() != labels.size()) throw ContractViolation("bce_mean: size mismatch");
  if (probs.empty()) throw EmptyDataset("bce_mean: empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) sum += bce_loss(probs[i], labels[i]);
  return sum / static_cast<double>(probs.size());
}

void adam_step(std::span<const ParamSlot> slots, AdamState& state, const TrainConfig& cfg) {
  auto size_of = [](const ParamSlot& s) {
    return std::visit([](auto span) { return span.size(); }, s.value);
  };
  for (const auto& s : slots) {
    if (s.grad.size() != size_of(s)) {
      throw ContractViolation("adam_step: gradient for " + s.name + " has the wrong size");
    }
    for (double g : s.grad) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in " + s.name);
    }
  }
  if (state.m.empty()) {
    for (const auto& s : slots) {
      state.m.emplace_back(size_of(s), 0.0);
      state.v.emplace_back(size_of(s), 0.0);
    }
  }
  if (state.m.size() != slots.size()) throw ContractViolation("adam_step: state/slot count mismatch");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = slots[k].grad;
    std::visit(
        [&](auto value) {
          for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            const double step = cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
            using V = typename decltype(value)::value_type;
            value[i] = static_cast<V>(static_cast<double>(value[i]) - step);
          }
        },
        slots[k].value);
  }
}

Dataset make_dataset(std::vector<AudioClip> clips, const FeaturePlan& plan) {
  Dataset data;
  data.reserve(clips.size());
  for (auto& clip : clips) {
    if (!clip.label) throw ContractViolation("training clip " + clip.source_id + " has no label");
    TrainExample ex;
    ex.label = *clip.label;
    ex.clip = condition(clip);
    ex.features = featurize_clip(ex.clip, plan);
    data.push_back(std::move(ex));
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, const FeaturePlan& plan) {
  const TestManifest manifest = read_manifest(manifest_path);
  std::vector<AudioClip> clips;
  clips.reserve(manifest.size());
  for (const auto& e : manifest.entries) {
    AudioClip clip = read_wav(resolve_entry_path(manifest_path, e));
    clip.label = e.label;
    clip.source_id = e.source_id;
    clips.push_back(std::move(clip));
  }
  return make_dataset(std::move(clips), plan);
}

namespace {

struct SampleGrad {
  std::vector<std::vector<double>> grads;  // one per slot
  double loss = 0.0;
  double prob = 0.0;
};

BasicTensor<float> matrix_to_input(const MatrixRd& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return BasicTensor<float>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), 1},
                            std::move(data));
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }
std::vector<double> to_double(const MatrixRd& m) { return {m.data(), m.data() + m.size()}; }

SampleGrad sample_gradient(const MusicNetModel& model, const TrainExample& ex, std::uint64_t seed,
                           double dropout_rate, bool train_featurizer) {
  LogMelCache lc;
  BasicTensor<float> input;
  if (train_featurizer) {
    input = matrix_to_input(logmel_forward(
        frame_signal(std::span<const float>(ex.clip.samples), static_cast<std::size_t>(model.plan.n_fft),
                     static_cast<std::size_t>(model.plan.n_fft / 2)),
        model.plan, &lc));
  } else {
    input = features_to_tensor<float>(ex.features);
  }
  nn::Rng rng(seed);
  PassOptions opts{true, dropout_rate, &rng};
  ForwardCache<float> cache;
  const float logit = network_forward(model.params, input, opts, &cache);
  const int y = ex.label == Label::music ? 1 : 0;

  SampleGrad out;
  out.prob = nn::sigmoid(static_cast<double>(logit));
  out.loss = bce_loss(out.prob, y);
  // d(BCE)/d(logit) = p - y; the clamp only guards the reported loss value.
  const auto d_logit = static_cast<float>(out.prob - y);
  auto g = network_backward(model.params, cache, d_logit, train_featurizer);
  g.params.for_each([&](const std::string&, const Tensor& t) { out.grads.push_back(to_double(t.data())); });
  if (train_featurizer) {
    MatrixRd d_logmel(lc.mel.rows(), lc.mel.cols());
    for (Eigen::Index i = 0; i < d_logmel.size(); ++i) d_logmel.data()[i] = g.d_input[static_cast<std::size_t>(i)];
    const auto fg = logmel_backward(lc, model.plan, d_logmel);
    out.grads.push_back(to_double(fg.d_real_basis));
    out.grads.push_back(to_double(fg.d_imag_basis));
  }
  return out;
}

std::size_t rand_below(nn::Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(nn::uniform01(rng) * static_cast<double>(n)));
}

}  // namespace

EvalMetrics evaluate_dataset(const MusicNetModel& model, const Dataset& data, unsigned jobs) {
  if (data.empty()) throw EmptyDataset("cannot evaluate an empty dataset");
  MusicNetModel infer = model;
  infer.mode = Mode::infer;
  EvalMetrics m;
  m.probabilities.resize(data.size());
  detail::parallel_for(data.size(), jobs, [&](std::size_t i) {
    m.probabilities[i] = infer.featurizer_trainable ? forward(infer, data[i].clip)
                                                    : forward_features(infer, data[i].features);
  });
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int y = data[i].label == Label::music ? 1 : 0;
    loss += bce_loss(m.probabilities[i], y);
    correct += (m.probabilities[i] >= 0.5) == (y == 1);
  }
  m.mean_loss = loss / static_cast<double>(data.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return m;
}

std::vector<double> dataset_logits(const MusicNetModel& model, const Dataset& data, unsigned jobs) {
  std::vector<double> z(data.size());
  PassOptions opts;
  detail::parallel_for(data.size(), jobs, [&](std::size_t i) {
    const LogMelFeature feature =
        model.featurizer_trainable ? featurize_clip(data[i].clip, model.plan) : data[i].features;
    z[i] = network_forward<float>(model.params, features_to_tensor<float>(feature), opts);
  });
  return z;
}

double calibrate_output_bias(MusicNetModel& model, const Dataset& data, unsigned jobs) {
  if (data.empty()) throw EmptyDataset("cannot calibrate on an empty dataset");
  const std::vector<double> z = dataset_logits(model, data, jobs);
  std::size_t pos = 0;
  for (const auto& e : data) pos += e.label == Label::music;
  const std::size_t neg = data.size() - pos;
  if (pos == 0 || neg == 0) throw ContractViolation("calibration needs both classes");

  // The weighted loss gradient in the shift is monotone, so bisect its root.
  auto gradient = [&](double d) {
    double g_pos = 0.0, g_neg = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = nn::sigmoid(z[i] + d);
      if (data[i].label == Label::music) g_pos += p - 1.0;
      else g_neg += p;
    }
    return g_pos / static_cast<double>(pos) + g_neg / static_cast<double>(neg);
  };
  double span = 40.0;
  for (double v : z) span = std::max(span, std::abs(v) + 40.0);
  double lo = -span, hi = span;
  for (int it = 0; it < 200 && hi - lo > 1e-9; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gradient(mid) > 0.0 ? hi : lo) = mid;
  }
  const double shift = 0.5 * (lo + hi);
  float& bias = model.params.dense_b[kNumDense - 1].data()[0];
  bias = static_cast<float>(bias + shift);
  return shift;
}

Trainer::Trainer(MusicNetModel& model, TrainConfig cfg)
    : model_(model), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
}

std::vector<std::size_t> Trainer::epoch_order(const Dataset& data) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < data.size(); ++i) (data[i].label == Label::music ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) {
    throw ContractViolation("training data must contain both music and no_music examples");
  }
  if (cfg_.balance_classes && pos.size() != neg.size()) {
    auto& minority = pos.size() < neg.size() ? pos : neg;
    const std::size_t target = std::max(pos.size(), neg.size());
    const std::size_t base = minority.size();
    while (minority.size() < target) minority.push_back(minority[rand_below(rng_, base)]);
  }
  std::vector<std::size_t> order;
  order.reserve(pos.size() + neg.size());
  order.insert(order.end(), pos.begin(), pos.end());
  order.insert(order.end(), neg.begin(), neg.end());
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rand_below(rng_, i)]);
  return order;
}

std::vector<ParamSlot> Trainer::slots(std::span<const std::vector<double>> grads) {
  std::vector<ParamSlot> out;
  std::size_t k = 0;
  model_.params.for_each([&](const std::string& name, Tensor& t) {
    out.push_back({name, t.data(), grads[k++]});
  });
  if (cfg_.train_featurizer) {
    auto& plan = model_.plan;
    out.push_back({"feat.real_basis", std::span<double>(plan.real_basis.data(), static_cast<std::size_t>(plan.real_basis.size())), grads[k++]});
    out.push_back({"feat.imag_basis", std::span<double>(plan.imag_basis.data(), static_cast<std::size_t>(plan.imag_basis.size())), grads[k++]});
  }
  return out;
}

EpochMetrics Trainer::train_epoch(const Dataset& data) {
  if (data.empty()) throw EmptyDataset("training dataset is empty");
  model_.validate();
  model_.featurizer_trainable = cfg_.train_featurizer;
  model_.dropout_rate = cfg_.dropout_rate;
  model_.mode = Mode::train;

  const auto order = epoch_order(data);
  double loss_sum = 0.0;
  std::size_t correct = 0;

  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t n = std::min(cfg_.batch_size, order.size() - start);
    std::vector<std::uint64_t> seeds(n);
    for (auto& s : seeds) s = rng_();
    std::vector<SampleGrad> results(n);
    detail::parallel_for(n, cfg_.jobs, [&](std::size_t i) {
      results[i] = sample_gradient(model_, data[order[start + i]], seeds[i], cfg_.dropout_rate,
                                   cfg_.train_featurizer);
    });

    // Fixed reduction order regardless of worker count.
    std::vector<std::vector<double>> grads = std::move(results[0].grads);
    for (std::size_t i = 1; i < n; ++i) {
      for (std::size_t k = 0; k < grads.size(); ++k) {
        auto& dst = grads[k];
        const auto& src = results[i].grads[k];
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& g : grads) {
      for (double& v : g) v *= inv;
    }
    adam_step(slots(grads), adam_, cfg_);

    for (std::size_t i = 0; i < n; ++i) {
      loss_sum += results[i].loss;
      const bool music = data[order[start + i]].label == Label::music;
      correct += (results[i].prob >= 0.5) == music;
    }
  }

  model_.mode = Mode::infer;
  ++epoch_;
  EpochMetrics m;
  m.epoch = epoch_;
  m.samples = order.size();
  m.mean_loss = loss_sum / static_cast<double>(order.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
  return m;
}

FitResult fit(MusicNetModel& model, const Dataset& data, const TrainConfig& cfg,
              const std::optional<std::filesystem::path>& checkpoint_dir,
              const std::function<bool(const EpochMetrics&)>& on_epoch) {
  Trainer trainer(model, cfg);
  FitResult result;
  std::ofstream csv;
  if (checkpoint_dir) {
    std::filesystem::create_directories(*checkpoint_dir);
    csv.open(*checkpoint_dir / "metrics.csv");
    if (!csv) throw Error("cannot write metrics.csv in " + checkpoint_dir->string());
    csv << "epoch,mean_loss,accuracy\n";
  }

  double best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int e = 0; e < cfg.max_epochs; ++e) {
    const EpochMetrics m = trainer.train_epoch(data);
    result.history.push_back(m);
    if (checkpoint_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.mnw", m.epoch);
      save_weights(model, *checkpoint_dir / name);
      char line[96];
      std::snprintf(line, sizeof line, "%d,%.17g,%.17g\n", m.epoch, m.mean_loss, m.accuracy);
      csv << line << std::flush;
    }
    if (on_epoch && !on_epoch(m)) {
      result.stopped_by_callback = true;
      break;
    }
    if (best - m.mean_loss < cfg.min_improvement) {
      if (++stalled >= cfg.early_stop_patience) {
        result.early_stopped = true;
        break;
      }
    } else {
      stalled = 0;
    }
    best = std::min(best, m.mean_loss);
  }
  if (cfg.calibrate_bias && !result.history.empty()) {
    result.bias_shift = calibrate_output_bias(model, data, cfg.jobs);
  }
  return result;
}

// --- gradient check ------------------------------------------------------------

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  void add(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  }
  template <typename V>
  void add_vec(const V& v) {
    add(v.data(), v.size() * sizeof(typename V::value_type));
  }
};

// Which side of every non-smooth point the forward pass landed on, restricted
// to the cone of activations the loss actually depends on: the global-max
// winners, the pool windows feeding them through each 3x3 conv, and so on
// back to the input. Kinks outside the cone cannot move the loss.
std::uint64_t branch_signature(const ForwardCache<double>& fc, const LogMelCache* lc, double floor) {
  Fnv f;
  for (const auto& m : fc.dense_relu) f.add_vec(m.mask);
  f.add_vec(fc.global_pool.argmax);

  std::set<std::uint32_t> active(fc.global_pool.argmax.begin(), fc.global_pool.argmax.end());
  for (std::size_t layer = kNumConv; layer-- > 0;) {
    const auto& relu = fc.conv_relu[layer];
    for (std::uint32_t i : active) {
      f.add(&i, sizeof i);
      f.add(&relu.mask[i], 1);
    }
    // Positions of this conv's input that its active outputs read.
    const Shape& out = relu.shape;
    const std::size_t H = out[0], W = out[1], C = out[2];
    const std::size_t cin = layer == 0 ? 1 : fc.pool[layer - 1].input_shape[2];
    std::set<std::uint32_t> inputs;
    for (std::uint32_t i : active) {
      const std::size_t y = i / (W * C), x = (i / C) % W;
      for (std::size_t yy = y == 0 ? 0 : y - 1; yy <= std::min(H - 1, y + 1); ++yy) {
        for (std::size_t xx = x == 0 ? 0 : x - 1; xx <= std::min(W - 1, x + 1); ++xx) {
          for (std::size_t c = 0; c < cin; ++c) inputs.insert(static_cast<std::uint32_t>((yy * W + xx) * cin + c));
        }
      }
    }
    if (layer == 0) {
      if (lc) {
        for (std::uint32_t i : inputs) {
          const unsigned char above = lc->mel.data()[i] > floor;
          f.add(&above, 1);
        }
      }
      break;
    }
    const auto& pool = fc.pool[layer - 1];
    active.clear();
    for (std::uint32_t q : inputs) {
      f.add(&pool.argmax[q], sizeof pool.argmax[q]);
      active.insert(pool.argmax[q]);
    }
  }
  return f.h;
}

double bce_from_logit(double z, int y) {
  // -log(sigmoid(z)) for y = 1, -log(1 - sigmoid(z)) for y = 0, computed stably.
  const double a = y == 1 ? -z : z;
  return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a));
}

}  // namespace

GradCheckReport grad_check(const MusicNetModel& model, const AudioClip& clip, Label label,
                           const GradCheckOptions& options) {
  if (!is_conditioned(clip)) throw ContractViolation("grad_check expects a conditioned clip");
  const int y = label == Label::music ? 1 : 0;
  NetworkParams<double> net = model.params.cast<double>();
  FeaturePlan plan = model.plan;
  const FrameMatrix frames =
      frame_signal(std::span<const float>(clip.samples), static_cast<std::size_t>(plan.n_fft),
                   static_cast<std::size_t>(plan.n_fft / 2));

  auto to_input = [](const MatrixRd& m) {
    return BasicTensor<double>({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), 1},
                               std::vector<double>(m.data(), m.data() + m.size()));
  };
  const BasicTensor<double> fixed_input = to_input(logmel_forward(frames, plan));

  struct Eval {
    double loss;
    double logit;
    std::uint64_t signature;
  };
  auto evaluate = [&](ForwardCache<double>* fc_out, LogMelCache* lc_out) -> Eval {
    LogMelCache lc;
    ForwardCache<double> fc;
    BasicTensor<double> input =
        options.include_featurizer ? to_input(logmel_forward(frames, plan, &lc)) : fixed_input;
    nn::Rng rng(options.seed);
    PassOptions opts{options.training_mode, model.dropout_rate, &rng};
    const double z = network_forward(net, input, opts, &fc);
    Eval e{bce_from_logit(z, y), z,
           branch_signature(fc, options.include_featurizer ? &lc : nullptr, plan.log_floor)};
    if (fc_out) *fc_out = std::move(fc);
    if (lc_out) *lc_out = std::move(lc);
    return e;
  };

  ForwardCache<double> fc;
  LogMelCache lc;
  const Eval base = evaluate(&fc, &lc);
  const double d_logit = nn::sigmoid(base.logit) - y;
  NetworkGrads<double> grads = network_backward(net, fc, d_logit, options.include_featurizer);
  if (options.tamper) options.tamper(grads.params);

  struct Target {
    std::string name;
    std::span<double> value;
    std::vector<double> analytic;
  };
  std::vector<Target> targets;
  {
    std::vector<std::pair<std::string, std::span<double>>> values;
    net.for_each([&](const std::string& name, BasicTensor<double>& t) { values.emplace_back(name, t.data()); });
    std::size_t k = 0;
    grads.params.for_each([&](const std::string&, const BasicTensor<double>& t) {
      targets.push_back({values[k].first, values[k].second, {t.data().begin(), t.data().end()}});
      ++k;
    });
  }
  if (options.include_featurizer) {
    MatrixRd d_logmel(lc.mel.rows(), lc.mel.cols());
    for (Eigen::Index i = 0; i < d_logmel.size(); ++i) d_logmel.data()[i] = grads.d_input[static_cast<std::size_t>(i)];
    const FeaturizerGrad fg = logmel_backward(lc, plan, d_logmel);
    targets.push_back({"feat.real_basis",
                       std::span<double>(plan.real_basis.data(), static_cast<std::size_t>(plan.real_basis.size())),
                       to_double(fg.d_real_basis)});
    targets.push_back({"feat.imag_basis",
                       std::span<double>(plan.imag_basis.data(), static_cast<std::size_t>(plan.imag_basis.size())),
                       to_double(fg.d_imag_basis)});
  }

  GradCheckReport report;
  nn::Rng pick(options.seed ^ 0x9E3779B97F4A7C15ull);
  for (auto& target : targets) {
    TensorCheck tc;
    tc.name = target.name;
    const std::size_t n = target.value.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > options.samples_per_tensor) {
      // Partial Fisher-Yates: first samples_per_tensor entries are a uniform sample.
      for (std::size_t i = 0; i < options.samples_per_tensor; ++i) {
        std::swap(idx[i], idx[i + rand_below(pick, n - i)]);
      }
      idx.resize(options.samples_per_tensor);
    }
    for (std::size_t i : idx) {
      const double orig = target.value[i];
      target.value[i] = orig + options.epsilon;
      const Eval plus = evaluate(nullptr, nullptr);
      target.value[i] = orig - options.epsilon;
      const Eval minus = evaluate(nullptr, nullptr);
      target.value[i] = orig;
      if (plus.signature != base.signature || minus.signature != base.signature) {
        ++tc.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.epsilon);
      const double analytic = target.analytic[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
      tc.max_rel_error = std::max(tc.max_rel_error, std::abs(analytic - numeric) / denom);
      ++tc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, tc.max_rel_error);
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

}  // namespace musicnet
