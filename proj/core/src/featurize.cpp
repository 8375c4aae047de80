#include "musicnet/featurize.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "musicnet/errors.hpp"

namespace musicnet {

namespace {

constexpr double kMelFsp = 200.0 / 3.0;
constexpr double kMinLogHz = 1000.0;
constexpr double kMinLogMel = kMinLogHz / kMelFsp;  // 15

double log_step() { return std::log(6.4) / 27.0; }

}  // namespace

double hz_to_mel(double hz) {
  if (hz >= kMinLogHz) return kMinLogMel + std::log(hz / kMinLogHz) / log_step();
  return hz / kMelFsp;
}

double mel_to_hz(double mel) {
  if (mel >= kMinLogMel) return kMinLogHz * std::exp(log_step() * (mel - kMinLogMel));
  return kMelFsp * mel;
}

Eigen::VectorXd hann_window(int n) {
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

DftBasis build_dft_basis(int n_fft) {
  if (n_fft < 2 || n_fft % 2 != 0) {
    throw ContractViolation("n_fft must be even and >= 2, got " + std::to_string(n_fft));
  }
  const int n_bins = n_fft / 2 + 1;
  const Eigen::VectorXd window = hann_window(n_fft);
  DftBasis basis{MatrixRd(n_fft, n_bins), MatrixRd(n_fft, n_bins)};
  for (int n = 0; n < n_fft; ++n) {
    for (int k = 0; k < n_bins; ++k) {
      // Reduce k*n modulo n_fft so the angle stays in [0, 2 pi).
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((k * n) % n_fft) / n_fft;
      basis.real(n, k) = window[n] * std::cos(angle);
      basis.imag(n, k) = -window[n] * std::sin(angle);
    }
  }
  return basis;
}

MatrixRd build_mel_filterbank(int n_bins, int n_mels, double sample_rate_hz, double fmin,
                              double fmax) {
  if (n_mels < 1) throw ContractViolation("n_mels must be >= 1");
  if (n_bins < 2) throw ContractViolation("n_bins must be >= 2");
  if (fmax > sample_rate_hz / 2.0) {
    throw ContractViolation("fmax exceeds the Nyquist frequency");
  }
  if (fmin < 0.0 || fmin >= fmax) throw ContractViolation("need 0 <= fmin < fmax");

  const int n_fft = 2 * (n_bins - 1);
  std::vector<double> fft_freqs(n_bins);
  for (int k = 0; k < n_bins; ++k) fft_freqs[k] = k * sample_rate_hz / n_fft;

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }

  MatrixRd weights = MatrixRd::Zero(n_bins, n_mels);
  for (int m = 0; m < n_mels; ++m) {
    const double lower_width = edges[m + 1] - edges[m];
    const double upper_width = edges[m + 2] - edges[m + 1];
    const double enorm = 2.0 / (edges[m + 2] - edges[m]);
    for (int k = 0; k < n_bins; ++k) {
      const double rising = (fft_freqs[k] - edges[m]) / lower_width;
      const double falling = (edges[m + 2] - fft_freqs[k]) / upper_width;
      weights(k, m) = std::max(0.0, std::min(rising, falling)) * enorm;
    }
  }
  return weights;
}

FeaturePlan FeaturePlan::make(int n_fft, int n_mels, int sample_rate_hz, double fmin,
                              double fmax) {
  FeaturePlan plan;
  plan.n_fft = n_fft;
  plan.n_bins = n_fft / 2 + 1;
  plan.n_mels = n_mels;
  plan.sample_rate_hz = sample_rate_hz;
  auto basis = build_dft_basis(n_fft);
  plan.window = hann_window(n_fft);
  plan.real_basis = std::move(basis.real);
  plan.imag_basis = std::move(basis.imag);
  plan.mel_weights = build_mel_filterbank(plan.n_bins, n_mels, sample_rate_hz, fmin, fmax);
  return plan;
}

FeaturePlan FeaturePlan::make_default() {
  return make(kFftSize, kNumMels, kSampleRate, 0.0, kSampleRate / 2.0);
}

void FeaturePlan::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ContractViolation(std::string("feature plan: ") + what);
  };
  check(n_fft >= 2 && n_fft % 2 == 0, "n_fft must be even");
  check(n_bins == n_fft / 2 + 1, "n_bins != n_fft/2 + 1");
  check(window.size() == n_fft, "window length");
  check(real_basis.rows() == n_fft && real_basis.cols() == n_bins, "real_basis shape");
  check(imag_basis.rows() == n_fft && imag_basis.cols() == n_bins, "imag_basis shape");
  check(mel_weights.rows() == n_bins && mel_weights.cols() == n_mels, "mel_weights shape");
  check(log_floor > 0.0, "log_floor must be positive");
}

MatrixRd logmel_forward(const FrameMatrix& frames, const FeaturePlan& plan, LogMelCache* cache) {
  if (frames.frame_len != static_cast<std::size_t>(plan.n_fft)) {
    throw ContractViolation("frame length " + std::to_string(frames.frame_len) +
                            " does not match n_fft " + std::to_string(plan.n_fft));
  }
  if (frames.n_frames == 0 || frames.frames.size() != frames.n_frames * frames.frame_len) {
    throw ContractViolation("malformed frame matrix");
  }
  const auto n_frames = static_cast<Eigen::Index>(frames.n_frames);
  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      raw(frames.frames.data(), n_frames, plan.n_fft);

  MatrixRd x = raw.cast<double>();
  MatrixRd re = x * plan.real_basis;
  MatrixRd im = x * plan.imag_basis;
  const MatrixRd power = re.cwiseAbs2() + im.cwiseAbs2();
  MatrixRd mel = power * plan.mel_weights;
  MatrixRd out = mel.cwiseMax(plan.log_floor).array().log().matrix();

  if (cache) {
    cache->frames = std::move(x);
    cache->re = std::move(re);
    cache->im = std::move(im);
    cache->mel = std::move(mel);
    cache->valid = true;
  }
  return out;
}

FeaturizerGrad logmel_backward(const LogMelCache& cache, const FeaturePlan& plan,
                               const MatrixRd& d_logmel) {
  if (!cache.valid) throw ContractViolation("logmel_backward: forward cache is empty");
  if (d_logmel.rows() != cache.mel.rows() || d_logmel.cols() != cache.mel.cols()) {
    throw ContractViolation("logmel_backward: gradient shape mismatch");
  }
  // Floored entries are constant in the parameters.
  const MatrixRd d_mel =
      (cache.mel.array() > plan.log_floor).select(d_logmel.array() / cache.mel.array(), 0.0);
  const MatrixRd d_power = d_mel * plan.mel_weights.transpose();
  const MatrixRd d_re = 2.0 * cache.re.cwiseProduct(d_power);
  const MatrixRd d_im = 2.0 * cache.im.cwiseProduct(d_power);
  return {cache.frames.transpose() * d_re, cache.frames.transpose() * d_im};
}

LogMelFeature logmel(const FrameMatrix& frames, const FeaturePlan& plan) {
  const MatrixRd out = logmel_forward(frames, plan);
  LogMelFeature f;
  f.n_frames = static_cast<std::size_t>(out.rows());
  f.n_mels = static_cast<std::size_t>(out.cols());
  f.values.resize(f.n_frames * f.n_mels);
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      f.values.data(), out.rows(), out.cols()) = out.cast<float>();
  return f;
}

LogMelFeature featurize_clip(const AudioClip& clip, const FeaturePlan& plan) {
  if (!is_conditioned(clip)) {
    throw ContractViolation("featurize_clip expects a conditioned 144000-sample 16 kHz clip");
  }
  LogMelFeature f = logmel(
      frame_signal(std::span<const float>(clip.samples), static_cast<std::size_t>(plan.n_fft),
                   static_cast<std::size_t>(plan.n_fft / 2)),
      plan);
  f.clip_ref = clip.source_id;
  return f;
}

void write_feature_bin(const std::filesystem::path& path, const LogMelFeature& feature) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto put_u32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_u32(static_cast<std::uint32_t>(feature.n_frames));
  put_u32(static_cast<std::uint32_t>(feature.n_mels));
  for (float v : feature.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u32(bits);
  }
}

LogMelFeature read_feature_bin(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  auto get_u32 = [&]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated feature file");
    return static_cast<std::uint32_t>(b[0] | (b[1] << 8) | (b[2] << 16) |
                                      (static_cast<std::uint32_t>(b[3]) << 24));
  };
  LogMelFeature f;
  f.n_frames = get_u32();
  f.n_mels = get_u32();
  f.values.resize(f.n_frames * f.n_mels);
  for (float& v : f.values) {
    const std::uint32_t bits = get_u32();
    std::memcpy(&v, &bits, sizeof v);
  }
  return f;
}

}  // namespace musicnet
