#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "musicnet/audio_io.hpp"

namespace musicnet {

using MatrixRd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kFftSize = 320;
inline constexpr int kNumBins = kFftSize / 2 + 1;
inline constexpr int kNumMels = 120;
inline constexpr double kLogFloor = 1e-10;

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Periodic Hann window of length n (the STFT convention).
Eigen::VectorXd hann_window(int n);

struct DftBasis {
  MatrixRd real;  // [n_fft x n_bins], window[n] * cos(2 pi k n / n_fft)
  MatrixRd imag;  // [n_fft x n_bins], -window[n] * sin(2 pi k n / n_fft)
};

/// One-sided DFT as two real matrices with a Hann window folded in.
/// n_fft must be even and >= 2.
DftBasis build_dft_basis(int n_fft);

/// Slaney-normalised triangular filterbank, [n_bins x n_mels]. Matches the
/// librosa `filters.mel` defaults (htk=False, norm='slaney').
MatrixRd build_mel_filterbank(int n_bins, int n_mels, double sample_rate_hz, double fmin,
                              double fmax);

/// Everything the featurization layer needs. Immutable once built unless the
/// featurizer is being trained.
struct FeaturePlan {
  int n_fft = kFftSize;
  int n_bins = kNumBins;
  int n_mels = kNumMels;
  int sample_rate_hz = kSampleRate;
  double log_floor = kLogFloor;
  Eigen::VectorXd window;
  MatrixRd real_basis;
  MatrixRd imag_basis;
  MatrixRd mel_weights;

  static FeaturePlan make_default();
  static FeaturePlan make(int n_fft, int n_mels, int sample_rate_hz, double fmin, double fmax);

  /// Throws ContractViolation if the matrices disagree with the scalar fields.
  void validate() const;
};

/// Row-major [n_frames x n_mels] natural-log mel power.
struct LogMelFeature {
  std::vector<float> values;
  std::size_t n_frames = 0;
  std::size_t n_mels = 0;
  std::string clip_ref;

  float at(std::size_t frame, std::size_t mel) const { return values[frame * n_mels + mel]; }
};

/// Intermediates kept by the featurization layer for its backward pass.
struct LogMelCache {
  MatrixRd frames;  // [n_frames x n_fft]
  MatrixRd re;      // [n_frames x n_bins]
  MatrixRd im;
  MatrixRd mel;     // pre-log mel power
  bool valid = false;
};

struct FeaturizerGrad {
  MatrixRd d_real_basis;
  MatrixRd d_imag_basis;
};

/// Full-precision featurization: returns [n_frames x n_mels] log-mel.
MatrixRd logmel_forward(const FrameMatrix& frames, const FeaturePlan& plan,
                        LogMelCache* cache = nullptr);

/// Gradient of the loss w.r.t. the two spectrum matrices, given the gradient
/// w.r.t. the log-mel output. Mel weights stay fixed.
FeaturizerGrad logmel_backward(const LogMelCache& cache, const FeaturePlan& plan,
                               const MatrixRd& d_logmel);

LogMelFeature logmel(const FrameMatrix& frames, const FeaturePlan& plan);

/// frame_signal -> logmel on a conditioned clip.
LogMelFeature featurize_clip(const AudioClip& clip, const FeaturePlan& plan);

/// Debug dump: uint32 rows, uint32 cols, then float32 LE row-major.
void write_feature_bin(const std::filesystem::path& path, const LogMelFeature& feature);
LogMelFeature read_feature_bin(const std::filesystem::path& path);

}  // namespace musicnet
