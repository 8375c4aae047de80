#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "musicnet/errors.hpp"
#include "musicnet/featurize.hpp"
#include "oracles.hpp"

using namespace musicnet;

namespace {

AudioClip noise_clip(std::uint64_t seed, double amp) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  AudioClip c;
  c.samples.resize(kClipSamples);
  for (auto& v : c.samples) v = static_cast<float>(u(rng));
  return c;
}

}  // namespace

TEST(MelScale, SlaneyBreakpoints) {
  EXPECT_DOUBLE_EQ(hz_to_mel(0.0), 0.0);
  EXPECT_NEAR(hz_to_mel(1000.0), 15.0, 1e-12);
  EXPECT_NEAR(hz_to_mel(500.0), 7.5, 1e-12);  // linear region: 200/3 Hz per mel
  EXPECT_NEAR(hz_to_mel(6400.0), 42.0, 1e-9);  // 27 mels per factor 6.4
  for (double hz : {10.0, 440.0, 999.0, 1001.0, 4000.0, 8000.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(hz)), hz, 1e-9);
}

TEST(Window, PeriodicHann) {
  const auto w = hann_window(320);
  ASSERT_EQ(w.size(), 320);
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_NEAR(w[160], 1.0, 1e-15);
  for (int i = 1; i < 320; ++i) EXPECT_NEAR(w[i], w[320 - i], 1e-15);
}

TEST(DftBasis, MatchesFftOfWindowedFrame) {
  const DftBasis b = build_dft_basis(320);
  ASSERT_EQ(b.real.rows(), 320);
  ASSERT_EQ(b.real.cols(), 161);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Eigen::RowVectorXd frame(320);
  for (auto& v : frame) v = g(rng);

  const Eigen::RowVectorXd re = frame * b.real;
  const Eigen::RowVectorXd im = frame * b.imag;
  const auto w = hann_window(320);
  std::vector<double> windowed(320);
  for (int i = 0; i < 320; ++i) windowed[static_cast<std::size_t>(i)] = frame[i] * w[i];
  oracle::PowerSpectrum fft(320);
  const auto power = fft(windowed);
  for (int k = 0; k < 161; ++k) {
    EXPECT_NEAR(re[k] * re[k] + im[k] * im[k], power[static_cast<std::size_t>(k)], 1e-9 * (1.0 + power[static_cast<std::size_t>(k)]));
  }
  EXPECT_THROW(build_dft_basis(321), ContractViolation);
}

TEST(MelFilterbank, MatchesLibrosaDump) {
  const auto ref = oracle::load_mel_fixture();
  const MatrixRd mel = build_mel_filterbank(161, 120, 16000.0, 0.0, 8000.0);
  ASSERT_EQ(mel.rows(), 161);
  ASSERT_EQ(mel.cols(), 120);
  double worst = 0.0;
  for (int m = 0; m < 120; ++m) {
    for (int k = 0; k < 161; ++k) worst = std::max(worst, std::abs(mel(k, m) - ref[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)]));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(MelFilterbank, StructureAtThisResolution) {
  const MatrixRd mel = build_mel_filterbank(161, 120, 16000.0, 0.0, 8000.0);
  EXPECT_GE(mel.minCoeff(), 0.0);
  // At 50 Hz bin spacing the lowest triangle falls between bins 0 and 1.
  EXPECT_EQ(mel.col(0).sum(), 0.0);
  for (int m = 1; m < 120; ++m) EXPECT_GT(mel.col(m).sum(), 0.0) << "filter " << m;
  EXPECT_THROW(build_mel_filterbank(161, 120, 16000.0, 0.0, 9000.0), ContractViolation);
}

TEST(FeaturePlan, DefaultIsConsistent) {
  const FeaturePlan p = FeaturePlan::make_default();
  EXPECT_NO_THROW(p.validate());
  EXPECT_EQ(p.n_fft, 320);
  EXPECT_EQ(p.n_mels, 120);
  FeaturePlan broken = p;
  broken.mel_weights = MatrixRd::Zero(160, 120);
  EXPECT_THROW(broken.validate(), ContractViolation);
}

TEST(LogMel, MatchesFftReference) {
  const FeaturePlan plan = FeaturePlan::make_default();
  const auto mel = oracle::load_mel_fixture();
  for (std::uint64_t seed : {1u, 2u}) {
    const AudioClip c = noise_clip(seed, seed == 1 ? 1.0 : 1e-3);
    const LogMelFeature f = featurize_clip(c, plan);
    ASSERT_EQ(f.n_frames, 900u);
    ASSERT_EQ(f.n_mels, 120u);
    const auto ref = oracle::reference_logmel(c.samples, mel);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(f.values[i] - ref[i]));
    EXPECT_LE(worst, 1e-4);
  }
}

TEST(LogMel, SilenceHitsTheFloor) {
  AudioClip c;
  c.samples.assign(kClipSamples, 0.0f);
  const LogMelFeature f = featurize_clip(c, FeaturePlan::make_default());
  for (float v : f.values) ASSERT_FLOAT_EQ(v, static_cast<float>(std::log(1e-10)));
}

TEST(LogMel, FeatureFileRoundTrip) {
  oracle::TempDir dir("feat");
  const LogMelFeature f = featurize_clip(noise_clip(9, 0.5), FeaturePlan::make_default());
  write_feature_bin(dir / "f.bin", f);
  EXPECT_EQ(std::filesystem::file_size(dir / "f.bin"), 8u + 900u * 120u * 4u);
  const LogMelFeature back = read_feature_bin(dir / "f.bin");
  EXPECT_EQ(back.n_frames, 900u);
  EXPECT_EQ(back.n_mels, 120u);
  EXPECT_EQ(back.values, f.values);
}

TEST(LogMel, BackwardMatchesFiniteDifferences) {
  FeaturePlan plan = FeaturePlan::make_default();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<float> signal(3200);
  for (auto& v : signal) v = static_cast<float>(u(rng));
  const FrameMatrix frames = frame_signal(signal, 320, 160);

  MatrixRd r(static_cast<Eigen::Index>(frames.n_frames), 120);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = u(rng);
  auto loss = [&] { return (logmel_forward(frames, plan).array() * r.array()).sum(); };

  LogMelCache cache;
  logmel_forward(frames, plan, &cache);
  const FeaturizerGrad g = logmel_backward(cache, plan, r);
  ASSERT_EQ(g.d_real_basis.rows(), 320);
  ASSERT_EQ(g.d_imag_basis.cols(), 161);

  std::uniform_int_distribution<int> row(0, 319), col(1, 160);
  double worst = 0.0;
  for (int s = 0; s < 60; ++s) {
    const int n = row(rng), k = col(rng);
    const double num_re = oracle::central_difference(loss, plan.real_basis(n, k), 1e-6);
    const double num_im = oracle::central_difference(loss, plan.imag_basis(n, k), 1e-6);
    worst = std::max(worst, oracle::relative_error(g.d_real_basis(n, k), num_re, 1e-4));
    worst = std::max(worst, oracle::relative_error(g.d_imag_basis(n, k), num_im, 1e-4));
  }
  EXPECT_LT(worst, 1e-4);
}
