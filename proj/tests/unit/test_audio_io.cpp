#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "musicnet/audio_io.hpp"
#include "musicnet/errors.hpp"
#include "oracles.hpp"

using namespace musicnet;

namespace {

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_tag(std::vector<std::uint8_t>& b, const char* tag) { b.insert(b.end(), tag, tag + 4); }

// Hand-assembled RIFF/WAVE container.
std::vector<std::uint8_t> make_wav(std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                                   std::uint16_t bits, const std::vector<std::uint8_t>& payload,
                                   bool extra_chunk = false) {
  std::vector<std::uint8_t> b;
  put_tag(b, "RIFF");
  put_u32(b, 0);  // patched below
  put_tag(b, "WAVE");
  if (extra_chunk) {
    put_tag(b, "LIST");
    put_u32(b, 3);
    b.insert(b.end(), {'a', 'b', 'c', 0});  // odd size plus pad byte
  }
  put_tag(b, "fmt ");
  put_u32(b, 16);
  put_u16(b, format);
  put_u16(b, channels);
  put_u32(b, rate);
  put_u32(b, rate * channels * bits / 8);
  put_u16(b, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(b, bits);
  put_tag(b, "data");
  put_u32(b, static_cast<std::uint32_t>(payload.size()));
  b.insert(b.end(), payload.begin(), payload.end());
  const auto riff = static_cast<std::uint32_t>(b.size() - 8);
  std::memcpy(b.data() + 4, &riff, 4);
  return b;
}

std::vector<std::uint8_t> pcm16(const std::vector<std::int16_t>& v) {
  std::vector<std::uint8_t> b;
  for (auto s : v) put_u16(b, static_cast<std::uint16_t>(s));
  return b;
}

std::vector<std::uint8_t> f32(const std::vector<float>& v) {
  std::vector<std::uint8_t> b;
  for (float s : v) {
    std::uint32_t u;
    std::memcpy(&u, &s, 4);
    put_u32(b, u);
  }
  return b;
}

AudioClip sine(double hz, int rate, std::size_t n, double amp = 0.5) {
  AudioClip c;
  c.sample_rate_hz = rate;
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  }
  return c;
}

}  // namespace

TEST(Label, RoundTripsThroughText) {
  EXPECT_EQ(parse_label("music"), Label::music);
  EXPECT_EQ(parse_label("no_music"), Label::no_music);
  EXPECT_EQ(to_string(Label::music), "music");
  EXPECT_THROW(parse_label("speech"), ContractViolation);
}

TEST(Wav, DecodesPcm16WithScale) {
  const auto clip = decode_wav(make_wav(1, 1, 16000, 16, pcm16({0, 16384, -32768, 32767})));
  EXPECT_EQ(clip.sample_rate_hz, 16000);
  ASSERT_EQ(clip.samples.size(), 4u);
  EXPECT_EQ(clip.samples[0], 0.0f);
  EXPECT_EQ(clip.samples[1], 0.5f);
  EXPECT_EQ(clip.samples[2], -1.0f);
  EXPECT_EQ(clip.samples[3], 32767.0f / 32768.0f);
}

TEST(Wav, AveragesStereoToMono) {
  const auto clip = decode_wav(make_wav(1, 2, 22050, 16, pcm16({16384, 0, -8192, -8192})));
  ASSERT_EQ(clip.samples.size(), 2u);
  EXPECT_EQ(clip.samples[0], 0.25f);
  EXPECT_EQ(clip.samples[1], -0.25f);
  EXPECT_EQ(clip.sample_rate_hz, 22050);
}

TEST(Wav, DecodesFloat32AndSkipsUnknownChunks) {
  const auto clip = decode_wav(make_wav(3, 1, 48000, 32, f32({0.25f, -0.75f, 1.5f}), true));
  ASSERT_EQ(clip.samples.size(), 3u);
  EXPECT_EQ(clip.samples[0], 0.25f);
  EXPECT_EQ(clip.samples[1], -0.75f);
  EXPECT_EQ(clip.samples[2], 1.0f);  // clamped
}

TEST(Wav, RejectsMalformedAndUnsupportedInput) {
  const auto good = make_wav(1, 1, 16000, 16, pcm16({1, 2, 3}));
  EXPECT_THROW(decode_wav(std::span(good).first(10)), DecodeError);
  auto bad_tag = good;
  bad_tag[0] = 'X';
  EXPECT_THROW(decode_wav(bad_tag), DecodeError);
  EXPECT_THROW(decode_wav(make_wav(6, 1, 16000, 8, {1, 2})), UnsupportedFormat);  // A-law
  EXPECT_THROW(decode_wav(make_wav(1, 1, 16000, 24, {1, 2, 3})), UnsupportedFormat);
  EXPECT_THROW(decode_wav(make_wav(1, 3, 16000, 16, pcm16({1, 2, 3}))), UnsupportedFormat);
  EXPECT_THROW(decode_wav(make_wav(3, 1, 16000, 32, f32({NAN}))), DecodeError);
}

TEST(Wav, EncodeDecodeRoundTripIsQuantizationExact) {
  AudioClip c;
  for (int i = -50; i < 50; ++i) c.samples.push_back(static_cast<float>(i * 301) / 32768.0f);
  c.samples.push_back(1.0f);  // clamps to the largest code
  const auto back = decode_wav(encode_wav(c));
  ASSERT_EQ(back.samples.size(), c.samples.size());
  for (std::size_t i = 0; i + 1 < c.samples.size(); ++i) EXPECT_EQ(back.samples[i], c.samples[i]);
  EXPECT_EQ(back.samples.back(), 32767.0f / 32768.0f);
}

TEST(Wav, FileRoundTrip) {
  oracle::TempDir dir("wav");
  const AudioClip c = sine(440.0, 16000, 1600);
  write_wav(dir / "a.wav", c);
  const auto back = read_wav(dir / "a.wav");
  ASSERT_EQ(back.samples.size(), c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) EXPECT_NEAR(back.samples[i], c.samples[i], 1.0 / 32768.0);
  EXPECT_THROW(read_wav(dir / "missing.wav"), DecodeError);
}

TEST(Resample, IdentityAtSixteenKilohertz) {
  const AudioClip c = sine(1000.0, 16000, 3200);
  EXPECT_EQ(resample_to_16k(c).samples, c.samples);
}

TEST(Resample, RejectsLowRates) {
  EXPECT_THROW(resample_to_16k(sine(100.0, 4000, 400)), UnsupportedRate);
}

class ResampleRates : public ::testing::TestWithParam<int> {};

TEST_P(ResampleRates, PreservesToneFrequencyAndLevel) {
  const int rate = GetParam();
  const std::size_t n = static_cast<std::size_t>(rate) * 2;
  const AudioClip out = resample_to_16k(sine(1000.0, rate, n));
  EXPECT_EQ(out.sample_rate_hz, 16000);
  EXPECT_EQ(out.samples.size(), static_cast<std::size_t>(std::llround(n * 16000.0 / rate)));
  // 32000 output samples over 2 s: bin k is k / 2 Hz.
  EXPECT_EQ(oracle::peak_bin(out.samples), 2000u);
  // Passband gain is ~1 away from the edges.
  const auto mid = std::span(out.samples).subspan(4000, 24000);
  EXPECT_NEAR(oracle::rms(mid), 0.5 / std::sqrt(2.0), 0.005);
}

INSTANTIATE_TEST_SUITE_P(CommonRates, ResampleRates, ::testing::Values(8000, 11025, 22050, 44100, 48000));

TEST(Resample, AttenuatesContentAboveNewNyquist) {
  // 12 kHz at 48 kHz cannot be represented at 16 kHz and must be suppressed.
  const AudioClip out = resample_to_16k(sine(12000.0, 48000, 96000));
  const auto mid = std::span(out.samples).subspan(4000, 24000);
  EXPECT_LT(oracle::rms(mid), 0.01);
}

TEST(Fit, PadsAndTruncatesFrontAligned) {
  AudioClip short_clip = sine(300.0, 16000, 1000);
  const auto padded = fit_to_9s(short_clip);
  ASSERT_EQ(padded.samples.size(), kClipSamples);
  EXPECT_EQ(padded.samples[999], short_clip.samples[999]);
  EXPECT_EQ(padded.samples[1000], 0.0f);
  EXPECT_EQ(padded.samples.back(), 0.0f);

  AudioClip long_clip = sine(300.0, 16000, kClipSamples + 500);
  const auto cut = fit_to_9s(long_clip);
  ASSERT_EQ(cut.samples.size(), kClipSamples);
  EXPECT_EQ(cut.samples[kClipSamples - 1], long_clip.samples[kClipSamples - 1]);

  EXPECT_THROW(fit_to_9s(AudioClip{}), EmptyInput);
  EXPECT_THROW(fit_to_9s(sine(300.0, 8000, 100)), ContractViolation);
}

TEST(Condition, ProducesModelContractClips) {
  AudioClip loud = sine(300.0, 44100, 44100, 2.0);
  loud.label = Label::music;
  loud.source_id = "loud";
  const auto c = condition(loud);
  EXPECT_TRUE(is_conditioned(c));
  EXPECT_EQ(c.label, Label::music);
  EXPECT_EQ(c.source_id, "loud");
  for (float v : c.samples) {
    ASSERT_LE(v, 1.0f);
    ASSERT_GE(v, -1.0f);
  }
  EXPECT_FALSE(is_conditioned(loud));
}

TEST(Framing, ReflectIndexMirrorsWithoutRepeatingEdges) {
  // n = 5, pad = 2: padded signal is x2 x1 | x0 x1 x2 x3 x4 | x3 x2
  const std::size_t expected[] = {2, 1, 0, 1, 2, 3, 4, 3, 2};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(reflect_index(static_cast<std::ptrdiff_t>(i), 2, 5), expected[i]);
}

TEST(Framing, ProducesNineHundredCenteredFrames) {
  AudioClip c;
  c.samples.resize(kClipSamples);
  for (std::size_t i = 0; i < kClipSamples; ++i) c.samples[i] = static_cast<float>(i % 1000) / 1000.0f;
  const FrameMatrix f = frame_signal(c);
  ASSERT_EQ(f.n_frames, 900u);
  ASSERT_EQ(f.frame_len, 320u);
  // Frame 0 covers padded positions [0, 320): reflection of x[160..1], then x[0..159].
  EXPECT_EQ(f.at(0, 0), c.samples[160]);
  EXPECT_EQ(f.at(0, 159), c.samples[1]);
  EXPECT_EQ(f.at(0, 160), c.samples[0]);
  // Frame t starts at sample 160 t - 160.
  for (std::size_t t : {1u, 17u, 899u}) {
    for (std::size_t j : {0u, 100u, 319u}) {
      const std::size_t src = t * 160 + j - 160;
      if (src < kClipSamples) EXPECT_EQ(f.at(t, j), c.samples[src]);
    }
  }
  EXPECT_EQ(f.at(899, 319), c.samples[kClipSamples - 1]);  // last frame ends on the last sample
  EXPECT_THROW(frame_signal(sine(1.0, 16000, 1000)), ContractViolation);
}
