#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace musicnet {

inline constexpr int kSampleRate = 16000;
inline constexpr std::size_t kClipSamples = 144000;  // 9 s at 16 kHz
inline constexpr std::size_t kFrameLen = 320;        // 20 ms
inline constexpr std::size_t kHop = 160;             // 10 ms
inline constexpr std::size_t kNumFrames = kClipSamples / kHop;

enum class Label : std::uint8_t { no_music = 0, music = 1 };

std::string_view to_string(Label label);
/// Accepts "music" / "no_music"; throws ContractViolation otherwise.
Label parse_label(std::string_view text);

/// Mono waveform. Amplitudes are nominally in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRate;
  std::optional<Label> label;
  std::string source_id;

  std::size_t size() const { return samples.size(); }
  bool operator==(const AudioClip&) const = default;
};

/// Row-major [n_frames x frame_len] view of a signal after padding.
struct FrameMatrix {
  std::vector<float> frames;
  std::size_t n_frames = 0;
  std::size_t frame_len = 0;
  std::size_t hop = 0;

  float at(std::size_t frame, std::size_t pos) const {
    return frames[frame * frame_len + pos];
  }
  std::span<const float> row(std::size_t frame) const {
    return {frames.data() + frame * frame_len, frame_len};
  }
};

// --- WAV ---------------------------------------------------------------------

/// Decodes RIFF/WAVE (PCM16 or IEEE float32, 1-2 channels, any rate).
/// Stereo is averaged to mono; PCM16 is scaled by 1/32768.
AudioClip decode_wav(std::span<const std::uint8_t> bytes);
AudioClip read_wav(const std::filesystem::path& path);

/// PCM16 little-endian mono at the clip's sample rate.
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

// --- conditioning ------------------------------------------------------------

/// Kaiser-windowed sinc resampler to 16 kHz. Identity when already at 16 kHz.
/// Output length is round(n * 16000 / rate). Rates below 8 kHz are rejected.
AudioClip resample_to_16k(const AudioClip& clip);

/// Front-aligned truncation / zero-padding to exactly 144000 samples.
AudioClip fit_to_9s(const AudioClip& clip);

/// resample_to_16k -> fit_to_9s -> clamp to [-1, 1] (non-finite -> DecodeError).
AudioClip condition(const AudioClip& clip);

/// True when the clip satisfies the model input contract.
bool is_conditioned(const AudioClip& clip);

// --- framing -----------------------------------------------------------------

/// Index into a signal of length n reflect-padded by `pad` on both sides
/// (edge sample not repeated).
std::size_t reflect_index(std::ptrdiff_t padded_pos, std::size_t pad, std::size_t n);

/// Frames `signal` with center reflect padding of frame_len/2, producing
/// len/hop frames. Requires frame_len == 2*hop and len % hop == 0.
FrameMatrix frame_signal(std::span<const float> signal, std::size_t frame_len = kFrameLen,
                         std::size_t hop = kHop);

/// Model-contract framing: the clip must hold exactly 144000 samples.
FrameMatrix frame_signal(const AudioClip& clip, std::size_t frame_len = kFrameLen,
                         std::size_t hop = kHop);

}  // namespace musicnet
