#include "musicnet/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include "musicnet/errors.hpp"

namespace musicnet {

std::string_view to_string(Label label) {
  return label == Label::music ? "music" : "no_music";
}

Label parse_label(std::string_view text) {
  if (text == "music") return Label::music;
  if (text == "no_music") return Label::no_music;
  throw ContractViolation("unknown label '" + std::string(text) + "'");
}

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t pos() const { return pos_; }
  void seek(std::size_t pos) { pos_ = std::min(pos, bytes_.size()); }

  bool fourcc(const char* tag) {
    need(4);
    const bool ok = std::memcmp(bytes_.data() + pos_, tag, 4) == 0;
    pos_ += 4;
    return ok;
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = bytes_[pos_] | (bytes_[pos_ + 1] << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw DecodeError("truncated WAV header");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

float read_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

struct WavFormat {
  std::uint16_t tag = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (!in.fourcc("RIFF")) throw DecodeError("missing RIFF tag");
  in.u32();  // riff size, often wrong in the wild
  if (!in.fourcc("WAVE")) throw DecodeError("missing WAVE tag");

  std::optional<WavFormat> fmt;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  while (in.remaining() >= 8 && !have_data) {
    const std::size_t id_pos = in.pos();
    const bool is_fmt = in.fourcc("fmt ");
    in.seek(id_pos);
    const bool is_data = in.fourcc("data");
    const std::uint32_t size = in.u32();
    const std::size_t body = in.pos();

    if (is_fmt) {
      if (size < 16) throw DecodeError("fmt chunk too short");
      WavFormat f;
      f.tag = in.u16();
      f.channels = in.u16();
      f.rate = in.u32();
      in.u32();  // byte rate
      f.block_align = in.u16();
      f.bits = in.u16();
      if (f.tag == kFormatExtensible) {
        if (size < 40) throw DecodeError("extensible fmt chunk too short");
        in.u16();  // cbSize
        in.u16();  // valid bits
        in.u32();  // channel mask
        f.tag = in.u16();  // first two bytes of the subformat GUID carry the codec
      }
      fmt = f;
      in.seek(body + size + (size & 1));
    } else if (is_data) {
      if (!fmt) throw DecodeError("data chunk before fmt chunk");
      // Streaming writers leave the size unset; take what is actually present.
      const std::size_t avail = std::min<std::size_t>(size, in.remaining());
      data = in.take(avail);
      have_data = true;
    } else {
      in.seek(body + size + (size & 1));
    }
  }

  if (!fmt) throw DecodeError("no fmt chunk");
  if (!have_data) throw DecodeError("no data chunk");

  const bool pcm16 = fmt->tag == kFormatPcm && fmt->bits == 16;
  const bool float32 = fmt->tag == kFormatFloat && fmt->bits == 32;
  if (!pcm16 && !float32) {
    throw UnsupportedFormat("unsupported WAV codec (format " + std::to_string(fmt->tag) +
                            ", " + std::to_string(fmt->bits) + " bits)");
  }
  if (fmt->channels < 1 || fmt->channels > 2) {
    throw UnsupportedFormat("unsupported channel count " + std::to_string(fmt->channels));
  }
  if (fmt->rate == 0) throw DecodeError("zero sample rate");
  const std::size_t bytes_per_sample = fmt->bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * fmt->channels;
  if (fmt->block_align != frame_bytes) throw DecodeError("inconsistent block alignment");

  const std::size_t n = data.size() / frame_bytes;
  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(fmt->rate);
  clip.samples.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = data.data() + i * frame_bytes;
    float acc = 0.0f;
    for (std::size_t c = 0; c < fmt->channels; ++c) {
      const std::uint8_t* s = p + c * bytes_per_sample;
      float v;
      if (pcm16) {
        const auto raw = static_cast<std::int16_t>(s[0] | (s[1] << 8));
        v = static_cast<float>(raw) / 32768.0f;
      } else {
        v = read_f32_le(s);
        if (!std::isfinite(v)) throw DecodeError("non-finite float sample");
        v = std::clamp(v, -1.0f, 1.0f);
      }
      acc += v;
    }
    clip.samples[i] = fmt->channels == 2 ? acc * 0.5f : acc;
  }
  return clip;
}

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DecodeError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  AudioClip clip = decode_wav(bytes);
  clip.source_id = path.stem().string();
  return clip;
}

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  const std::uint32_t data_bytes = n * 2;
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float x : clip.samples) {
    const float scaled = std::nearbyint(std::clamp(x, -1.0f, 1.0f) * 32768.0f);
    const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0f, 32767.0f));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = encode_wav(clip);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// --- resampling --------------------------------------------------------------

namespace {

constexpr int kTapsPerPhase = 64;
constexpr double kKaiserBeta = 8.6;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Polyphase table for rational conversion up/down. Phase p holds the taps for
// an output sample sitting p/up input samples after an integer input index.
std::vector<double> build_phase_table(int up, int down) {
  const double cutoff = std::min(1.0, static_cast<double>(up) / down);
  const double half = kTapsPerPhase / 2.0;
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);
  std::vector<double> table(static_cast<std::size_t>(up) * kTapsPerPhase);
  for (int p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / up;
    double sum = 0.0;
    for (int k = 0; k < kTapsPerPhase; ++k) {
      const double x = (k - (kTapsPerPhase / 2 - 1)) - frac;
      const double r = x / half;
      const double w = std::abs(r) >= 1.0
                           ? 0.0
                           : std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
      const double h = cutoff * sinc(cutoff * x) * w;
      table[static_cast<std::size_t>(p) * kTapsPerPhase + k] = h;
      sum += h;
    }
    // Unity DC gain per phase.
    for (int k = 0; k < kTapsPerPhase; ++k) table[static_cast<std::size_t>(p) * kTapsPerPhase + k] /= sum;
  }
  return table;
}

}  // namespace

AudioClip resample_to_16k(const AudioClip& clip) {
  if (clip.sample_rate_hz < 8000) {
    throw UnsupportedRate("sample rate " + std::to_string(clip.sample_rate_hz) +
                          " Hz is below the 8 kHz minimum");
  }
  if (clip.sample_rate_hz == kSampleRate) return clip;

  const int g = std::gcd(clip.sample_rate_hz, kSampleRate);
  const int up = kSampleRate / g;
  const int down = clip.sample_rate_hz / g;
  const auto table = build_phase_table(up, down);

  const std::size_t n_in = clip.samples.size();
  const auto n_out = static_cast<std::size_t>(
      std::llround(static_cast<double>(n_in) * kSampleRate / clip.sample_rate_hz));

  AudioClip out;
  out.sample_rate_hz = kSampleRate;
  out.label = clip.label;
  out.source_id = clip.source_id;
  out.samples.resize(n_out);

  const auto n_in_signed = static_cast<std::int64_t>(n_in);
  for (std::size_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = static_cast<std::int64_t>(n) * down;
    const std::int64_t base = pos / up;
    const auto phase = static_cast<std::size_t>(pos % up);
    const double* h = table.data() + phase * kTapsPerPhase;
    double acc = 0.0;
    for (int k = 0; k < kTapsPerPhase; ++k) {
      const std::int64_t idx = base + k - (kTapsPerPhase / 2 - 1);
      if (idx < 0 || idx >= n_in_signed) continue;
      acc += h[k] * clip.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

AudioClip fit_to_9s(const AudioClip& clip) {
  if (clip.samples.empty()) throw EmptyInput("empty clip");
  if (clip.sample_rate_hz != kSampleRate) {
    throw ContractViolation("fit_to_9s expects a 16 kHz clip, got " +
                            std::to_string(clip.sample_rate_hz) + " Hz");
  }
  AudioClip out = clip;
  out.samples.resize(kClipSamples, 0.0f);
  return out;
}

AudioClip condition(const AudioClip& clip) {
  AudioClip out = fit_to_9s(resample_to_16k(clip));
  for (float& x : out.samples) {
    if (!std::isfinite(x)) throw DecodeError("non-finite sample in clip " + clip.source_id);
    x = std::clamp(x, -1.0f, 1.0f);
  }
  return out;
}

bool is_conditioned(const AudioClip& clip) {
  return clip.sample_rate_hz == kSampleRate && clip.samples.size() == kClipSamples;
}

// --- framing -----------------------------------------------------------------

std::size_t reflect_index(std::ptrdiff_t padded_pos, std::size_t pad, std::size_t n) {
  auto m = padded_pos - static_cast<std::ptrdiff_t>(pad);
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  if (m < 0) m = -m;
  if (m > last) m = 2 * last - m;
  return static_cast<std::size_t>(m);
}

FrameMatrix frame_signal(std::span<const float> signal, std::size_t frame_len, std::size_t hop) {
  if (hop == 0 || frame_len != 2 * hop) {
    throw ContractViolation("frame_len must equal 2 * hop");
  }
  const std::size_t n = signal.size();
  if (n % hop != 0 || n <= hop) {
    throw ContractViolation("signal length " + std::to_string(n) +
                            " is not a multiple of hop greater than one hop");
  }
  const std::size_t pad = frame_len / 2;
  FrameMatrix fm;
  fm.n_frames = n / hop;
  fm.frame_len = frame_len;
  fm.hop = hop;
  fm.frames.resize(fm.n_frames * frame_len);
  for (std::size_t i = 0; i < fm.n_frames; ++i) {
    float* row = fm.frames.data() + i * frame_len;
    const std::size_t start = i * hop;
    if (start >= pad && start + frame_len <= n + pad) {
      std::copy_n(signal.data() + (start - pad), frame_len, row);
    } else {
      for (std::size_t j = 0; j < frame_len; ++j) {
        row[j] = signal[reflect_index(static_cast<std::ptrdiff_t>(start + j), pad, n)];
      }
    }
  }
  return fm;
}

FrameMatrix frame_signal(const AudioClip& clip, std::size_t frame_len, std::size_t hop) {
  if (clip.samples.size() != kClipSamples) {
    throw ContractViolation("frame_signal expects " + std::to_string(kClipSamples) +
                            " samples, got " + std::to_string(clip.samples.size()));
  }
  return frame_signal(std::span<const float>(clip.samples), frame_len, hop);
}

}  // namespace musicnet
