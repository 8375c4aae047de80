#include "musicnet/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "musicnet/errors.hpp"
#include "musicnet/nn.hpp"
#include "parallel.hpp"

namespace musicnet {

std::uint64_t splitmix64(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double rms(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

std::string_view to_string(StemKind kind) {
  switch (kind) {
    case StemKind::tonal_music: return "tonal_music";
    case StemKind::speech_like: return "speech_like";
    case StemKind::noise: return "noise";
  }
  return "unknown";
}

StemKind parse_stem_kind(std::string_view text) {
  for (auto k : {StemKind::tonal_music, StemKind::speech_like, StemKind::noise}) {
    if (to_string(k) == text) return k;
  }
  throw ContractViolation("unknown stem kind '" + std::string(text) + "'");
}

namespace {

using nn::Rng;
using nn::uniform01;

constexpr double kPi = std::numbers::pi;
constexpr double kPeakCeiling = 0.99;

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::size_t rand_below(Rng& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
}

// Box-Muller on the portable uniform stream (std::normal_distribution is not
// reproducible across standard libraries).
double gauss(Rng& rng) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * kPi * u2);
}

struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad make(bool highpass, double f, double q) {
    const double w0 = 2.0 * kPi * f / kSampleRate;
    const double c = std::cos(w0);
    const double alpha = std::sin(w0) / (2.0 * q);
    const double a0 = 1.0 + alpha;
    const double k = highpass ? (1.0 + c) / 2.0 : (1.0 - c) / 2.0;
    const double b1 = highpass ? -(1.0 + c) : (1.0 - c);
    return {k / a0, b1 / a0, k / a0, -2.0 * c / a0, (1.0 - alpha) / a0};
  }

  double step(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

double peak(std::span<const double> x) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  return p;
}

// Scales to a random level a few dB under 0.1 RMS, then under the peak ceiling.
AudioClip finish(std::vector<double>& x, Rng& rng) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  const double r = std::sqrt(acc / static_cast<double>(x.size()));
  double g = r > 0.0 ? 0.1 * std::pow(10.0, uniform(rng, -6.0, 0.0) / 20.0) / r : 0.0;
  if (peak(x) * g > kPeakCeiling) g = kPeakCeiling / peak(x);
  AudioClip clip;
  clip.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) clip.samples[i] = static_cast<float>(x[i] * g);
  return clip;
}

AudioClip gen_tonal(Rng& rng, std::size_t n, double rolloff) {
  static constexpr int kIntervals[] = {3, 4, 5, 7, 9, 10, 12, 15, 16, 19};
  const std::size_t fade = kSampleRate * 8 / 1000;
  std::vector<double> x(n, 0.0);
  std::size_t pos = 0;
  while (pos < n) {
    const auto len = std::min(n - pos, static_cast<std::size_t>(uniform(rng, 0.5, 2.0) * kSampleRate));
    const std::size_t tones = 3 + rand_below(rng, 4);
    const int root = 45 + static_cast<int>(rand_below(rng, 24));
    std::vector<int> notes{root};
    while (notes.size() < tones) {
      const int note = root + kIntervals[rand_below(rng, std::size(kIntervals))];
      if (std::find(notes.begin(), notes.end(), note) == notes.end()) notes.push_back(note);
    }
    for (int note : notes) {
      const double f0 = 440.0 * std::pow(2.0, (note - 69) / 12.0);
      const double amp = uniform(rng, 0.5, 1.0);
      const int harmonics = std::min(8, static_cast<int>(7500.0 / f0));
      for (int h = 1; h <= harmonics; ++h) {
        const double a = amp / std::pow(h, rolloff);
        const double w = 2.0 * kPi * f0 * h / kSampleRate;
        const double phase = uniform(rng, 0.0, 2.0 * kPi);
        for (std::size_t i = 0; i < len; ++i) x[pos + i] += a * std::sin(w * static_cast<double>(i) + phase);
      }
    }
    for (std::size_t i = 0; i < std::min(fade, len); ++i) {
      const double r = 0.5 - 0.5 * std::cos(kPi * static_cast<double>(i) / fade);
      x[pos + i] *= r;
      x[pos + len - 1 - i] *= r;
    }
    pos += len;
  }
  return finish(x, rng);
}

AudioClip gen_speech_like(Rng& rng, std::size_t n) {
  Biquad filters[] = {Biquad::make(true, 250.0, 0.7071), Biquad::make(true, 250.0, 0.7071),
                      Biquad::make(false, 3400.0, 0.7071), Biquad::make(false, 3400.0, 0.7071)};
  std::vector<double> x(n);
  for (auto& v : x) {
    double s = gauss(rng);
    for (auto& f : filters) s = f.step(s);
    v = s;
  }
  // Syllables: raised-sine bumps at 3-8 Hz, occasional pauses.
  std::size_t pos = 0;
  while (pos < n) {
    const auto len = std::min(n - pos, static_cast<std::size_t>(kSampleRate / uniform(rng, 3.0, 8.0)));
    const double amp = uniform01(rng) < 0.15 ? 0.0 : uniform(rng, 0.3, 1.0);
    for (std::size_t i = 0; i < len; ++i) {
      const double s = std::sin(kPi * static_cast<double>(i) / static_cast<double>(len));
      x[pos + i] *= 0.02 + amp * s * s;
    }
    pos += len;
  }
  return finish(x, rng);
}

AudioClip gen_pink(Rng& rng, std::size_t n) {
  // Paul Kellet's refined pink filter.
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  std::vector<double> x(n);
  for (auto& v : x) {
    const double w = gauss(rng);
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  return finish(x, rng);
}

std::size_t samples_for(double seconds) {
  if (!(seconds > 0.0)) throw ContractViolation("stem duration must be positive");
  return static_cast<std::size_t>(std::llround(seconds * kSampleRate));
}

AudioClip generate(StemKind kind, std::size_t n, std::uint64_t seed, double rolloff) {
  Rng rng(seed);
  AudioClip clip;
  switch (kind) {
    case StemKind::tonal_music: clip = gen_tonal(rng, n, rolloff); break;
    case StemKind::speech_like: clip = gen_speech_like(rng, n); break;
    case StemKind::noise: clip = gen_pink(rng, n); break;
  }
  clip.sample_rate_hz = kSampleRate;
  return clip;
}

void require_pair(const AudioClip& a, const AudioClip& b) {
  if (a.sample_rate_hz != kSampleRate || b.sample_rate_hz != kSampleRate) {
    throw ContractViolation("mixing requires 16 kHz stems");
  }
  if (a.size() != b.size()) throw ContractViolation("mixing requires stems of equal length");
}

AudioClip to_clip(std::span<const double> x, Label label, std::string id) {
  AudioClip clip;
  clip.samples.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) clip.samples[i] = static_cast<float>(x[i]);
  clip.label = label;
  clip.source_id = std::move(id);
  return clip;
}

double normalize_peak(std::vector<double>& x) {
  const double p = peak(x);
  if (p <= kPeakCeiling) return 1.0;
  const double g = kPeakCeiling / p;
  for (double& v : x) v *= g;
  return g;
}

// dst += g * src
void add_scaled(std::vector<double>& dst, std::span<const float> src, double g) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += static_cast<double>(static_cast<float>(g * src[i]));
}

}  // namespace

AudioClip gen_synthetic_stems(StemKind kind, double seconds, std::uint64_t seed) {
  AudioClip clip = generate(kind, samples_for(seconds), seed, 1.0);
  clip.source_id = std::string(to_string(kind)) + "_" + std::to_string(seed);
  return clip;
}

double gain_for_ratio(std::span<const float> reference, std::span<const float> other, double ratio_db) {
  const double r_ref = rms(reference);
  const double r_other = rms(other);
  if (r_ref == 0.0) throw SilentStem("reference stem is silent");
  if (r_other == 0.0) throw SilentStem("stem to be scaled is silent");
  return r_ref / (r_other * std::pow(10.0, ratio_db / 20.0));
}

MixResult mix_at_smr(const AudioClip& speech, const AudioClip& music, double smr_db) {
  require_pair(speech, music);
  if (rms(speech.samples) == 0.0) throw SilentStem("speech stem " + speech.source_id + " is silent");
  if (rms(music.samples) == 0.0) throw SilentStem("music stem " + music.source_id + " is silent");
  MixResult out;
  out.music_gain = gain_for_ratio(speech.samples, music.samples, smr_db);
  std::vector<double> mix(speech.samples.begin(), speech.samples.end());
  add_scaled(mix, music.samples, out.music_gain);
  out.mix_gain = normalize_peak(mix);
  out.clip = to_clip(mix, Label::music, speech.source_id + "+" + music.source_id);
  return out;
}

StemPool StemPool::synthetic(const std::vector<std::string>& instruments, std::size_t per_instrument,
                             std::size_t n_speech, std::size_t n_noise, std::uint64_t seed) {
  StemPool pool;
  std::uint64_t k = 0;
  for (std::size_t i = 0; i < instruments.size(); ++i) {
    // Each instrument gets its own harmonic rolloff.
    const double rolloff = 0.5 + 0.5 * static_cast<double>(i % 4);
    auto& stems = pool.music[instruments[i]];
    for (std::size_t j = 0; j < per_instrument; ++j) {
      stems.push_back(generate(StemKind::tonal_music, kClipSamples, splitmix64(seed, k++), rolloff));
      stems.back().source_id = instruments[i] + "_" + std::to_string(j);
    }
  }
  for (std::size_t j = 0; j < n_speech; ++j) {
    pool.speech.push_back(generate(StemKind::speech_like, kClipSamples, splitmix64(seed, k++), 1.0));
    pool.speech.back().source_id = "speech_" + std::to_string(j);
  }
  for (std::size_t j = 0; j < n_noise; ++j) {
    pool.noise.push_back(generate(StemKind::noise, kClipSamples, splitmix64(seed, k++), 1.0));
    pool.noise.back().source_id = "noise_" + std::to_string(j);
  }
  return pool;
}

StemPool StemPool::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  auto load = [&](const nlohmann::json& p) {
    std::filesystem::path path(p.get<std::string>());
    if (path.is_relative()) path = base_dir / path;
    AudioClip clip = condition(read_wav(path));
    clip.source_id = path.stem().string();
    return clip;
  };
  StemPool pool;
  if (j.contains("music")) {
    for (const auto& [name, paths] : j.at("music").items()) {
      for (const auto& p : paths) pool.music[name].push_back(load(p));
    }
  }
  if (j.contains("speech")) {
    for (const auto& p : j.at("speech")) pool.speech.push_back(load(p));
  }
  if (j.contains("noise")) {
    for (const auto& p : j.at("noise")) pool.noise.push_back(load(p));
  }
  return pool;
}

TestManifest SynthGrid::manifest() const {
  TestManifest m;
  m.entries.reserve(items.size());
  for (const auto& item : items) m.entries.push_back(item.entry);
  return m;
}

SynthGrid build_instrument_grid(const GridConfig& config, const StemPool& pool) {
  const std::size_t per_instrument = config.per_type_music_only + config.per_type_mixed;
  const bool needs_speech = config.per_type_mixed > 0 || config.clean_speech > 0 || config.noisy_speech > 0;
  const bool needs_noise = config.per_type_mixed > 1 || config.noisy_speech > 0 || config.noise_only > 0;

  std::vector<std::string> gaps;
  for (const auto& name : config.instruments) {
    const auto it = pool.music.find(name);
    const std::size_t have = it == pool.music.end() ? 0 : it->second.size();
    if (have < per_instrument) {
      gaps.push_back(name + ": " + std::to_string(have) + " of " + std::to_string(per_instrument) +
                     " music stems");
    }
  }
  if (needs_speech && pool.speech.empty()) gaps.push_back("speech: no stems");
  if (needs_noise && pool.noise.empty()) gaps.push_back("noise: no stems");
  if (!gaps.empty()) {
    std::string msg = "missing stems";
    for (std::size_t i = 0; i < gaps.size(); ++i) msg += (i ? "; " : ": ") + gaps[i];
    throw ManifestError(msg);
  }

  SynthGrid grid;
  auto add = [&](Category category, std::string tag, std::string id, std::optional<double> smr) {
    GridItem item;
    item.seed = splitmix64(config.seed, grid.items.size());
    Rng rng(item.seed);
    item.entry.path = "clips/" + id + ".wav";
    item.entry.label = category_label(category);
    item.entry.source_id = std::move(id);
    item.entry.category = category;
    item.entry.tag = std::move(tag);
    item.entry.smr_db = smr;
    const bool speech = category != Category::music_only && category != Category::noise_only;
    const bool noise = category == Category::music_noisy || category == Category::noisy_only ||
                       category == Category::noise_only;
    if (speech) item.speech = rand_below(rng, pool.speech.size());
    if (noise) item.noise = rand_below(rng, pool.noise.size());
    grid.items.push_back(std::move(item));
    return &grid.items.back();
  };

  char id[96];
  for (const auto& name : config.instruments) {
    for (double smr : config.smrs) {
      for (std::size_t j = 0; j < per_instrument; ++j) {
        Category c = Category::music_only;
        if (j >= config.per_type_music_only) {
          c = (j - config.per_type_music_only) % 2 == 0 ? Category::music_clean : Category::music_noisy;
        }
        std::snprintf(id, sizeof id, "%s_%s_%02zu_smr%+g", name.c_str(), std::string(to_string(c)).c_str(), j,
                      smr);
        add(c, name, id, smr)->music = j;
      }
    }
  }
  for (std::size_t j = 0; j < config.clean_speech; ++j) {
    std::snprintf(id, sizeof id, "speech_clean_%03zu", j);
    add(Category::clean_only, "speech", id, std::nullopt);
  }
  for (std::size_t j = 0; j < config.noisy_speech; ++j) {
    std::snprintf(id, sizeof id, "speech_noisy_%03zu", j);
    add(Category::noisy_only, "speech", id, std::nullopt);
  }
  for (std::size_t j = 0; j < config.noise_only; ++j) {
    std::snprintf(id, sizeof id, "noise_%03zu", j);
    add(Category::noise_only, "noise", id, std::nullopt);
  }
  return grid;
}

AudioClip render_grid_item(const GridItem& item, const StemPool& pool, const GridConfig& config) {
  const auto& e = item.entry;
  const Category category = e.category.value_or(Category::music_only);
  const AudioClip* music = item.music ? &pool.music.at(e.tag).at(*item.music) : nullptr;
  const AudioClip* speech = item.speech ? &pool.speech.at(*item.speech) : nullptr;
  const AudioClip* noise = item.noise ? &pool.noise.at(*item.noise) : nullptr;
  const double smr = e.smr_db.value_or(0.0);

  std::vector<double> x(kClipSamples, 0.0);
  switch (category) {
    case Category::music_only: {
      const double g = config.reference_rms / (rms(music->samples) * std::pow(10.0, smr / 20.0));
      add_scaled(x, music->samples, g);
      break;
    }
    case Category::music_clean: {
      const AudioClip mixed = mix_at_smr(*speech, *music, smr).clip;
      x.assign(mixed.samples.begin(), mixed.samples.end());
      break;
    }
    case Category::music_noisy:
      // The SMR is referenced to the clean speech stem, not speech + noise.
      require_pair(*speech, *noise);
      add_scaled(x, speech->samples, 1.0);
      add_scaled(x, noise->samples, gain_for_ratio(speech->samples, noise->samples, config.noisy_snr_db));
      add_scaled(x, music->samples, gain_for_ratio(speech->samples, music->samples, smr));
      break;
    case Category::clean_only:
      add_scaled(x, speech->samples, 1.0);
      break;
    case Category::noisy_only:
      require_pair(*speech, *noise);
      add_scaled(x, speech->samples, 1.0);
      add_scaled(x, noise->samples, gain_for_ratio(speech->samples, noise->samples, config.noisy_snr_db));
      break;
    case Category::noise_only:
      add_scaled(x, noise->samples, 1.0);
      break;
  }
  normalize_peak(x);
  return to_clip(x, e.label, e.source_id);
}

std::vector<AudioClip> make_desk_set(const DeskConfig& config, unsigned jobs) {
  const std::size_t total = config.music + config.non_music;
  std::vector<AudioClip> clips(total);
  detail::parallel_for(total, jobs, [&](std::size_t i) {
    const std::uint64_t seed = splitmix64(config.seed, i);
    char id[48];
    if (i < config.music) {
      clips[i] = gen_synthetic_stems(StemKind::tonal_music, 9.0, seed);
      clips[i].label = Label::music;
      std::snprintf(id, sizeof id, "desk_music_%04zu", i);
    } else {
      const std::size_t j = i - config.music;
      const StemKind kind = j % 2 == 0 ? StemKind::speech_like : StemKind::noise;
      clips[i] = gen_synthetic_stems(kind, 9.0, seed);
      clips[i].label = Label::no_music;
      std::snprintf(id, sizeof id, "desk_%s_%04zu", kind == StemKind::noise ? "noise" : "speech", j);
    }
    clips[i].source_id = id;
  });
  return clips;
}

TestManifest run_recipe(const nlohmann::json& recipe, const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed, const std::filesystem::path& recipe_dir,
                        unsigned jobs) {
  const std::string kind = recipe.at("kind").get<std::string>();
  const std::uint64_t s = seed.value_or(recipe.value("seed", std::uint64_t{0}));
  std::filesystem::create_directories(out_dir / "clips");
  TestManifest manifest;

  if (kind == "instrument_grid") {
    GridConfig cfg;
    cfg.seed = s;
    cfg.instruments = recipe.value("instruments", cfg.instruments);
    cfg.per_type_music_only = recipe.value("per_type_music_only", cfg.per_type_music_only);
    cfg.per_type_mixed = recipe.value("per_type_mixed", cfg.per_type_mixed);
    cfg.smrs = recipe.value("smrs", cfg.smrs);
    cfg.clean_speech = recipe.value("clean_speech", cfg.clean_speech);
    cfg.noisy_speech = recipe.value("noisy_speech", cfg.noisy_speech);
    cfg.noise_only = recipe.value("noise_only", cfg.noise_only);
    cfg.noisy_snr_db = recipe.value("noisy_snr_db", cfg.noisy_snr_db);
    cfg.reference_rms = recipe.value("reference_rms", cfg.reference_rms);

    StemPool pool;
    if (recipe.contains("stems")) {
      pool = StemPool::from_json(recipe.at("stems"), recipe_dir);
    } else {
      pool = StemPool::synthetic(cfg.instruments, cfg.per_type_music_only + cfg.per_type_mixed,
                                 recipe.value("synthetic_speech_stems", std::size_t{60}),
                                 recipe.value("synthetic_noise_stems", std::size_t{30}), splitmix64(s, ~0ull));
    }
    const SynthGrid grid = build_instrument_grid(cfg, pool);
    detail::parallel_for(grid.items.size(), jobs, [&](std::size_t i) {
      write_wav(out_dir / grid.items[i].entry.path, render_grid_item(grid.items[i], pool, cfg));
    });
    manifest = grid.manifest();
  } else if (kind == "desk") {
    DeskConfig cfg;
    cfg.seed = s;
    cfg.music = recipe.value("music", cfg.music);
    cfg.non_music = recipe.value("non_music", cfg.non_music);
    const auto clips = make_desk_set(cfg, jobs);
    for (const auto& clip : clips) {
      ManifestEntry e;
      e.path = "clips/" + clip.source_id + ".wav";
      e.label = *clip.label;
      e.source_id = clip.source_id;
      const bool noise = clip.source_id.find("noise") != std::string::npos;
      e.category = e.label == Label::music ? Category::music_only
                                           : (noise ? Category::noise_only : Category::clean_only);
      e.tag = e.label == Label::music ? "tonal" : (noise ? "noise" : "speech");
      write_wav(out_dir / e.path, clip);
      manifest.entries.push_back(std::move(e));
    }
  } else {
    throw ContractViolation("unknown recipe kind '" + kind + "'");
  }
  write_manifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

}  // namespace musicnet
