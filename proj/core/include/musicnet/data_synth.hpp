#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "musicnet/audio_io.hpp"
#include "musicnet/manifest.hpp"

namespace musicnet {

/// Stateless 64-bit mix of (seed, index); used to give every generated item
/// its own RNG stream.
std::uint64_t splitmix64(std::uint64_t seed, std::uint64_t index);

double rms(std::span<const float> x);

enum class StemKind { tonal_music, speech_like, noise };

std::string_view to_string(StemKind kind);
StemKind parse_stem_kind(std::string_view text);

/// Deterministic synthetic stand-ins for real material, 16 kHz mono.
///  - tonal_music: 3-6 harmonic tones, chord changes every 0.5-2 s
///  - speech_like: band-limited noise under a 3-8 Hz syllabic envelope
///  - noise: pink noise
AudioClip gen_synthetic_stems(StemKind kind, double seconds = 9.0, std::uint64_t seed = 0);

struct MixResult {
  AudioClip clip;
  double music_gain = 1.0;  // g applied to the music stem
  double mix_gain = 1.0;    // peak normalization applied to the sum (1 if none)
};

/// speech + g * music with 20 log10(rms(speech) / rms(g * music)) == smr_db.
/// The sum is scaled down to a 0.99 peak if it would clip. Both stems must be
/// 16 kHz and of equal length. Silent stems throw SilentStem.
MixResult mix_at_smr(const AudioClip& speech, const AudioClip& music, double smr_db);

/// Gain for `other` so that rms(reference) / rms(gain * other) is ratio_db.
double gain_for_ratio(std::span<const float> reference, std::span<const float> other, double ratio_db);

struct MixSpec {
  std::optional<std::filesystem::path> speech_path;
  std::filesystem::path music_path;
  double smr_db = 0.0;  // ignored without speech
  Label out_label = Label::music;
  std::uint64_t seed = 0;
};

/// Conditioned stems to draw from, keyed by instrument for music.
struct StemPool {
  std::map<std::string, std::vector<AudioClip>> music;
  std::vector<AudioClip> speech;
  std::vector<AudioClip> noise;

  /// Synthetic pool: each instrument gets its own harmonic timbre.
  static StemPool synthetic(const std::vector<std::string>& instruments, std::size_t per_instrument,
                            std::size_t n_speech, std::size_t n_noise, std::uint64_t seed);
  /// {"music": {"piano": ["a.wav", ...]}, "speech": [...], "noise": [...]}
  /// with paths relative to base_dir.
  static StemPool from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

struct GridConfig {
  std::vector<std::string> instruments{"piano", "guitar", "violin"};
  std::size_t per_type_music_only = 20;
  std::size_t per_type_mixed = 10;  // alternates music+clean and music+noisy
  std::vector<double> smrs{-5.0, 0.0, 5.0};
  std::size_t clean_speech = 150;
  std::size_t noisy_speech = 150;
  std::size_t noise_only = 0;
  double noisy_snr_db = 10.0;
  // Speech level that music-only entries are referenced to: a music-only clip
  // at SMR s carries the music at the level it would have in a mix at s.
  double reference_rms = 0.1;
  std::uint64_t seed = 0;
};

struct GridItem {
  ManifestEntry entry;
  std::optional<std::size_t> music;  // index into pool.music[entry.tag]
  std::optional<std::size_t> speech;
  std::optional<std::size_t> noise;
  std::uint64_t seed = 0;
};

struct SynthGrid {
  std::vector<GridItem> items;
  TestManifest manifest() const;
};

/// Instruments x (music_only + mixed) x SMRs music entries, then the no-music
/// entries. Throws ManifestError listing every instrument (or the speech or
/// noise pool) that lacks stems.
SynthGrid build_instrument_grid(const GridConfig& config, const StemPool& pool);

/// Renders one grid entry to a conditioned clip.
AudioClip render_grid_item(const GridItem& item, const StemPool& pool, const GridConfig& config);

/// Synthetic training/evaluation material: `music` tonal clips, and
/// `non_music` clips alternating speech_like and noise.
struct DeskConfig {
  std::size_t music = 400;
  std::size_t non_music = 400;
  std::uint64_t seed = 0;
};

std::vector<AudioClip> make_desk_set(const DeskConfig& config, unsigned jobs = 1);

/// Executes a JSON recipe ("kind": "instrument_grid" or "desk"), writing
/// PCM16 WAVs under out_dir/clips and out_dir/manifest.jsonl. A non-null
/// seed overrides the recipe's.
TestManifest run_recipe(const nlohmann::json& recipe, const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed, const std::filesystem::path& recipe_dir = {},
                        unsigned jobs = 1);

}  // namespace musicnet
