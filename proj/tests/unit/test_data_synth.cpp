#include <gtest/gtest.h>

#include <cmath>

#include "musicnet/data_synth.hpp"
#include "musicnet/errors.hpp"
#include "oracles.hpp"

using namespace musicnet;

namespace {

// Stem ratio measured from the speech and the gain-scaled music, before summation.
double measured_smr_db(const AudioClip& speech, const AudioClip& music, double gain) {
  std::vector<float> scaled(music.samples.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = static_cast<float>(gain * music.samples[i]);
  return 20.0 * std::log10(oracle::rms(speech.samples) / oracle::rms(scaled));
}

// Pool with the right number of (empty) stems; grid construction only counts them.
StemPool counting_pool(const std::vector<std::string>& instruments, std::size_t per_instrument) {
  StemPool pool;
  for (const auto& name : instruments) pool.music[name].resize(per_instrument);
  pool.speech.resize(3);
  pool.noise.resize(2);
  return pool;
}

AudioClip constant_clip(float v) {
  AudioClip c;
  c.samples.assign(kClipSamples, v);
  return c;
}

}  // namespace

TEST(Stems, DeterministicAndNineSecondsLong) {
  for (StemKind kind : {StemKind::tonal_music, StemKind::speech_like, StemKind::noise}) {
    const AudioClip a = gen_synthetic_stems(kind, 9.0, 42);
    const AudioClip b = gen_synthetic_stems(kind, 9.0, 42);
    const AudioClip c = gen_synthetic_stems(kind, 9.0, 43);
    EXPECT_EQ(a.samples.size(), kClipSamples) << to_string(kind);
    EXPECT_EQ(a.sample_rate_hz, 16000);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_NE(a.samples, c.samples);
    EXPECT_TRUE(is_conditioned(a));
    EXPECT_GT(oracle::rms(a.samples), 0.01);
  }
}

TEST(Stems, KindNamesRoundTrip) {
  for (StemKind kind : {StemKind::tonal_music, StemKind::speech_like, StemKind::noise}) {
    EXPECT_EQ(parse_stem_kind(to_string(kind)), kind);
  }
  EXPECT_THROW(parse_stem_kind("jazz"), ContractViolation);
}

TEST(Stems, FlatnessOrdersToneSpeechNoise) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const double tonal = oracle::spectral_flatness(gen_synthetic_stems(StemKind::tonal_music, 9.0, seed).samples);
    const double speech = oracle::spectral_flatness(gen_synthetic_stems(StemKind::speech_like, 9.0, seed).samples);
    const double noise = oracle::spectral_flatness(gen_synthetic_stems(StemKind::noise, 9.0, seed).samples);
    EXPECT_LT(tonal, speech) << "seed " << seed;
    EXPECT_LT(speech, noise) << "seed " << seed;
  }
}

TEST(Mix, EqualLevelsAtZeroDbNeedUnitGain) {
  const AudioClip speech = gen_synthetic_stems(StemKind::speech_like, 9.0, 5);
  AudioClip music = gen_synthetic_stems(StemKind::tonal_music, 9.0, 6);
  const double k = rms(speech.samples) / rms(music.samples);
  for (auto& v : music.samples) v = static_cast<float>(v * k);
  const MixResult r0 = mix_at_smr(speech, music, 0.0);
  EXPECT_NEAR(r0.music_gain, 1.0, 1e-6);
  EXPECT_NEAR(mix_at_smr(speech, music, 20.0).music_gain, 0.1, 1e-6);
}

TEST(Mix, RemeasuredRatioMatchesRequest) {
  const AudioClip speech = gen_synthetic_stems(StemKind::speech_like, 9.0, 7);
  const AudioClip music = gen_synthetic_stems(StemKind::tonal_music, 9.0, 8);
  for (double smr : {-20.0, -5.0, 0.0, 5.0, 20.0}) {
    const MixResult r = mix_at_smr(speech, music, smr);
    EXPECT_NEAR(measured_smr_db(speech, music, r.music_gain), smr, 0.01) << smr;
    EXPECT_TRUE(is_conditioned(r.clip));
    float peak = 0.0f;
    for (float v : r.clip.samples) peak = std::max(peak, std::abs(v));
    EXPECT_LE(peak, 0.99f + 1e-6f);
  }
}

TEST(Mix, LoudSumIsNormalizedNotClipped) {
  const AudioClip a = constant_clip(0.8f), b = constant_clip(0.8f);
  const MixResult r = mix_at_smr(a, b, 0.0);
  EXPECT_NEAR(r.mix_gain, 0.99 / 1.6, 1e-6);
  EXPECT_NEAR(r.clip.samples[100], 0.99f, 1e-6f);
  const MixResult quiet = mix_at_smr(constant_clip(0.1f), constant_clip(0.1f), 0.0);
  EXPECT_EQ(quiet.mix_gain, 1.0);
}

TEST(Mix, ContractErrors) {
  const AudioClip speech = gen_synthetic_stems(StemKind::speech_like, 9.0, 9);
  EXPECT_THROW(mix_at_smr(constant_clip(0.0f), speech, 0.0), SilentStem);
  EXPECT_THROW(mix_at_smr(speech, constant_clip(0.0f), 0.0), SilentStem);
  AudioClip shorter = speech;
  shorter.samples.resize(1000);
  EXPECT_THROW(mix_at_smr(speech, shorter, 0.0), ContractViolation);
  AudioClip other_rate = speech;
  other_rate.sample_rate_hz = 8000;
  EXPECT_THROW(mix_at_smr(speech, other_rate, 0.0), ContractViolation);
}

TEST(Grid, DefaultConfigurationCounts) {
  const GridConfig cfg;
  const SynthGrid grid = build_instrument_grid(cfg, counting_pool(cfg.instruments, 30));
  const TestManifest m = grid.manifest();
  EXPECT_EQ(m.count(Label::music), 3u * 30u * 3u);
  EXPECT_EQ(m.count(Label::music), 270u);
  EXPECT_EQ(m.count(Label::no_music), 300u);
  EXPECT_EQ(m.count(Category::music_only), 3u * 20u * 3u);
  EXPECT_EQ(m.count(Category::music_clean) + m.count(Category::music_noisy), 3u * 10u * 3u);
  EXPECT_EQ(m.count(Category::clean_only), 150u);
  EXPECT_EQ(m.count(Category::noisy_only), 150u);
  EXPECT_NO_THROW(m.validate());
}

TEST(Grid, ArithmeticHoldsForOtherShapes) {
  struct Case {
    std::size_t instruments, only, mixed, smrs;
  };
  for (const Case c : {Case{1, 1, 1, 1}, Case{2, 3, 4, 2}, Case{4, 0, 5, 3}}) {
    GridConfig cfg;
    cfg.instruments.clear();
    for (std::size_t i = 0; i < c.instruments; ++i) cfg.instruments.push_back("inst" + std::to_string(i));
    cfg.per_type_music_only = c.only;
    cfg.per_type_mixed = c.mixed;
    cfg.smrs.assign(c.smrs, 0.0);
    for (std::size_t i = 0; i < c.smrs; ++i) cfg.smrs[i] = -5.0 + 5.0 * static_cast<double>(i);
    cfg.clean_speech = 0;
    cfg.noisy_speech = 0;
    const auto grid = build_instrument_grid(cfg, counting_pool(cfg.instruments, c.only + c.mixed));
    EXPECT_EQ(grid.items.size(), c.instruments * (c.only + c.mixed) * c.smrs);
  }
}

TEST(Grid, MissingStemsAreListed) {
  GridConfig cfg;
  StemPool pool = counting_pool({"piano", "guitar"}, 30);
  pool.music["guitar"].resize(12);
  pool.speech.clear();
  try {
    build_instrument_grid(cfg, pool);
    FAIL() << "expected ManifestError";
  } catch (const ManifestError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("violin"), std::string::npos);
    EXPECT_NE(msg.find("guitar: 12 of 30"), std::string::npos);
    EXPECT_NE(msg.find("speech"), std::string::npos);
    EXPECT_EQ(msg.find("piano"), std::string::npos);
  }
}

TEST(Grid, RenderedItemsCarryTheirLabels) {
  GridConfig cfg;
  cfg.instruments = {"piano"};
  cfg.per_type_music_only = 1;
  cfg.per_type_mixed = 2;
  cfg.smrs = {5.0};
  cfg.clean_speech = 1;
  cfg.noisy_speech = 1;
  cfg.noise_only = 1;
  const StemPool pool = StemPool::synthetic(cfg.instruments, 3, 2, 2, 11);
  const SynthGrid grid = build_instrument_grid(cfg, pool);
  ASSERT_EQ(grid.items.size(), 6u);
  for (const auto& item : grid.items) {
    const AudioClip clip = render_grid_item(item, pool, cfg);
    EXPECT_TRUE(is_conditioned(clip)) << item.entry.source_id;
    ASSERT_TRUE(clip.label.has_value());
    EXPECT_EQ(*clip.label, item.entry.label);
    EXPECT_EQ(item.entry.label, category_label(*item.entry.category));
  }
  // Music-only entries sit at the level they would have in a mix at that SMR.
  const AudioClip music_only = render_grid_item(grid.items[0], pool, cfg);
  EXPECT_NEAR(20.0 * std::log10(cfg.reference_rms / oracle::rms(music_only.samples)), 5.0, 0.01);
}

TEST(DeskSet, BalancedLabelsAndAlternatingNonMusic) {
  const auto clips = make_desk_set({3, 4, 5});
  ASSERT_EQ(clips.size(), 7u);
  std::size_t music = 0, speech = 0, noise = 0;
  for (const auto& c : clips) {
    ASSERT_TRUE(c.label.has_value());
    EXPECT_TRUE(is_conditioned(c));
    if (*c.label == Label::music) ++music;
    else if (c.source_id.find("speech") != std::string::npos) ++speech;
    else if (c.source_id.find("noise") != std::string::npos) ++noise;
  }
  EXPECT_EQ(music, 3u);
  EXPECT_EQ(speech, 2u);
  EXPECT_EQ(noise, 2u);
  const auto again = make_desk_set({3, 4, 5}, 2);
  for (std::size_t i = 0; i < clips.size(); ++i) EXPECT_EQ(again[i].samples, clips[i].samples);
}

TEST(Recipe, DeskRecipeWritesClipsAndManifest) {
  oracle::TempDir dir("recipe");
  const nlohmann::json recipe = {{"kind", "desk"}, {"music", 2}, {"non_music", 2}, {"seed", 3}};
  const TestManifest m = run_recipe(recipe, dir.path(), std::nullopt);
  ASSERT_EQ(m.size(), 4u);
  const TestManifest back = read_manifest(dir / "manifest.jsonl");
  EXPECT_EQ(back.entries, m.entries);
  for (const auto& e : m.entries) {
    const AudioClip c = read_wav(resolve_entry_path(dir / "manifest.jsonl", e));
    EXPECT_EQ(c.samples.size(), kClipSamples);
  }
  EXPECT_THROW(run_recipe({{"kind", "unknown"}}, dir.path(), std::nullopt), ContractViolation);
}

TEST(Recipe, SeedOverrideChangesContent) {
  oracle::TempDir a("ra"), b("rb");
  const nlohmann::json recipe = {{"kind", "desk"}, {"music", 1}, {"non_music", 1}, {"seed", 3}};
  run_recipe(recipe, a.path(), std::nullopt);
  run_recipe(recipe, b.path(), 4);
  const auto m = read_manifest(a / "manifest.jsonl");
  const AudioClip x = read_wav(a / m.entries[0].path);
  const AudioClip y = read_wav(b / m.entries[0].path);
  EXPECT_NE(x.samples, y.samples);
}

TEST(Splitmix, DistinctStreams) {
  EXPECT_NE(splitmix64(1, 0), splitmix64(1, 1));
  EXPECT_NE(splitmix64(1, 0), splitmix64(2, 0));
  EXPECT_EQ(splitmix64(9, 9), splitmix64(9, 9));
}
