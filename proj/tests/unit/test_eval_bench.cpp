#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "musicnet/errors.hpp"
#include "musicnet/eval_bench.hpp"
#include "musicnet/weights_io.hpp"
#include "oracles.hpp"

using namespace musicnet;

namespace {

ScoredSet make_set(const std::vector<double>& scores, const std::vector<int>& labels) {
  ScoredSet s;
  for (std::size_t i = 0; i < scores.size(); ++i) s.items.push_back({scores[i], labels[i], "i" + std::to_string(i)});
  return s;
}

// Scores quantized to a coarse grid so ties are common.
std::pair<std::vector<double>, std::vector<int>> random_scores(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> q(0, 20);
  std::bernoulli_distribution coin(0.4);
  std::vector<double> s(n);
  std::vector<int> l(n);
  do {
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = coin(rng);
      s[i] = (q(rng) + 3 * l[i]) / 26.0;
    }
  } while (std::count(l.begin(), l.end(), 1) == 0 || std::count(l.begin(), l.end(), 0) == 0);
  return {s, l};
}

}  // namespace

TEST(Roc, HandCaseMatchesPairwiseCount) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.4, 0.2};
  const std::vector<int> l{1, 0, 1, 1, 0, 0};
  const RocCurve roc = roc_curve(make_set(s, l));
  // Positives .9 .7 .6 against negatives .8 .4 .2: 3 + 2 + 2 = 7 of 9 pairs.
  EXPECT_DOUBLE_EQ(roc.auc, 7.0 / 9.0);
  EXPECT_DOUBLE_EQ(roc.auc, oracle::mann_whitney_auc(s, l));
  ASSERT_EQ(roc.points.size(), 7u);
  EXPECT_EQ(roc.points.front().fpr, 0.0);
  EXPECT_EQ(roc.points.front().tpr, 0.0);
  EXPECT_GT(roc.points.front().threshold, 0.9);
  EXPECT_EQ(roc.points.back().fpr, 1.0);
  EXPECT_EQ(roc.points.back().tpr, 1.0);
}

TEST(Roc, SeparatedTiedAndChanceSets) {
  EXPECT_EQ(roc_curve(make_set({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1})).auc, 1.0);
  EXPECT_EQ(roc_curve(make_set({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1})).auc, 0.5);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u;
  std::vector<double> s(20000);
  std::vector<int> l(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    l[i] = static_cast<int>(i % 2);
  }
  EXPECT_NEAR(roc_curve(make_set(s, l)).auc, 0.5, 0.02);
}

TEST(Roc, PointsAreMonotone) {
  std::mt19937_64 rng(2);
  const auto [s, l] = random_scores(rng, 200);
  const RocCurve roc = roc_curve(make_set(s, l));
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    EXPECT_GE(roc.points[i].fpr, roc.points[i - 1].fpr);
    EXPECT_GE(roc.points[i].tpr, roc.points[i - 1].tpr);
    EXPECT_LT(roc.points[i].threshold, roc.points[i - 1].threshold);
  }
}

TEST(Roc, EqualsMannWhitneyOnRandomSets) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> size(2, 500);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [s, l] = random_scores(rng, size(rng));
    ASSERT_EQ(roc_curve(make_set(s, l)).auc, oracle::mann_whitney_auc(s, l)) << "trial " << trial;
  }
}

TEST(Roc, SwappingClassesComplementsAuc) {
  std::mt19937_64 rng(4);
  const auto [s, l] = random_scores(rng, 300);
  std::vector<int> flipped(l);
  for (int& v : flipped) v = 1 - v;
  EXPECT_NEAR(roc_curve(make_set(s, flipped)).auc, 1.0 - roc_curve(make_set(s, l)).auc, 1e-12);
}

TEST(Roc, RejectsDegenerateInput) {
  EXPECT_THROW(roc_curve(make_set({0.1, 0.2}, {1, 1})), DegenerateSet);
  EXPECT_THROW(roc_curve(make_set({}, {})), DegenerateSet);
  EXPECT_THROW(roc_curve(make_set({0.1, NAN}, {0, 1})), ContractViolation);
  EXPECT_THROW(roc_curve(make_set({0.1, 0.2}, {0, 2})), ContractViolation);
}

TEST(OperatingPointTest, MatchesExhaustiveSweep) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [s, l] = random_scores(rng, 50);
    for (double target : {0.0, 0.001, 0.05, 0.2, 0.5}) {
      const OperatingPoint op = tpr_at_fpr(make_set(s, l), target);
      const auto ref = oracle::brute_force_tpr_at_fpr(s, l, target);
      ASSERT_EQ(op.tpr, ref.tpr) << "trial " << trial << " target " << target;
      ASSERT_LE(op.fpr, target);
    }
  }
}

TEST(OperatingPointTest, MonotoneInTarget) {
  std::mt19937_64 rng(6);
  const auto [s, l] = random_scores(rng, 400);
  const RocCurve roc = roc_curve(make_set(s, l));
  double last = -1.0;
  for (double t = 0.0; t <= 1.0; t += 0.01) {
    const double tpr = tpr_at_fpr(roc, t).tpr;
    EXPECT_GE(tpr, last);
    last = tpr;
  }
  // Every ROC point is reproduced when its own FPR is the target.
  for (const auto& p : roc.points) EXPECT_GE(tpr_at_fpr(roc, p.fpr).tpr, p.tpr);
}

TEST(OperatingPointTest, SeparableAndNegativeBudget) {
  const OperatingPoint sep = tpr_at_fpr(make_set({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 0.001);
  EXPECT_EQ(sep.tpr, 1.0);
  EXPECT_EQ(sep.fpr, 0.0);
  EXPECT_TRUE(sep.insufficient_negatives);

  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 1000; ++i) {
    s.push_back(u(rng));
    l.push_back(0);
  }
  for (int i = 0; i < 100; ++i) {
    s.push_back(0.5 + 0.5 * u(rng));
    l.push_back(1);
  }
  const OperatingPoint op = tpr_at_fpr(make_set(s, l), 0.001);
  EXPECT_FALSE(op.insufficient_negatives);
  EXPECT_LE(op.false_positives, 1u);
  std::size_t fp = 0;
  for (std::size_t i = 0; i < s.size(); ++i) fp += l[i] == 0 && s[i] >= op.threshold;
  EXPECT_EQ(fp, op.false_positives);
}

TEST(Latency, SingleRunStatistics) {
  const MusicNetModel m = MusicNetModel::zeros();
  AudioClip clip;
  clip.samples.assign(kClipSamples, 0.01f);
  const LatencyStats s = benchmark_latency(m, clip, 0, 1);
  ASSERT_EQ(s.samples_ms.size(), 1u);
  EXPECT_EQ(s.mean_ms, s.samples_ms[0]);
  EXPECT_EQ(s.p50_ms, s.mean_ms);
  EXPECT_EQ(s.p95_ms, s.mean_ms);
  EXPECT_EQ(s.reference_ms, 11.1);
  EXPECT_FALSE(s.hardware.empty());
  EXPECT_THROW(benchmark_latency(m, clip, 0, 0), ContractViolation);
  MusicNetModel training = m;
  training.mode = Mode::train;
  EXPECT_THROW(benchmark_latency(training, clip, 0, 1), ContractViolation);
}

TEST(Latency, RepeatedMeasurementIsStable) {
  const MusicNetModel m = MusicNetModel::glorot(1);
  AudioClip clip;
  clip.samples.assign(kClipSamples, 0.01f);
  const LatencyStats a = benchmark_latency(m, clip, 2, 10);
  const LatencyStats b = benchmark_latency(m, clip, 2, 20);
  EXPECT_LE(a.p50_ms, a.p95_ms);
  EXPECT_LT(std::abs(b.mean_ms - a.mean_ms) / a.mean_ms, 0.2);
}

class ManifestEval : public ::testing::Test {
 protected:
  void SetUp() override {
    std::filesystem::create_directories(dir_ / "clips");
    const std::pair<Category, int> kinds[] = {{Category::music_only, 3}, {Category::clean_only, 2}, {Category::noise_only, 1}};
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (const auto& [cat, n] : kinds) {
      for (int i = 0; i < n; ++i) {
        AudioClip c;
        c.samples.resize(kClipSamples);
        for (auto& v : c.samples) v = static_cast<float>(u(rng));
        ManifestEntry e;
        e.source_id = std::string(to_string(cat)) + std::to_string(i);
        e.path = "clips/" + e.source_id + ".wav";
        e.label = category_label(cat);
        e.category = cat;
        write_wav(dir_ / e.path, c);
        manifest_.entries.push_back(e);
      }
    }
  }

  oracle::TempDir dir_{"eval"};
  TestManifest manifest_;
};

TEST_F(ManifestEval, ConstantModelIsChanceLevel) {
  const EvalReport r = evaluate_manifest(MusicNetModel::zeros(), manifest_, dir_ / "m.jsonl");
  EXPECT_EQ(r.auc, 0.5);
  EXPECT_EQ(r.tpr_at_target, 0.0);
  EXPECT_TRUE(r.insufficient_negatives);
  EXPECT_EQ(r.positives, 3u);
  EXPECT_EQ(r.negatives, 3u);
  EXPECT_EQ(r.scored, 6u);
  EXPECT_EQ(r.per_category.at("music_only").count, 3u);
  EXPECT_EQ(r.per_category.at("clean_only").count, 2u);
  EXPECT_EQ(r.per_category.at("noise_only").count, 1u);
  EXPECT_EQ(r.model_size_bytes, 673963u);
  EXPECT_EQ(r.params.trainable, 45697u);
}

TEST_F(ManifestEval, UnreadableClipsAreSkippedAndReported) {
  std::filesystem::remove(dir_ / manifest_.entries[1].path);
  std::ostringstream warn;
  const EvalReport r = evaluate_manifest(MusicNetModel::glorot(2), manifest_, dir_ / "m.jsonl", 0.001, 2, &warn);
  EXPECT_EQ(r.scored, 5u);
  EXPECT_EQ(r.skipped, 1u);
  ASSERT_EQ(r.skipped_ids.size(), 1u);
  EXPECT_EQ(r.skipped_ids[0], manifest_.entries[1].source_id);
  EXPECT_NE(warn.str().find(manifest_.entries[1].source_id), std::string::npos);
  EXPECT_EQ(r.per_category.at("music_only").count, 2u);
}

TEST_F(ManifestEval, ReportSerializes) {
  EvalReport r = evaluate_manifest(MusicNetModel::glorot(3), manifest_, dir_ / "m.jsonl");
  r.latency = LatencyStats{};
  const auto j = to_json(r);
  for (const char* key : {"auc", "tpr_at_target", "target_fpr", "threshold", "roc_points", "per_category",
                          "latency", "model_size_bytes", "param_counts", "insufficient_negatives"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["roc_points"].size(), r.roc_points.size());

  write_roc_csv(dir_ / "roc.csv", r.roc_points);
  std::ifstream csv(dir_ / "roc.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "fpr,tpr,threshold");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, r.roc_points.size());
}
