#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "musicnet/audio_io.hpp"
#include "musicnet/featurize.hpp"
#include "musicnet/manifest.hpp"
#include "musicnet/model.hpp"

namespace musicnet {

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  int max_epochs = 30;
  // Early stopping: quit after `early_stop_patience` epochs whose mean loss
  // improved on the best so far by less than `min_improvement`.
  int early_stop_patience = 3;
  double min_improvement = 1e-4;
  std::uint64_t seed = 0;
  double dropout_rate = kDefaultDropout;
  bool train_featurizer = false;
  bool balance_classes = true;
  // After the last epoch, re-fit the output bias in inference mode on the
  // training data (see calibrate_output_bias).
  bool calibrate_bias = true;
  unsigned jobs = 1;

  void validate() const;
};

inline constexpr double kProbClamp = 1e-7;

/// Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]. y must be 0 or 1.
double bce_loss(double p, int y);
double bce_mean(std::span<const double> probs, std::span<const int> labels);

/// One trainable tensor: its storage (float network weights or double
/// featurizer matrices) and its gradient.
struct ParamSlot {
  std::string name;
  std::variant<std::span<float>, std::span<double>> value;
  std::span<const double> grad;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// Bias-corrected Adam update. Any non-finite gradient aborts the whole step
/// (nothing is modified, t is unchanged) with NonFiniteGradient naming the
/// tensor.
void adam_step(std::span<const ParamSlot> slots, AdamState& state, const TrainConfig& cfg);

struct TrainExample {
  AudioClip clip;           // conditioned
  LogMelFeature features;   // cached under the plan given to make_dataset
  Label label = Label::no_music;
};
using Dataset = std::vector<TrainExample>;

/// Conditions each clip and caches its features. Every clip needs a label.
Dataset make_dataset(std::vector<AudioClip> clips, const FeaturePlan& plan);
/// Reads a JSON-lines training manifest.
Dataset load_dataset(const std::filesystem::path& manifest_path, const FeaturePlan& plan);

struct EpochMetrics {
  int epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::size_t samples = 0;
};

struct EvalMetrics {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::vector<double> probabilities;
};

/// Inference-mode loss and accuracy (threshold 0.5) over a dataset.
EvalMetrics evaluate_dataset(const MusicNetModel& model, const Dataset& data, unsigned jobs = 1);

/// Inference-mode logits, one per example.
std::vector<double> dataset_logits(const MusicNetModel& model, const Dataset& data, unsigned jobs = 1);

/// Adds to the output bias the shift that minimises class-balanced BCE of the
/// inference-mode logits over `data`, and returns it. Dropout before max
/// pooling inflates train-mode activations; this removes the resulting offset
/// without changing the ranking of scores.
double calibrate_output_bias(MusicNetModel& model, const Dataset& data, unsigned jobs = 1);

/// Holds the optimizer state and the epoch RNG across epochs.
class Trainer {
 public:
  Trainer(MusicNetModel& model, TrainConfig cfg);

  /// One pass: class-balanced, shuffled minibatches (last partial batch
  /// kept), mean BCE per batch, one Adam step per batch.
  EpochMetrics train_epoch(const Dataset& data);

  const AdamState& adam_state() const { return adam_; }
  const TrainConfig& config() const { return cfg_; }
  int epochs_run() const { return epoch_; }

 private:
  std::vector<std::size_t> epoch_order(const Dataset& data);
  std::vector<ParamSlot> slots(std::span<const std::vector<double>> grads);

  MusicNetModel& model_;
  TrainConfig cfg_;
  AdamState adam_;
  nn::Rng rng_;
  int epoch_ = 0;
};

struct FitResult {
  std::vector<EpochMetrics> history;
  bool early_stopped = false;
  bool stopped_by_callback = false;
  double bias_shift = 0.0;  // applied by calibrate_output_bias, 0 when disabled
};

/// Trains until max_epochs, early stopping, or `on_epoch` returning false.
/// With `checkpoint_dir`, writes epoch_NNN.mnw after every epoch and appends
/// to metrics.csv (epoch,mean_loss,accuracy). Checkpoints hold the raw
/// weights; calibration, when enabled, only touches the returned model.
FitResult fit(MusicNetModel& model, const Dataset& data, const TrainConfig& cfg,
              const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt,
              const std::function<bool(const EpochMetrics&)>& on_epoch = {});

// --- gradient verification ---------------------------------------------------

struct GradCheckOptions {
  double epsilon = 1e-4;
  std::size_t samples_per_tensor = 200;
  std::uint64_t seed = 1;
  bool include_featurizer = false;
  bool training_mode = true;  // dropout active with a fixed mask
  // Relative error uses max(|analytic|, |numeric|, abs_floor) as denominator.
  double abs_floor = 1e-6;
  // Test hook applied to the analytic gradients before comparison.
  std::function<void(NetworkParams<double>&)> tamper;
};

struct TensorCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a ReLU/max/floor kink
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<TensorCheck> tensors;
};

/// Central finite differences (in double precision) on sampled parameters
/// of every tensor versus the analytic backward pass, on one example.
GradCheckReport grad_check(const MusicNetModel& model, const AudioClip& clip, Label label,
                           const GradCheckOptions& options = {});

}  // namespace musicnet
