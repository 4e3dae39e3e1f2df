#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "detm/corpus.hpp"
#include "detm/model.hpp"

namespace detm {

struct TrainingConfig {
  double learning_rate = 0.005;
  int batch_size = 512;
  int epochs = 50;
  bool reweight = false;
  bool recompute = false;  // rebuild window statistics from the eval split
  std::uint64_t seed = 1;
  double gradient_clip_norm = 2.0;
  bool select_best = true;  // keep the best-validation checkpoint, else the last

  void validate() const;
};

struct EpochRecord {
  LossBreakdown train_mean;  // batch losses averaged over the epoch
  double validation_nll = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
};

// Supplies window statistics to training-time validation and to evaluation.
// recompute=false paths must only ever call training(); tests wrap this to
// prove evaluation-split statistics stay untouched.
class StatsProvider {
 public:
  virtual ~StatsProvider() = default;
  virtual const WindowStats& training() = 0;
  virtual WindowStats recomputed(std::span<const SubDocument> subdocs) = 0;
};

class FrozenStatsProvider final : public StatsProvider {
 public:
  FrozenStatsProvider(WindowStats training_stats, Vocabulary vocab, WindowSpec spec)
      : training_(std::move(training_stats)), vocab_(std::move(vocab)),
        spec_(std::move(spec)) {}
  const WindowStats& training() override { return training_; }
  WindowStats recomputed(std::span<const SubDocument> subdocs) override {
    return smooth_window_stats(window_word_stats(subdocs, vocab_, spec_));
  }

 private:
  WindowStats training_;
  Vocabulary vocab_;
  WindowSpec spec_;
};

// Rectified adaptive-moment optimizer (RAdam) with global-norm clipping.
class RAdamOptimizer {
 public:
  RAdamOptimizer(double learning_rate, double clip_norm, double beta1 = 0.9,
                 double beta2 = 0.999, double epsilon = 1e-8);
  // grads must be keyed exactly like DETMParameters::parameter_groups().
  void step(DETMParameters& params, const GradientMap& grads);
  std::int64_t steps_taken() const { return step_count_; }

 private:
  double lr_, clip_, beta1_, beta2_, eps_;
  std::int64_t step_count_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

struct TrainResult {
  DETMParameters params;
  TrainingHistory history;
  int best_epoch = -1;  // index into history when select_best picked one
};

// Aborts with the epoch and batch index when the loss stops being finite.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainResult train(DETMParameters params, std::span<const BagOfWords> train_bows,
                  std::span<const SubDocument> val_subdocs,
                  std::span<const BagOfWords> val_bows, StatsProvider& stats,
                  const TrainingConfig& config);

// Everything needed to evaluate later from the file alone.
struct Checkpoint {
  DETMParameters params;
  TrainingConfig training;
  TrainingHistory history;
  Vocabulary vocab;
  WindowStats frozen_stats;  // training-split statistics, smoothed
  WindowSpec windows;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace detm
