#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cyclestain/core/error.hpp"
#include "cyclestain/networks/checkpoint.hpp"
#include "cyclestain/networks/networks.hpp"
#include "cyclestain/objectives/losses.hpp"
#include "cyclestain/trainer/adam.hpp"
#include "cyclestain/trainer/augment.hpp"
#include "cyclestain/trainer/dataset.hpp"

namespace cyclestain {

struct TrainConfig {
  double initial_lr = 1e-4;
  double decay_factor = 0.96;
  long decay_interval = 1000;
  long max_iterations = 100000;
  int batch_size = 1;
  double gamma1 = kDefaultGamma1;
  std::uint64_t seed = 0;

  bool augment = true;
  AffineRanges affine;
  /// Background value for pixels uncovered by the affine warp (white in [-1,1]).
  float affine_fill = 1.0F;
  /// Random square crop taken after augmentation; 0 trains on whole images.
  int crop = 0;

  /// Replay buffer of past fakes for the discriminator update (off by default).
  bool image_history = false;
  int history_size = 50;

  long checkpoint_interval = 10000;
  /// Batches prepared ahead of the training loop.
  int prefetch_depth = 2;

  AdamConfig adam;
  ModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// initial_lr * decay_factor ^ floor(iteration / decay_interval)
double lr_at(long iteration, const TrainConfig& cfg);

/// Replay pool of generated images.
class HistoryPool {
 public:
  explicit HistoryPool(int capacity = 50) : capacity_(capacity) {}
  /// Returns a batch mixing new fakes and stored ones (each stored one with p = 0.5).
  Tensor query(const Tensor& fakes, Rng& rng);
  const std::vector<Tensor>& images() const { return images_; }
  void restore(std::vector<Tensor> images) { images_ = std::move(images); }

 private:
  int capacity_;
  std::vector<Tensor> images_;
};

struct TrainState {
  long iteration = 0;
  ParamStore params;
  Adam gen_opt;
  Adam disc_opt;
  std::uint64_t seed = 0;
  std::vector<LossBundle> history;
  HistoryPool pool_ffpe;
  HistoryPool pool_ff;
};

TrainState init_state(const TrainConfig& cfg);

/// Raised when a step yields a non-finite loss; carries the offending bundle.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, long iteration, LossBundle bundle)
      : NumericError(what), iteration(iteration), bundle(bundle) {}
  long iteration;
  LossBundle bundle;
};

/// One generator update (total_G) then one discriminator update (total_D) on
/// fresh forward passes, both at lr_at(state.iteration). Increments the iteration.
LossBundle train_step(TrainState& state, const TrainConfig& cfg, std::span<const Image> ff_batch,
                      std::span<const Image> ffpe_batch);

/// Same as train_step but with an explicit learning rate.
LossBundle train_step_with_lr(TrainState& state, const TrainConfig& cfg,
                              std::span<const Image> ff_batch, std::span<const Image> ffpe_batch,
                              double lr);

/// Forward losses at the current parameters without updating anything.
LossBundle evaluate_losses(const TrainState& state, const TrainConfig& cfg,
                           std::span<const Image> ff_batch, std::span<const Image> ffpe_batch);

struct Batch {
  std::vector<Image> ff;
  std::vector<Image> ffpe;
  std::vector<std::size_t> ff_indices;
  std::vector<std::size_t> ffpe_indices;
};

/// Sampled, augmented and cropped batch for `iteration`; pure function of
/// (cfg.seed, iteration) and the datasets.
Batch make_batch(const TrainConfig& cfg, const ImageSet& ff, const ImageSet& ffpe, long iteration);

Checkpoint to_checkpoint(const TrainState& state, const TrainConfig& cfg);
/// Restores the state and the configuration stored with it.
TrainState from_checkpoint(const Checkpoint& ckpt, TrainConfig* cfg_out = nullptr);

struct TrainResult {
  TrainState state;
  std::filesystem::path loss_csv;
  std::vector<std::filesystem::path> checkpoints;
};

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  /// Called after every iteration with the 1-based iteration count.
  std::function<void(long, const LossBundle&)> on_iteration;
};

/// Runs until cfg.max_iterations. Writes loss.csv (one row per iteration),
/// ckpt_<iter>.ckpt every checkpoint_interval iterations plus the initial and
/// final states, and diagnostic_<iter>.json if training diverges.
TrainResult train(const TrainConfig& cfg, const ImageSet& ff, const ImageSet& ffpe,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, long iteration);

}  // namespace cyclestain
