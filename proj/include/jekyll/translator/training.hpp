#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "jekyll/core/image.hpp"
#include "jekyll/core/types.hpp"
#include "jekyll/translator/model.hpp"

namespace jekyll::translator {

/// Raised when the generator objective stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  LossBreakdown generator;      // mean over the epoch's steps
  double discriminator = 0.0;   // mean D_X + D_Y objective
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  LossBreakdown first_step;
  std::string disease_digest_before, disease_digest_after;
  std::string identity_digest_before, identity_digest_after;
};

struct GanTrainingOptions {
  // Steps per epoch; 0 means max(|X|, |Y|) / batch_size.
  int steps_per_epoch = 0;
  // Per-epoch checkpoints go to checkpoint_dir/epoch_NNN when set.
  std::filesystem::path checkpoint_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Constant for epochs_constant epochs, then linear decay reaching zero after
// epochs_decay more.
double learning_rate_at(int epoch, const ExperimentConfig& config);

// Alternating generator/discriminator Adam updates on unpaired pools
// (X: non-disease, Y: target condition). Uses config.loss_weights.
TrainingHistory train_jekyll(TranslationModel& model, const std::vector<ImageTensor>& x_pool,
                             const std::vector<ImageTensor>& y_pool, const ExperimentConfig& config,
                             const GanTrainingOptions& options = {});

// Single forward pass through G (x_to_y) or F (y_to_x).
ImageTensor translate(const TranslationModel& model, const ImageTensor& image, Direction direction);
std::vector<ImageTensor> translate(const TranslationModel& model,
                                   const std::vector<ImageTensor>& images, Direction direction);

}  // namespace jekyll::translator
