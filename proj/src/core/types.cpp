#include "jekyll/core/types.hpp"

#include "jekyll/core/error.hpp"

namespace jekyll {

std::size_t DatasetManifest::image_count() const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.images.size();
  return n;
}

const PatientRecord* DatasetManifest::find(const std::string& patient_id) const {
  for (const auto& r : records)
    if (r.patient_id == patient_id) return &r;
  return nullptr;
}

const char* to_string(PartitionName name) {
  return name == PartitionName::attack ? "attack" : "evaluation";
}

void LossWeights::validate() const {
  if (adversarial < 0 || disease < 0 || identity < 0 || cycle < 0)
    throw ValidationError("loss weights must be non-negative");
}

void ExperimentConfig::validate() const {
  loss_weights.validate();
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(adam_beta1 > 0 && adam_beta1 < 1) || !(adam_beta2 > 0 && adam_beta2 < 1))
    throw ValidationError("Adam betas must lie in (0, 1)");
  if (epochs_constant < 0 || epochs_decay < 0) throw ValidationError("epoch counts must be >= 0");
}

}  // namespace jekyll
