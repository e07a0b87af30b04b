#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

namespace jekyll {

inline constexpr const char* kNonDiseaseLabel = "non_disease";

struct ImageRecord {
  std::string path;
  std::string label;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<ImageRecord> images;
};

struct DatasetManifest {
  std::vector<PatientRecord> records;
  std::vector<std::string> condition_vocabulary;
  int image_resolution = 0;
  // Directory that relative image paths resolve against.
  std::string root;

  std::size_t image_count() const;
  const PatientRecord* find(const std::string& patient_id) const;
};

enum class PartitionName { attack, evaluation };
const char* to_string(PartitionName name);

struct Partition {
  PartitionName name = PartitionName::attack;
  std::set<std::string> patient_ids;
};

struct LossWeights {
  double adversarial = 20.0;
  double disease = 50.0;
  double identity = 25.0;
  double cycle = 200.0;

  // Training configurations reported for the chest X-ray and retinal targets.
  static LossWeights cardiomegaly() { return {20.0, 50.0, 25.0, 200.0}; }
  static LossWeights severe_dr() { return {5.0, 5.0, 20.0, 200.0}; }
  static LossWeights proliferative_dr() { return {5.0, 10.0, 20.0, 200.0}; }
  // No published weights exist for Effusion; the Cardiomegaly set stands in.
  static LossWeights effusion() { return cardiomegaly(); }

  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  int epochs_constant = 100;
  int epochs_decay = 100;
  int batch_size = 1;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  bool deterministic_mode = true;

  void validate() const;
};

}  // namespace jekyll
