#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "jekyll/classifiers/backbone.hpp"
#include "jekyll/core/image.hpp"

namespace jekyll::classifiers {

enum class ClassifierRole { attack_disease, evaluation_disease, attack_identity, evaluation_identity };

const char* to_string(ClassifierRole role);  // "C_a^d", "C_e^d", ...
ClassifierRole role_from_string(const std::string& s);
bool is_disease_role(ClassifierRole role);

// Disease heads use two logits: index 0 = non-disease, 1 = target condition.
inline constexpr int kDiseaseClass = 1;

enum class FreezePolicy { finetune_all, freeze_all_but_last_k };

struct TrainingRecipe {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  FreezePolicy freeze = FreezePolicy::finetune_all;
  int trainable_last_k = 70;

  void validate() const;
};

struct LabeledImages {
  std::vector<ImageTensor> images;
  std::vector<int> labels;
};

struct TrainingReport {
  double accuracy = 0.0;       // on the held-out set
  std::vector<double> epoch_losses;
  double initial_loss = 0.0;   // training loss before the first update
  double final_loss = 0.0;     // training loss after the last update
};

/// Disease or identity classifier: backbone, then dense(256) -> dropout(0.5) -> output layer.
/// The 256-unit layer is linear, so class activation maps compose both head layers.
class ClassifierHandle {
 public:
  ClassifierHandle(ClassifierRole role, std::vector<std::string> class_names,
                   const BackboneSpec& backbone, std::uint64_t seed);

  ClassifierRole role() const { return role_; }
  int class_count() const { return static_cast<int>(class_names_.size()); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  int class_index(const std::string& name) const;  // -1 when absent
  const BackboneSpec& backbone_spec() const { return spec_; }
  const Backbone& backbone() const { return *backbone_; }
  const std::string& feature_tap_layer() const { return backbone_->tap_layer(); }
  bool trained() const { return trained_; }
  void mark_trained(double accuracy);
  double accuracy() const { return accuracy_; }
  std::uint64_t seed() const { return seed_; }

  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  void freeze() { store_.set_trainable(false); }

  // Graph-building passes (inputs: [N, 1|3, H, W]; grayscale is replicated to RGB).
  nn::Var logits(const nn::Var& x, bool training, std::mt19937_64* dropout_rng = nullptr) const;
  nn::Var features(const nn::Var& x) const;  // tap activation, evaluation mode

  // Inference helpers, evaluation mode, no graph.
  std::vector<std::vector<double>> probabilities(std::span<const ImageTensor> images) const;

  // Head weights composed into one [classes, feature_channels] map for CAM.
  std::vector<double> class_weights(int cls) const;
  nn::Var final_maps(const nn::Var& x) const;

  long forward_calls() const { return forward_calls_.load(); }
  void reset_forward_calls() { forward_calls_ = 0; }

  void save(const std::filesystem::path& dir, const std::string& config_hash) const;
  static std::unique_ptr<ClassifierHandle> load(const std::filesystem::path& dir);

  nn::Dense& hidden_layer() { return hidden_; }
  nn::Dense& output_layer() { return output_; }

 private:
  ClassifierRole role_;
  std::vector<std::string> class_names_;
  BackboneSpec spec_;
  std::uint64_t seed_;
  nn::ParameterStore store_;
  std::unique_ptr<Backbone> backbone_;
  nn::Dense hidden_;
  nn::Dense output_;
  bool trained_ = false;
  double accuracy_ = 0.0;
  mutable std::atomic<long> forward_calls_{0};
};

std::unique_ptr<ClassifierHandle> build_classifier(ClassifierRole role,
                                                   std::vector<std::string> class_names,
                                                   const BackboneSpec& backbone, std::uint64_t seed);

// Trains in place; returns held-out accuracy and per-epoch mean training loss.
TrainingReport train_classifier(ClassifierHandle& handle, const LabeledImages& train,
                                const LabeledImages& validation, const TrainingRecipe& recipe,
                                std::uint64_t seed);

double evaluate_accuracy(const ClassifierHandle& handle, const LabeledImages& data);

// Probability of the target condition.
double predict_disease(const ClassifierHandle& handle, const ImageTensor& image);
std::vector<double> predict_disease(const ClassifierHandle& handle,
                                    std::span<const ImageTensor> images);

struct IdentityPrediction {
  std::string patient_id;
  double probability = 0.0;
};
IdentityPrediction predict_identity(const ClassifierHandle& handle, const ImageTensor& image);
std::vector<IdentityPrediction> predict_identity(const ClassifierHandle& handle,
                                                 std::span<const ImageTensor> images);

std::vector<float> extract_identity_features(const ClassifierHandle& handle,
                                             const ImageTensor& image);

// Heatmap at image resolution, min-max normalized to [0, 1] (all zeros when flat).
ImageTensor class_activation_map(const ClassifierHandle& handle, const ImageTensor& image, int cls);
// Same computation on explicit maps [K, h, w] and per-channel weights.
std::vector<float> cam_from_maps(const nn::Tensor& maps, std::span<const double> weights,
                                 int out_height, int out_width);

}  // namespace jekyll::classifiers
