#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "jekyll/core/image.hpp"
#include "jekyll/nn/module.hpp"

namespace jekyll::defense {

// Per channel of H, S, V, Cb, Cr: a 32-bin normalized histogram, then mean and variance.
inline constexpr int kCsdBins = 32;
inline constexpr int kCsdChannels = 5;
inline constexpr int kCsdDimension = kCsdChannels * (kCsdBins + 2);

/// Thrown for inputs a detector cannot handle, such as grayscale images for CSD.
class UnsupportedInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Channel planes in [0, 1] (hue is degrees / 360), row-major, one per H, S, V, Cb, Cr.
std::vector<std::vector<double>> csd_planes(const ImageTensor& rgb);
std::vector<double> csd_features(const ImageTensor& rgb);

struct BlindDetectorConfig {
  double nu = 0.12;
  double gamma = 0.1;

  void validate() const;
};

/// nu-one-class SVM with an RBF kernel, trained by pairwise (SMO-style) updates.
class OneClassSvm {
 public:
  void fit(const std::vector<std::vector<double>>& samples, double nu, double gamma,
           double tolerance = 1e-4, long max_iterations = 10'000'000);
  // Positive inside the learned support, negative for anomalies.
  double decision(const std::vector<double>& x) const;
  // Strictly outside: margin vectors sit at |decision| <= tolerance and count as inliers.
  bool outside(const std::vector<double>& x) const { return decision(x) < -tolerance_; }
  double tolerance() const { return tolerance_; }

  std::size_t support_vector_count() const { return support_.size(); }
  double rho() const { return rho_; }
  std::size_t dimension() const { return dimension_; }
  long iterations() const { return iterations_; }
  bool converged() const { return converged_; }

 private:
  std::vector<std::vector<double>> support_;
  std::vector<double> coef_;
  double rho_ = 0.0;
  double gamma_ = 0.0;
  double tolerance_ = 0.0;
  std::size_t dimension_ = 0;
  long iterations_ = 0;
  bool converged_ = false;
};

enum class DetectorKind { blind_csd_svm, supervised_mesonet };
const char* to_string(DetectorKind kind);

enum class Verdict { real, fake };
const char* to_string(Verdict v);

/// Blind detector: one-class SVM over min-max scaled CSD features of real images.
class BlindDetector {
 public:
  BlindDetector() = default;
  static BlindDetector train(const std::vector<ImageTensor>& real_images,
                             const BlindDetectorConfig& config);
  static BlindDetector train_on_features(const std::vector<std::vector<double>>& real_features,
                                         const BlindDetectorConfig& config);

  double score(const std::vector<double>& features) const;  // below -svm().tolerance() is anomalous
  Verdict detect_features(const std::vector<double>& features) const;
  const BlindDetectorConfig& config() const { return config_; }
  const OneClassSvm& svm() const { return svm_; }
  std::size_t training_size() const { return training_size_; }
  double training_anomaly_fraction() const { return training_anomaly_fraction_; }

  void save(const std::filesystem::path& path) const;
  static BlindDetector load(const std::filesystem::path& path);

 private:
  std::vector<double> scaled(const std::vector<double>& features) const;

  BlindDetectorConfig config_;
  std::vector<double> lo_, hi_;
  std::vector<std::vector<double>> training_scaled_;
  OneClassSvm svm_;
  std::size_t training_size_ = 0;
  double training_anomaly_fraction_ = 0.0;
};

Verdict blind_detect(const BlindDetector& model, const ImageTensor& image);

struct CrossValidationResult {
  BlindDetectorConfig config;
  double held_out_false_alarm = 0.0;  // mean over folds
};

// k-fold estimate of the held-out false-alarm rate for each candidate; the
// best candidate has the rate closest to its own nu.
std::vector<CrossValidationResult> cross_validate_blind(
    const std::vector<std::vector<double>>& real_features,
    const std::vector<BlindDetectorConfig>& candidates, int folds, std::uint64_t seed);
BlindDetectorConfig select_blind_config(const std::vector<CrossValidationResult>& results);

/// Four inception blocks (1x1, 3x3, dilated 3x3 at d=2 and d=3 branches, each
/// followed by batch normalization and 2x2 max-pooling), then
/// dropout -> dense(16) -> leaky ReLU -> dropout(0.5) -> dense(1) -> sigmoid.
class MesoNet {
 public:
  MesoNet(int resolution, std::uint64_t seed);

  nn::Var logits(const nn::Var& x, bool training, std::mt19937_64* rng = nullptr) const;  // [N]
  std::vector<double> probabilities(const std::vector<ImageTensor>& images) const;

  int resolution() const { return resolution_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  std::size_t parameter_count() const { return store_.parameter_count(); }

 private:
  struct Branch {
    nn::Conv2d conv;
  };
  struct Block {
    std::vector<Branch> branches;
    nn::BatchNorm2d norm;
  };

  int resolution_;
  std::uint64_t seed_;
  nn::ParameterStore store_;
  std::vector<Block> blocks_;
  nn::Dense hidden_, output_;
};

std::unique_ptr<MesoNet> build_mesonet(int resolution = 256, std::uint64_t seed = 0);

struct DetectorSample {
  ImageTensor image;
  bool fake = false;
  std::string patient_id;
};

struct DetectorRecipe {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double threshold = 0.5;
};

struct DetectorMetrics {
  double accuracy = 0.0;   // percent
  double precision = 0.0;  // percent, fake class positive
  double recall = 0.0;     // percent
  int true_positive = 0, false_positive = 0, true_negative = 0, false_negative = 0;
};

// Confusion-matrix metrics; throws when the truth holds a single class.
DetectorMetrics detector_metrics(const std::vector<bool>& predicted_fake,
                                 const std::vector<bool>& truly_fake);

struct SupervisedDetector {
  std::unique_ptr<MesoNet> net;
  double threshold = 0.5;
  std::vector<double> epoch_losses;

  Verdict detect(const ImageTensor& image) const;
  std::vector<bool> predict_fake(const std::vector<ImageTensor>& images) const;
  DetectorMetrics evaluate(const std::vector<DetectorSample>& test) const;
  void save(const std::filesystem::path& dir) const;
  static SupervisedDetector load(const std::filesystem::path& dir);
};

// Throws ValidationError when a patient appears in both sets. The minority
// class of the training set is upsampled before training.
SupervisedDetector train_supervised_detector(const std::vector<DetectorSample>& train,
                                             const std::vector<DetectorSample>& test,
                                             const DetectorRecipe& recipe, std::uint64_t seed,
                                             DetectorMetrics* test_metrics = nullptr);

}  // namespace jekyll::defense
