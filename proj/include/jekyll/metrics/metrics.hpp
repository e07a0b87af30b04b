#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jekyll/core/image.hpp"

namespace jekyll::classifiers {
class ClassifierHandle;
}

namespace jekyll::metrics {

inline constexpr double kDiseaseThreshold = 0.5;
inline constexpr double kHighConfidenceThreshold = 0.8;

struct InjectionResult {
  double rate = 0.0;  // percent
  std::vector<double> probabilities;
  std::vector<bool> diseased;
};

// Percentage of fakes the evaluation disease model scores >= threshold.
InjectionResult injection_rate(const classifiers::ClassifierHandle& eval_disease_model,
                               const std::vector<ImageTensor>& fakes,
                               double threshold = kDiseaseThreshold);

struct IdentityResult {
  double rate = 0.0;  // percent
  std::vector<std::string> predicted;
  std::vector<double> probabilities;
  std::vector<bool> correct;
};

// Percentage of fakes assigned to their victim's patient id.
IdentityResult identity_rate(const classifiers::ClassifierHandle& eval_identity_model,
                             const std::vector<ImageTensor>& fakes,
                             const std::vector<std::string>& true_patient_ids);

struct MssimOptions {
  std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Smallest side accepted: each of the five scales must keep at least 2 pixels.
inline constexpr int kMssimMinSide = 32;

// Multi-scale SSIM on images mapped to [0, 1]; colour images average the
// per-channel scores.
double mssim(const ImageTensor& a, const ImageTensor& b, const MssimOptions& options = {});

struct CohortScores {
  double real_real = 0.0;
  double real_fake = 0.0;
  int pairs = 0;
};

// Mean MSSIM over seeded random pairs realA x realB and realA x fakes. The
// same draws index realB and fakes, so fakes == realB gives equal scores.
CohortScores mssim_cohort(const std::vector<ImageTensor>& real_a,
                          const std::vector<ImageTensor>& real_b,
                          const std::vector<ImageTensor>& fakes, std::uint64_t pairing_seed,
                          int pairs = 0);

struct PerImage {
  std::string image_ref;
  std::string patient_id;
  double disease_prob = 0.0;
  std::string predicted_patient;
  double identity_prob = 0.0;
  bool diseased = false;
  bool identity_correct = false;
};

/// A metric value or the reason it is missing.
struct Metric {
  std::optional<double> value;
  std::string missing_reason;

  static Metric of(double v) { return {v, {}}; }
  static Metric missing(std::string why) { return {std::nullopt, std::move(why)}; }
};

struct EvaluationReport {
  Metric r_d;
  Metric r_i;
  Metric r_d_high_confidence;  // share of fakes at probability >= 0.8
  Metric mssim_real_real;
  Metric mssim_real_fake;
  int mssim_pairs = 0;
  std::vector<PerImage> per_image;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, std::string> labels;  // free-form run annotations

  nlohmann::json to_json() const;
  static EvaluationReport from_json(const nlohmann::json& j);
};

struct ReportInputs {
  std::vector<std::string> image_refs;
  std::vector<std::string> patient_ids;
  std::optional<InjectionResult> injection;
  std::optional<IdentityResult> identity;
  std::optional<CohortScores> cohort;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::map<std::string, std::string> labels;
};

// Builds the report; aggregates are recomputed from the per-image verdicts.
EvaluationReport assemble_report(const ReportInputs& inputs);
void write_report(const EvaluationReport& report, const std::filesystem::path& path);
EvaluationReport read_report(const std::filesystem::path& path);

// Checks the report JSON shape; returns a list of problems (empty when valid).
std::vector<std::string> validate_report_json(const nlohmann::json& j);

}  // namespace jekyll::metrics
