#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "jekyll/core/image.hpp"

namespace jekyll::classifiers {
class ClassifierHandle;
}
namespace jekyll::translator {
class TranslationModel;
}

namespace jekyll::progression {

inline constexpr double kMonotoneTolerance = 0.02;

struct InterpolationSpec {
  std::vector<double> alphas;
  std::optional<ImageTensor> mask;  // per-pixel weight in [0, 1]

  void validate() const;
};

// alpha * d + (1 - alpha) * nd, elementwise.
ImageTensor interpolate_stage(const ImageTensor& nd, const ImageTensor& d, double alpha);

// mask * nd + (1 - mask) * fake; a single-channel mask applies to every channel.
ImageTensor masked_interpolate(const ImageTensor& nd, const ImageTensor& fake,
                               const ImageTensor& mask);

// Mask that is 1 inside the half-open rectangle and 0 elsewhere.
ImageTensor rectangle_mask(int height, int width, int x0, int y0, int x1, int y1);

struct ProgressionCurve {
  std::vector<double> alphas;
  std::vector<double> probabilities;
  bool monotone = true;  // nondecreasing within the tolerance

  nlohmann::json to_json() const;
};

bool is_monotone(const std::vector<double>& values, double tolerance = kMonotoneTolerance);

ProgressionCurve progression_curve(const classifiers::ClassifierHandle& eval_disease_model,
                                   const ImageTensor& nd, const ImageTensor& d,
                                   const std::vector<double>& alphas,
                                   double tolerance = kMonotoneTolerance);

/// Stage models in user-declared order of increasing severity.
class StageRegistry {
 public:
  void add(const std::string& stage_name, std::shared_ptr<const translator::TranslationModel> model);
  std::size_t size() const { return stages_.size(); }
  bool contains(const std::string& stage_name) const;
  const translator::TranslationModel& model(const std::string& stage_name) const;
  std::vector<std::string> stage_names() const;

 private:
  std::vector<std::pair<std::string, std::shared_ptr<const translator::TranslationModel>>> stages_;
};

ImageTensor stage_translate(const StageRegistry& registry, const ImageTensor& nd,
                            const std::string& stage_name);

}  // namespace jekyll::progression
