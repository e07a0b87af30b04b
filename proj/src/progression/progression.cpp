#include "jekyll/progression/progression.hpp"

#include <algorithm>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/core/error.hpp"
#include "jekyll/translator/training.hpp"

namespace jekyll::progression {

void InterpolationSpec::validate() const {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0 && alphas[i] <= 1.0)) throw ValidationError("alpha outside [0, 1]");
    if (i > 0 && alphas[i] < alphas[i - 1]) throw ValidationError("alphas must be ascending");
  }
  if (mask)
    for (float v : mask->values())
      if (v < 0.0f) throw ValidationError("mask values must lie in [0, 1]");
}

ImageTensor interpolate_stage(const ImageTensor& nd, const ImageTensor& d, double alpha) {
  if (!nd.same_shape(d)) throw ValidationError("interpolate_stage: shape mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("interpolate_stage: alpha outside [0, 1]");
  if (alpha == 0.0) return nd;
  if (alpha == 1.0) return d;
  std::vector<float> out(nd.size());
  const auto a = nd.values(), b = d.values();
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(static_cast<float>(alpha * b[i] + (1.0 - alpha) * a[i]), -1.0f, 1.0f);
  return ImageTensor(nd.height(), nd.width(), nd.channels(), std::move(out));
}

ImageTensor masked_interpolate(const ImageTensor& nd, const ImageTensor& fake,
                               const ImageTensor& mask) {
  if (!nd.same_shape(fake)) throw ValidationError("masked_interpolate: image shape mismatch");
  if (mask.height() != nd.height() || mask.width() != nd.width() ||
      (mask.channels() != 1 && mask.channels() != nd.channels()))
    throw ValidationError("masked_interpolate: mask shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(nd.height()) * nd.width();
  std::vector<float> out(nd.size());
  const auto a = nd.values(), b = fake.values(), m = mask.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float w = mask.channels() == 1 ? m[i % plane] : m[i];
    if (w < 0.0f) throw ValidationError("masked_interpolate: mask values must lie in [0, 1]");
    out[i] = std::clamp(w * a[i] + (1.0f - w) * b[i], -1.0f, 1.0f);
  }
  return ImageTensor(nd.height(), nd.width(), nd.channels(), std::move(out));
}

ImageTensor rectangle_mask(int height, int width, int x0, int y0, int x1, int y1) {
  std::vector<float> m(static_cast<std::size_t>(height) * width, 0.0f);
  for (int y = std::max(0, y0); y < std::min(height, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(width, x1); ++x)
      m[static_cast<std::size_t>(y) * width + x] = 1.0f;
  return ImageTensor(height, width, 1, std::move(m));
}

nlohmann::json ProgressionCurve::to_json() const {
  return {{"alphas", alphas}, {"probabilities", probabilities}, {"monotone", monotone}};
}

bool is_monotone(const std::vector<double>& values, double tolerance) {
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] < values[i - 1] - tolerance) return false;
  return true;
}

ProgressionCurve progression_curve(const classifiers::ClassifierHandle& eval_disease_model,
                                   const ImageTensor& nd, const ImageTensor& d,
                                   const std::vector<double>& alphas, double tolerance) {
  InterpolationSpec{alphas, std::nullopt}.validate();
  std::vector<ImageTensor> frames;
  frames.reserve(alphas.size());
  for (double a : alphas) frames.push_back(interpolate_stage(nd, d, a));
  ProgressionCurve curve;
  curve.alphas = alphas;
  if (!frames.empty()) curve.probabilities = classifiers::predict_disease(eval_disease_model, frames);
  curve.monotone = is_monotone(curve.probabilities, tolerance);
  return curve;
}

void StageRegistry::add(const std::string& stage_name,
                        std::shared_ptr<const translator::TranslationModel> model) {
  if (stage_name.empty()) throw ValidationError("stage name must be non-empty");
  if (!model) throw ValidationError("stage '" + stage_name + "' has no model");
  if (contains(stage_name)) throw ValidationError("stage '" + stage_name + "' registered twice");
  stages_.emplace_back(stage_name, std::move(model));
}

bool StageRegistry::contains(const std::string& stage_name) const {
  return std::any_of(stages_.begin(), stages_.end(),
                     [&](const auto& s) { return s.first == stage_name; });
}

const translator::TranslationModel& StageRegistry::model(const std::string& stage_name) const {
  for (const auto& [name, m] : stages_)
    if (name == stage_name) return *m;
  throw ValidationError("unknown stage '" + stage_name + "'");
}

std::vector<std::string> StageRegistry::stage_names() const {
  std::vector<std::string> out;
  for (const auto& s : stages_) out.push_back(s.first);
  return out;
}

ImageTensor stage_translate(const StageRegistry& registry, const ImageTensor& nd,
                            const std::string& stage_name) {
  return translator::translate(registry.model(stage_name), nd, translator::Direction::x_to_y);
}

}  // namespace jekyll::progression
