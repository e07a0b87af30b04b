#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "jekyll/core/error.hpp"
#include "jekyll/core/rng.hpp"
#include "jekyll/defense/defense.hpp"

namespace jekyll::defense {

using nlohmann::json;

const char* to_string(DetectorKind kind) {
  return kind == DetectorKind::blind_csd_svm ? "blind_csd_svm" : "supervised_mesonet";
}

const char* to_string(Verdict v) { return v == Verdict::fake ? "fake" : "real"; }

std::vector<std::vector<double>> csd_planes(const ImageTensor& rgb) {
  if (rgb.channels() != 3)
    throw UnsupportedInput("colour statistics need an RGB image; grayscale is not supported");
  const int h = rgb.height(), w = rgb.width();
  std::vector<std::vector<double>> planes(kCsdChannels, std::vector<double>(static_cast<std::size_t>(h) * w));
  // Same definitions as OpenCV's float RGB2HSV / RGB2YCrCb, evaluated in double.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double r = 0.5 * (rgb.at(0, y, x) + 1.0), g = 0.5 * (rgb.at(1, y, x) + 1.0),
                   b = 0.5 * (rgb.at(2, y, x) + 1.0);
      const double v = std::max({r, g, b}), spread = v - std::min({r, g, b});
      double hue = 0.0;
      if (spread > 0.0) {
        if (v == r)
          hue = 60.0 * (g - b) / spread;
        else if (v == g)
          hue = 120.0 + 60.0 * (b - r) / spread;
        else
          hue = 240.0 + 60.0 * (r - g) / spread;
        if (hue < 0.0) hue += 360.0;
      }
      const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
      planes[0][i] = hue / 360.0;
      planes[1][i] = v > 0.0 ? spread / v : 0.0;
      planes[2][i] = v;
      planes[3][i] = (b - luma) * 0.564 + 0.5;
      planes[4][i] = (r - luma) * 0.713 + 0.5;
    }
  }
  return planes;
}

std::vector<double> csd_features(const ImageTensor& rgb) {
  const auto planes = csd_planes(rgb);
  std::vector<double> out;
  out.reserve(kCsdDimension);
  for (const auto& p : planes) {
    std::vector<double> hist(kCsdBins, 0.0);
    double sum = 0.0, sq = 0.0;
    for (double v : p) {
      const double u = std::clamp(v, 0.0, 1.0);
      hist[std::min(kCsdBins - 1, static_cast<int>(u * kCsdBins))] += 1.0;
      sum += u;
      sq += u * u;
    }
    const double n = static_cast<double>(p.size());
    for (double& b : hist) b /= n;
    const double mean = sum / n;
    out.insert(out.end(), hist.begin(), hist.end());
    out.push_back(mean);
    out.push_back(std::max(0.0, sq / n - mean * mean));
  }
  return out;
}

void BlindDetectorConfig::validate() const {
  if (!(nu > 0.0 && nu <= 1.0)) throw ValidationError("nu must lie in (0, 1]");
  if (!(gamma > 0.0)) throw ValidationError("gamma must be positive");
}

namespace {

double rbf(const std::vector<double>& a, const std::vector<double>& b, double gamma) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double t = a[k] - b[k];
    d += t * t;
  }
  return std::exp(-gamma * d);
}

}  // namespace

void OneClassSvm::fit(const std::vector<std::vector<double>>& samples, double nu, double gamma,
                      double tolerance, long max_iterations) {
  const std::size_t n = samples.size();
  if (n == 0) throw ValidationError("one-class SVM needs training samples");
  if (!(nu > 0.0 && nu <= 1.0)) throw ValidationError("nu must lie in (0, 1]");
  dimension_ = samples.front().size();
  for (const auto& s : samples)
    if (s.size() != dimension_) throw ValidationError("training samples differ in dimension");
  gamma_ = gamma;
  tolerance_ = tolerance;

  std::vector<double> q(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) q[i * n + j] = q[j * n + i] = rbf(samples[i], samples[j], gamma);

  // Box 0 <= a_i <= 1 with sum a_i = nu * n; start from the feasible corner.
  const double total = nu * static_cast<double>(n);
  std::vector<double> alpha(n, 0.0);
  double left = total;
  for (std::size_t i = 0; i < n && left > 0.0; ++i) {
    alpha[i] = std::min(1.0, left);
    left -= alpha[i];
  }
  std::vector<double> grad(n, 0.0);  // Q alpha
  for (std::size_t i = 0; i < n; ++i)
    if (alpha[i] > 0.0)
      for (std::size_t t = 0; t < n; ++t) grad[t] += alpha[i] * q[i * n + t];

  converged_ = false;
  for (iterations_ = 0; iterations_ < max_iterations; ++iterations_) {
    // Maximal violating pair: i can grow (a < 1) with the smallest gradient,
    // j can shrink (a > 0) with the largest.
    std::size_t i = n, j = n;
    double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
    for (std::size_t t = 0; t < n; ++t) {
      if (alpha[t] < 1.0 && grad[t] < gmin) gmin = grad[t], i = t;
      if (alpha[t] > 0.0 && grad[t] > gmax) gmax = grad[t], j = t;
    }
    if (i == n || j == n || gmax - gmin < tolerance) {
      converged_ = true;
      break;
    }
    const double eta = std::max(q[i * n + i] + q[j * n + j] - 2.0 * q[i * n + j], 1e-12);
    double delta = (gmax - gmin) / eta;
    delta = std::min({delta, 1.0 - alpha[i], alpha[j]});
    alpha[i] += delta;
    alpha[j] -= delta;
    for (std::size_t t = 0; t < n; ++t) grad[t] += delta * (q[i * n + t] - q[j * n + t]);
  }

  // rho is the gradient shared by free vectors; otherwise the midpoint of the bounds.
  double free_sum = 0.0, ub = std::numeric_limits<double>::infinity(), lb = -ub;
  int free_count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0 && alpha[t] < 1.0) {
      free_sum += grad[t];
      ++free_count;
    } else if (alpha[t] >= 1.0) {
      lb = std::max(lb, grad[t]);
    } else {
      ub = std::min(ub, grad[t]);
    }
  }
  rho_ = free_count > 0 ? free_sum / free_count : 0.5 * (ub + lb);

  support_.clear();
  coef_.clear();
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0) {
      support_.push_back(samples[t]);
      coef_.push_back(alpha[t]);
    }
  }
}

double OneClassSvm::decision(const std::vector<double>& x) const {
  if (x.size() != dimension_)
    throw ValidationError("feature dimension " + std::to_string(x.size()) + " does not match " +
                          std::to_string(dimension_));
  double s = 0.0;
  for (std::size_t k = 0; k < support_.size(); ++k) s += coef_[k] * rbf(support_[k], x, gamma_);
  return s - rho_;
}

BlindDetector BlindDetector::train(const std::vector<ImageTensor>& real_images,
                                   const BlindDetectorConfig& config) {
  std::vector<std::vector<double>> feats;
  feats.reserve(real_images.size());
  for (const auto& img : real_images) feats.push_back(csd_features(img));
  return train_on_features(feats, config);
}

BlindDetector BlindDetector::train_on_features(const std::vector<std::vector<double>>& real_features,
                                               const BlindDetectorConfig& config) {
  config.validate();
  if (real_features.size() < 20) throw ValidationError("blind detector needs at least 20 real images");
  BlindDetector d;
  d.config_ = config;
  const std::size_t dim = real_features.front().size();
  d.lo_.assign(dim, std::numeric_limits<double>::infinity());
  d.hi_.assign(dim, -std::numeric_limits<double>::infinity());
  for (const auto& f : real_features) {
    if (f.size() != dim) throw ValidationError("feature vectors differ in dimension");
    for (std::size_t k = 0; k < dim; ++k) {
      if (!std::isfinite(f[k])) throw ValidationError("non-finite feature value");
      d.lo_[k] = std::min(d.lo_[k], f[k]);
      d.hi_[k] = std::max(d.hi_[k], f[k]);
    }
  }
  bool any_spread = false;
  for (std::size_t k = 0; k < dim; ++k) any_spread |= d.hi_[k] > d.lo_[k];
  if (!any_spread) throw ValidationError("degenerate features: zero variance in every dimension");

  for (const auto& f : real_features) d.training_scaled_.push_back(d.scaled(f));
  d.svm_.fit(d.training_scaled_, config.nu, config.gamma);
  d.training_size_ = real_features.size();
  std::size_t flagged = 0;
  for (const auto& f : d.training_scaled_) flagged += d.svm_.outside(f);
  d.training_anomaly_fraction_ = static_cast<double>(flagged) / static_cast<double>(d.training_size_);
  return d;
}

std::vector<double> BlindDetector::scaled(const std::vector<double>& features) const {
  if (features.size() != lo_.size())
    throw ValidationError("feature dimension " + std::to_string(features.size()) +
                          " does not match the detector's " + std::to_string(lo_.size()));
  std::vector<double> out(features.size());
  for (std::size_t k = 0; k < features.size(); ++k) {
    const double span = hi_[k] - lo_[k];
    out[k] = span > 0.0 ? (features[k] - lo_[k]) / span : 0.0;
  }
  return out;
}

double BlindDetector::score(const std::vector<double>& features) const {
  return svm_.decision(scaled(features));
}

Verdict BlindDetector::detect_features(const std::vector<double>& features) const {
  return score(features) < -svm_.tolerance() ? Verdict::fake : Verdict::real;
}

Verdict blind_detect(const BlindDetector& model, const ImageTensor& image) {
  return model.detect_features(csd_features(image));
}

void BlindDetector::save(const std::filesystem::path& path) const {
  json j{{"kind", to_string(DetectorKind::blind_csd_svm)},
         {"nu", config_.nu},
         {"gamma", config_.gamma},
         {"lo", lo_},
         {"hi", hi_},
         {"training", training_scaled_},
         {"training_anomaly_fraction", training_anomaly_fraction_}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump() << '\n';
}

BlindDetector BlindDetector::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    const json j = json::parse(is);
    if (j.at("kind").get<std::string>() != to_string(DetectorKind::blind_csd_svm))
      throw ValidationError(path.string() + " is not a blind detector");
    BlindDetector d;
    d.config_ = {j.at("nu").get<double>(), j.at("gamma").get<double>()};
    d.lo_ = j.at("lo").get<std::vector<double>>();
    d.hi_ = j.at("hi").get<std::vector<double>>();
    d.training_scaled_ = j.at("training").get<std::vector<std::vector<double>>>();
    // Refitting on the stored scaled features reproduces the solver's output exactly.
    d.svm_.fit(d.training_scaled_, d.config_.nu, d.config_.gamma);
    d.training_size_ = d.training_scaled_.size();
    d.training_anomaly_fraction_ = j.at("training_anomaly_fraction").get<double>();
    return d;
  } catch (const json::exception& e) {
    throw ValidationError("corrupt blind detector " + path.string() + ": " + e.what());
  }
}

std::vector<CrossValidationResult> cross_validate_blind(
    const std::vector<std::vector<double>>& real_features,
    const std::vector<BlindDetectorConfig>& candidates, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  const std::size_t n = real_features.size();
  if (n < static_cast<std::size_t>(folds)) throw ValidationError("fewer samples than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, "cv"));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<CrossValidationResult> out;
  for (const auto& cfg : candidates) {
    double rate = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<std::vector<double>> train, held;
      for (std::size_t k = 0; k < n; ++k)
        (static_cast<int>(k % folds) == f ? held : train).push_back(real_features[order[k]]);
      const auto det = BlindDetector::train_on_features(train, cfg);
      std::size_t flagged = 0;
      for (const auto& h : held) flagged += det.detect_features(h) == Verdict::fake;
      rate += static_cast<double>(flagged) / static_cast<double>(held.size());
    }
    out.push_back({cfg, rate / folds});
  }
  return out;
}

BlindDetectorConfig select_blind_config(const std::vector<CrossValidationResult>& results) {
  if (results.empty()) throw ValidationError("no cross-validation results");
  const auto best = std::min_element(results.begin(), results.end(), [](const auto& a, const auto& b) {
    return std::abs(a.held_out_false_alarm - a.config.nu) <
           std::abs(b.held_out_false_alarm - b.config.nu);
  });
  return best->config;
}

}  // namespace jekyll::defense
