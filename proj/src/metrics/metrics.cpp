#include "jekyll/metrics/metrics.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/core/error.hpp"
#include "jekyll/core/rng.hpp"

namespace jekyll::metrics {

using nlohmann::json;

InjectionResult injection_rate(const classifiers::ClassifierHandle& eval_disease_model,
                               const std::vector<ImageTensor>& fakes, double threshold) {
  if (fakes.empty()) throw ValidationError("injection_rate: no fakes");
  InjectionResult r;
  r.probabilities = classifiers::predict_disease(eval_disease_model, fakes);
  std::size_t hits = 0;
  for (double p : r.probabilities) {
    r.diseased.push_back(p >= threshold);
    hits += p >= threshold;
  }
  r.rate = 100.0 * static_cast<double>(hits) / static_cast<double>(fakes.size());
  return r;
}

IdentityResult identity_rate(const classifiers::ClassifierHandle& eval_identity_model,
                             const std::vector<ImageTensor>& fakes,
                             const std::vector<std::string>& true_patient_ids) {
  if (fakes.empty()) throw ValidationError("identity_rate: no fakes");
  if (fakes.size() != true_patient_ids.size())
    throw ValidationError("identity_rate: one patient id per fake is required");
  for (const auto& id : true_patient_ids)
    if (eval_identity_model.class_index(id) < 0)
      throw ValidationError("identity_rate: patient '" + id + "' unknown to the identity model");
  IdentityResult r;
  std::size_t hits = 0;
  const auto preds = classifiers::predict_identity(eval_identity_model, fakes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    r.predicted.push_back(preds[i].patient_id);
    r.probabilities.push_back(preds[i].probability);
    const bool ok = preds[i].patient_id == true_patient_ids[i];
    r.correct.push_back(ok);
    hits += ok;
  }
  r.rate = 100.0 * static_cast<double>(hits) / static_cast<double>(fakes.size());
  return r;
}

namespace {

cv::Mat channel_unit(const ImageTensor& img, int c) {
  cv::Mat m(img.height(), img.width(), CV_64FC1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) m.at<double>(y, x) = 0.5 * (img.at(c, y, x) + 1.0);
  return m;
}

cv::Mat gaussian_window(int size, double sigma) {
  cv::Mat g = cv::getGaussianKernel(size, sigma, CV_64F);
  return g * g.t();
}

cv::Mat filtered(const cv::Mat& m, const cv::Mat& window) {
  cv::Mat out;
  cv::filter2D(m, out, CV_64F, window, cv::Point(-1, -1), 0.0, cv::BORDER_REFLECT);
  return out;
}

// Returns {mean contrast-structure term, mean SSIM} at one scale.
std::pair<double, double> ssim_terms(const cv::Mat& a, const cv::Mat& b, const cv::Mat& window,
                                     double c1, double c2) {
  const cv::Mat mu_a = filtered(a, window), mu_b = filtered(b, window);
  const cv::Mat mu_aa = mu_a.mul(mu_a), mu_bb = mu_b.mul(mu_b), mu_ab = mu_a.mul(mu_b);
  const cv::Mat var_a = filtered(a.mul(a), window) - mu_aa;
  const cv::Mat var_b = filtered(b.mul(b), window) - mu_bb;
  const cv::Mat cov = filtered(a.mul(b), window) - mu_ab;
  cv::Mat cs_map, l_map;
  cv::divide(2.0 * cov + c2, var_a + var_b + c2, cs_map);
  cv::divide(2.0 * mu_ab + c1, mu_aa + mu_bb + c1, l_map);
  return {cv::mean(cs_map)[0], cv::mean(l_map.mul(cs_map))[0]};
}

cv::Mat halve(const cv::Mat& m) {
  cv::Mat out(m.rows / 2, m.cols / 2, CV_64FC1);
  for (int y = 0; y < out.rows; ++y)
    for (int x = 0; x < out.cols; ++x)
      out.at<double>(y, x) = 0.25 * (m.at<double>(2 * y, 2 * x) + m.at<double>(2 * y, 2 * x + 1) +
                                     m.at<double>(2 * y + 1, 2 * x) +
                                     m.at<double>(2 * y + 1, 2 * x + 1));
  return out;
}

}  // namespace

double mssim(const ImageTensor& a, const ImageTensor& b, const MssimOptions& options) {
  if (!a.same_shape(b)) throw ValidationError("mssim: images differ in shape");
  if (std::min(a.height(), a.width()) < kMssimMinSide)
    throw ValidationError("mssim: images must be at least " + std::to_string(kMssimMinSide) +
                          " pixels on each side");
  const double c1 = options.k1 * options.k1, c2 = options.k2 * options.k2;  // data range 1
  const cv::Mat window = gaussian_window(options.window, options.sigma);
  const std::size_t scales = options.weights.size();
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    cv::Mat x = channel_unit(a, c), y = channel_unit(b, c);
    double score = 1.0;
    for (std::size_t s = 0; s < scales; ++s) {
      const auto [cs, ssim] = ssim_terms(x, y, window, c1, c2);
      // Negative terms carry no similarity; clamping keeps fractional powers real.
      const double term = std::max(0.0, s + 1 == scales ? ssim : cs);
      score *= std::pow(term, options.weights[s]);
      if (s + 1 < scales) {
        x = halve(x);
        y = halve(y);
      }
    }
    total += score;
  }
  return std::clamp(total / a.channels(), 0.0, 1.0);
}

CohortScores mssim_cohort(const std::vector<ImageTensor>& real_a,
                          const std::vector<ImageTensor>& real_b,
                          const std::vector<ImageTensor>& fakes, std::uint64_t pairing_seed,
                          int pairs) {
  if (real_a.empty() || real_b.empty() || fakes.empty())
    throw ValidationError("mssim_cohort: every image set must be non-empty");
  const int n = pairs > 0 ? pairs : static_cast<int>(std::min(real_a.size(), real_b.size()));
  std::mt19937_64 rng(mix_seed(pairing_seed, "mssim_pairs"));
  const std::size_t span_other = std::max(real_b.size(), fakes.size());
  std::uniform_int_distribution<std::size_t> pick_a(0, real_a.size() - 1), pick_o(0, span_other - 1);
  CohortScores out;
  out.pairs = n;
  for (int k = 0; k < n; ++k) {
    const std::size_t i = pick_a(rng), j = pick_o(rng);
    out.real_real += mssim(real_a[i], real_b[j % real_b.size()]);
    out.real_fake += mssim(real_a[i], fakes[j % fakes.size()]);
  }
  out.real_real /= n;
  out.real_fake /= n;
  return out;
}

namespace {

json metric_json(const Metric& m) {
  if (m.value) return *m.value;
  return json{{"value", nullptr}, {"reason", m.missing_reason}};
}

Metric metric_from(const json& j) {
  if (j.is_number()) return Metric::of(j.get<double>());
  return Metric::missing(j.at("reason").get<std::string>());
}

}  // namespace

json EvaluationReport::to_json() const {
  json images = json::array();
  for (const auto& p : per_image)
    images.push_back({{"image_ref", p.image_ref},
                      {"patient_id", p.patient_id},
                      {"disease_prob", p.disease_prob},
                      {"predicted_patient", p.predicted_patient},
                      {"identity_prob", p.identity_prob},
                      {"verdicts", {{"diseased", p.diseased}, {"identity_correct", p.identity_correct}}}});
  return {{"schema", "jekyll.evaluation.v1"},
          {"r_d", metric_json(r_d)},
          {"r_i", metric_json(r_i)},
          {"r_d_high_confidence", metric_json(r_d_high_confidence)},
          {"mssim_real_real", metric_json(mssim_real_real)},
          {"mssim_real_fake", metric_json(mssim_real_fake)},
          {"mssim_pairs", mssim_pairs},
          {"per_image", images},
          {"seed", seed},
          {"config_hash", config_hash},
          {"labels", labels}};
}

EvaluationReport EvaluationReport::from_json(const json& j) {
  const auto problems = validate_report_json(j);
  if (!problems.empty()) throw ValidationError("invalid report: " + problems.front());
  EvaluationReport r;
  r.r_d = metric_from(j.at("r_d"));
  r.r_i = metric_from(j.at("r_i"));
  r.r_d_high_confidence = metric_from(j.at("r_d_high_confidence"));
  r.mssim_real_real = metric_from(j.at("mssim_real_real"));
  r.mssim_real_fake = metric_from(j.at("mssim_real_fake"));
  r.mssim_pairs = j.at("mssim_pairs").get<int>();
  for (const auto& p : j.at("per_image")) {
    PerImage e;
    e.image_ref = p.at("image_ref").get<std::string>();
    e.patient_id = p.at("patient_id").get<std::string>();
    e.disease_prob = p.at("disease_prob").get<double>();
    e.predicted_patient = p.at("predicted_patient").get<std::string>();
    e.identity_prob = p.at("identity_prob").get<double>();
    e.diseased = p.at("verdicts").at("diseased").get<bool>();
    e.identity_correct = p.at("verdicts").at("identity_correct").get<bool>();
    r.per_image.push_back(std::move(e));
  }
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.labels = j.at("labels").get<std::map<std::string, std::string>>();
  return r;
}

std::vector<std::string> validate_report_json(const json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) return {"report is not an object"};
  if (j.value("schema", "") != "jekyll.evaluation.v1") problems.push_back("unknown schema tag");
  for (const char* key : {"r_d", "r_i", "r_d_high_confidence"}) {
    if (!j.contains(key)) {
      problems.push_back(std::string("missing ") + key);
      continue;
    }
    const auto& v = j[key];
    if (v.is_number()) {
      if (v.get<double>() < 0.0 || v.get<double>() > 100.0)
        problems.push_back(std::string(key) + " outside [0, 100]");
    } else if (!(v.is_object() && v.contains("value") && v["value"].is_null() &&
                 v.contains("reason") && v["reason"].is_string())) {
      problems.push_back(std::string(key) + " must be a number or {value: null, reason}");
    }
  }
  for (const char* key : {"mssim_real_real", "mssim_real_fake"}) {
    if (!j.contains(key)) {
      problems.push_back(std::string("missing ") + key);
      continue;
    }
    const auto& v = j[key];
    if (v.is_number()) {
      if (v.get<double>() < 0.0 || v.get<double>() > 1.0)
        problems.push_back(std::string(key) + " outside [0, 1]");
    } else if (!(v.is_object() && v.contains("value") && v["value"].is_null())) {
      problems.push_back(std::string(key) + " must be a number or {value: null, reason}");
    }
  }
  for (const char* key : {"mssim_pairs", "per_image", "seed", "config_hash", "labels"})
    if (!j.contains(key)) problems.push_back(std::string("missing ") + key);
  if (j.contains("per_image") && !j["per_image"].is_array())
    problems.push_back("per_image must be an array");
  return problems;
}

EvaluationReport assemble_report(const ReportInputs& in) {
  const std::size_t n = in.image_refs.size();
  if (in.patient_ids.size() != n) throw ValidationError("assemble_report: one patient id per image");
  if (in.injection && in.injection->probabilities.size() != n)
    throw ValidationError("assemble_report: injection verdict count mismatch");
  if (in.identity && in.identity->predicted.size() != n)
    throw ValidationError("assemble_report: identity verdict count mismatch");
  EvaluationReport r;
  r.seed = in.seed;
  r.config_hash = in.config_hash;
  r.labels = in.labels;
  std::size_t diseased = 0, confident = 0, correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    PerImage p;
    p.image_ref = in.image_refs[i];
    p.patient_id = in.patient_ids[i];
    if (in.injection) {
      p.disease_prob = in.injection->probabilities[i];
      p.diseased = in.injection->diseased[i];
      diseased += p.diseased;
      confident += p.disease_prob >= kHighConfidenceThreshold;
    }
    if (in.identity) {
      p.predicted_patient = in.identity->predicted[i];
      p.identity_prob = in.identity->probabilities[i];
      p.identity_correct = p.predicted_patient == p.patient_id;
      correct += p.identity_correct;
    }
    r.per_image.push_back(std::move(p));
  }
  const double denom = static_cast<double>(std::max<std::size_t>(n, 1));
  if (in.injection && n > 0) {
    r.r_d = Metric::of(100.0 * diseased / denom);
    r.r_d_high_confidence = Metric::of(100.0 * confident / denom);
  } else {
    r.r_d = Metric::missing(n == 0 ? "no fakes evaluated" : "disease evaluation not run");
    r.r_d_high_confidence = r.r_d;
  }
  if (in.identity && n > 0)
    r.r_i = Metric::of(100.0 * correct / denom);
  else
    r.r_i = Metric::missing(n == 0 ? "no fakes evaluated" : "identity evaluation not run");
  if (in.cohort) {
    r.mssim_real_real = Metric::of(in.cohort->real_real);
    r.mssim_real_fake = Metric::of(in.cohort->real_fake);
    r.mssim_pairs = in.cohort->pairs;
  } else {
    r.mssim_real_real = Metric::missing("MSSIM cohort not computed");
    r.mssim_real_fake = r.mssim_real_real;
  }
  return r;
}

void write_report(const EvaluationReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write report " + path.string());
  os << report.to_json().dump(2) << '\n';
  if (!os) throw IoError("write failed for report " + path.string());
}

EvaluationReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read report " + path.string());
  try {
    return EvaluationReport::from_json(json::parse(is));
  } catch (const json::exception& e) {
    throw ValidationError("report " + path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace jekyll::metrics
