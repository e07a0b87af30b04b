#include "jekyll/ingest/ingest.hpp"

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/core/rng.hpp"

namespace jekyll::ingest {

using nlohmann::json;

ManifestInvalid::ManifestInvalid(std::vector<Violation> violations)
    : ValidationError("manifest failed validation:\n" + describe(violations)),
      violations_(std::move(violations)) {}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path().string();
  std::string line;
  int lineno = 0;
  bool header = false;
  std::map<std::string, std::size_t> index;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) throw ParseError(lineno, "expected a JSON object");
    try {
      if (!header) {
        if (!j.contains("vocabulary") || !j.contains("resolution"))
          throw ParseError(lineno, "missing header with vocabulary and resolution");
        m.condition_vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
        m.image_resolution = j.at("resolution").get<int>();
        header = true;
        continue;
      }
      const auto id = j.at("patient_id").get<std::string>();
      ImageRecord rec{j.at("path").get<std::string>(), j.at("label").get<std::string>()};
      auto [it, fresh] = index.emplace(id, m.records.size());
      if (fresh) m.records.push_back({id, {}});
      m.records[it->second].images.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw ParseError(lineno, std::string("bad field: ") + e.what());
    }
  }
  if (!header) throw ParseError(std::max(lineno, 1), "missing header");
  auto violations = validate_manifest(m);
  if (!violations.empty()) throw ManifestInvalid(std::move(violations));
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << json{{"vocabulary", manifest.condition_vocabulary},
             {"resolution", manifest.image_resolution}}
            .dump()
     << '\n';
  for (const auto& r : manifest.records)
    for (const auto& img : r.images)
      os << json{{"path", img.path}, {"patient_id", r.patient_id}, {"label", img.label}}.dump()
         << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

PartitionPair partition_patients(const DatasetManifest& manifest, const PartitionOptions& options,
                                 std::uint64_t seed) {
  if (!(options.eval_fraction > 0.0 && options.eval_fraction < 1.0))
    throw ValidationError("eval_fraction must lie in (0, 1)");
  const int n = static_cast<int>(manifest.records.size());
  if (n < 2) throw ValidationError("need at least 2 patients to partition");
  const int n_eval = std::clamp(static_cast<int>(std::lround(options.eval_fraction * n)), 1, n - 1);

  std::vector<std::string> qualifying, others;
  for (const auto& r : manifest.records) {
    if (static_cast<int>(r.images.size()) >= options.min_images_for_identity)
      qualifying.push_back(r.patient_id);
    else
      others.push_back(r.patient_id);
  }
  const int needed = std::min(n_eval, options.min_identity_patients);
  if (static_cast<int>(qualifying.size()) < needed)
    throw ValidationError("only " + std::to_string(qualifying.size()) + " patients have >= " +
                          std::to_string(options.min_images_for_identity) + " images; " +
                          std::to_string(needed) + " required for the evaluation partition");

  std::mt19937_64 rng(mix_seed(seed, "partition"));
  std::shuffle(qualifying.begin(), qualifying.end(), rng);
  PartitionPair out;
  out.attack.name = PartitionName::attack;
  out.evaluation.name = PartitionName::evaluation;
  const int from_qualifying = std::min<int>(n_eval, static_cast<int>(qualifying.size()));
  for (int i = 0; i < from_qualifying; ++i) out.evaluation.patient_ids.insert(qualifying[i]);
  // Remaining evaluation slots are filled by a seeded draw over everyone left.
  std::vector<std::string> rest(others);
  rest.insert(rest.end(), qualifying.begin() + from_qualifying, qualifying.end());
  std::sort(rest.begin(), rest.end());
  std::shuffle(rest.begin(), rest.end(), rng);
  const int extra = n_eval - from_qualifying;
  for (int i = 0; i < static_cast<int>(rest.size()); ++i)
    (i < extra ? out.evaluation : out.attack).patient_ids.insert(rest[i]);

  assert_disjoint(out.attack, out.evaluation);
  if (out.attack.patient_ids.size() + out.evaluation.patient_ids.size() !=
      static_cast<std::size_t>(n))
    throw std::logic_error("partition does not cover every patient");
  return out;
}

void save_partition(const Partition& partition, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << json{{"name", to_string(partition.name)}, {"patient_ids", partition.patient_ids}}.dump(2)
     << '\n';
}

Partition load_partition(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    const json j = json::parse(is);
    Partition p;
    const auto name = j.at("name").get<std::string>();
    if (name == "attack")
      p.name = PartitionName::attack;
    else if (name == "evaluation")
      p.name = PartitionName::evaluation;
    else
      throw ValidationError("unknown partition name '" + name + "'");
    p.patient_ids = j.at("patient_ids").get<std::set<std::string>>();
    return p;
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("bad partition file: ") + e.what());
  }
}

std::vector<LoadedImage> load_images(const DatasetManifest& manifest,
                                     const std::set<std::string>& patients) {
  std::vector<LoadedImage> out;
  for (const auto& r : manifest.records) {
    if (!patients.count(r.patient_id)) continue;
    for (const auto& img : r.images) {
      std::filesystem::path p(img.path);
      if (p.is_relative() && !manifest.root.empty()) p = std::filesystem::path(manifest.root) / p;
      ImageTensor t = load_image(p);
      if (t.height() != manifest.image_resolution || t.width() != manifest.image_resolution)
        t = resize_image(t, manifest.image_resolution);
      out.push_back({r.patient_id, img.path, img.label, std::move(t)});
    }
  }
  return out;
}

VictimSet build_victim_set(const std::vector<LoadedImage>& candidates,
                           const classifiers::ClassifierHandle& disease_model,
                           const classifiers::ClassifierHandle& identity_model) {
  using classifiers::ClassifierRole;
  if (disease_model.role() != ClassifierRole::evaluation_disease)
    throw ValidationError("victim screening needs the evaluation disease classifier");
  if (identity_model.role() != ClassifierRole::evaluation_identity)
    throw ValidationError("victim screening needs the evaluation identity classifier");
  std::vector<ImageTensor> images;
  images.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.label != kNonDiseaseLabel)
      throw ValidationError("victim candidate " + c.path + " is not labeled non-disease");
    images.push_back(c.image);
  }
  const auto p = classifiers::predict_disease(disease_model, images);
  const auto who = classifiers::predict_identity(identity_model, images);
  VictimSet out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (p[i] < 0.5 && who[i].patient_id == candidates[i].patient_id)
      out.entries.push_back({candidates[i].patient_id, candidates[i].path, candidates[i].image});
  }
  if (out.entries.empty())
    throw EmptyVictimSet("no candidate passed both evaluation screens (" +
                         std::to_string(candidates.size()) + " screened)");
  return out;
}

void save_victim_set(const VictimSet& victims, const std::filesystem::path& path) {
  json entries = json::array();
  for (const auto& v : victims.entries)
    entries.push_back({{"patient_id", v.patient_id}, {"path", v.path}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << json{{"source_partition", to_string(victims.source_partition)}, {"entries", entries}}.dump(2)
     << '\n';
}

void AugmentationSpec::validate() const {
  if (target_count < 1) throw ValidationError("target_count must be >= 1");
  if (!(rotation_range > 0.0 && rotation_range <= 180.0))
    throw ValidationError("rotation_range must lie in (0, 180]");
  if (ops.count(AugmentOp::gaussian_blur) && !(blur_sigma > 0.0))
    throw ValidationError("blur_sigma must be > 0");
}

namespace {

cv::Mat to_mat(const ImageTensor& img, int c) {
  cv::Mat m(img.height(), img.width(), CV_32FC1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) m.at<float>(y, x) = img.at(c, y, x);
  return m;
}

}  // namespace

std::vector<ImageTensor> augment(const ImageTensor& image, const AugmentationSpec& spec,
                                 std::uint64_t seed) {
  spec.validate();
  std::vector<ImageTensor> out{image};
  const bool rotate = spec.ops.count(AugmentOp::random_rotation) > 0;
  const bool blur = spec.ops.count(AugmentOp::gaussian_blur) > 0;
  for (int i = 1; i < spec.target_count; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const double angle =
        std::uniform_real_distribution<double>(-spec.rotation_range, spec.rotation_range)(rng);
    // With both ops enabled each copy is rotated and blurred half of the time.
    const bool do_blur = blur && (!rotate || std::bernoulli_distribution(0.5)(rng));
    std::vector<float> values;
    values.reserve(image.size());
    for (int c = 0; c < image.channels(); ++c) {
      cv::Mat m = to_mat(image, c);
      if (rotate) {
        const cv::Point2f centre(0.5f * (image.width() - 1), 0.5f * (image.height() - 1));
        const cv::Mat rot = cv::getRotationMatrix2D(centre, angle, 1.0);
        cv::warpAffine(m, m, rot, m.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
      }
      if (do_blur) cv::GaussianBlur(m, m, cv::Size(0, 0), spec.blur_sigma, spec.blur_sigma,
                                    cv::BORDER_REFLECT_101);
      for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x)
          values.push_back(std::clamp(m.at<float>(y, x), -1.0f, 1.0f));
    }
    out.emplace_back(image.height(), image.width(), image.channels(), std::move(values));
  }
  return out;
}

}  // namespace jekyll::ingest
