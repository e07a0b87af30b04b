#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "jekyll/core/error.hpp"
#include "jekyll/core/image.hpp"
#include "jekyll/core/manifest.hpp"
#include "jekyll/core/types.hpp"

namespace jekyll::classifiers {
class ClassifierHandle;
}

namespace jekyll::ingest {

/// A parsed manifest that breaks one or more invariants.
class ManifestInvalid : public ValidationError {
 public:
  explicit ManifestInvalid(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

// JSONL: a header {"vocabulary": [...], "resolution": n} then one
// {"path", "patient_id", "label"} object per line. Relative paths resolve
// against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

struct PartitionPair {
  Partition attack;
  Partition evaluation;
};

struct PartitionOptions {
  double eval_fraction = 0.2;
  int min_images_for_identity = 10;
  // Fewer qualifying patients than this is an error rather than a smaller split.
  int min_identity_patients = 2;
};

PartitionPair partition_patients(const DatasetManifest& manifest, const PartitionOptions& options,
                                 std::uint64_t seed);

void save_partition(const Partition& partition, const std::filesystem::path& path);
Partition load_partition(const std::filesystem::path& path);

struct LoadedImage {
  std::string patient_id;
  std::string path;  // as written in the manifest
  std::string label;
  ImageTensor image;
};

// Loads every image of the given patients, resized to the manifest resolution.
std::vector<LoadedImage> load_images(const DatasetManifest& manifest,
                                     const std::set<std::string>& patients);

struct VictimEntry {
  std::string patient_id;
  std::string path;
  ImageTensor image;
};

struct VictimSet {
  std::vector<VictimEntry> entries;
  PartitionName source_partition = PartitionName::evaluation;
};

/// Raised when screening leaves no victims; the attack cannot be evaluated.
class EmptyVictimSet : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Keeps non-disease candidates that the evaluation disease model calls
// non-disease (p < 0.5) and the evaluation identity model assigns to their patient.
VictimSet build_victim_set(const std::vector<LoadedImage>& candidates,
                           const classifiers::ClassifierHandle& disease_model,
                           const classifiers::ClassifierHandle& identity_model);

void save_victim_set(const VictimSet& victims, const std::filesystem::path& path);

enum class AugmentOp { gaussian_blur, random_rotation };

struct AugmentationSpec {
  int target_count = 14;
  std::set<AugmentOp> ops{AugmentOp::gaussian_blur, AugmentOp::random_rotation};
  double rotation_range = 15.0;  // degrees, angles drawn from [-range, range]
  double blur_sigma = 1.0;

  void validate() const;
};

// Index 0 is the untouched original; the rest are derived from per-index seeds.
std::vector<ImageTensor> augment(const ImageTensor& image, const AugmentationSpec& spec,
                                 std::uint64_t seed);

// Repeats minority samples cyclically until every class matches the largest.
template <typename T>
std::map<std::string, std::vector<T>> upsample_minority(
    std::map<std::string, std::vector<T>> by_class) {
  if (by_class.empty()) throw ValidationError("upsample_minority: no classes");
  std::size_t largest = 0;
  for (const auto& [name, items] : by_class) {
    if (items.empty()) throw ValidationError("upsample_minority: class '" + name + "' is empty");
    largest = std::max(largest, items.size());
  }
  for (auto& [name, items] : by_class) {
    const std::size_t original = items.size();
    items.reserve(largest);
    for (std::size_t i = original; i < largest; ++i) items.push_back(items[i % original]);
  }
  return by_class;
}

}  // namespace jekyll::ingest
