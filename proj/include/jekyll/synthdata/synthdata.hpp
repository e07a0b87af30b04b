#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "jekyll/core/image.hpp"
#include "jekyll/core/types.hpp"

namespace jekyll::synth {

/// Per-patient texture: a plane sinusoid with a patient-specific frequency and
/// orientation, plus a colour tint used only in colour mode.
struct IdentityParams {
  double frequency = 4.0;    // cycles across the image
  double orientation = 0.0;  // radians in [0, pi)
  double amplitude = 0.4;
  std::array<double, 3> tint{0.0, 0.0, 0.0};
};

struct MarkerBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel rectangle
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const MarkerBox&) const = default;
};

struct ToySpec {
  int n_patients = 50;
  int images_per_patient = 40;
  int resolution = 64;
  // Marker intensity per stage, strictly increasing. One entry means a single condition.
  std::vector<double> stage_levels{0.6};
  double disease_fraction = 0.3;
  double noise_sigma = 0.03;
  // Depth of a dark rim drawn on the marker ellipse in every image, an
  // anatomical landmark that locates the marker site. 0 disables it.
  double outline = 0.3;
  bool color = false;
  std::string condition = "disease";

  void validate() const;
  // Label of stage k (1-based); stage 0 is the non-disease label.
  std::string label_for_stage(int stage) const;
  std::vector<std::string> vocabulary() const;
  // Axis-aligned bounds of the central ellipse at this resolution.
  MarkerBox marker_box() const;
};

struct OracleEntry {
  std::string path;  // relative to the dataset root
  std::string patient_id;
  std::string label;
  int stage = 0;
  std::optional<MarkerBox> marker;
  std::uint64_t content_hash = 0;
};

struct ToyDataset {
  DatasetManifest manifest;
  std::filesystem::path manifest_path;
  std::filesystem::path oracle_path;
  std::vector<OracleEntry> oracle;
  std::map<std::string, IdentityParams> identities;
};

// Draws patient textures that differ pairwise in frequency or orientation.
std::vector<IdentityParams> draw_identities(int n_patients, bool color, std::mt19937_64& rng);

// Renders one image; stage 0 has no marker.
ImageTensor render_toy_image(const ToySpec& spec, const IdentityParams& id, int stage,
                             std::mt19937_64& rng);

// Writes PNG images, manifest.jsonl and oracle.jsonl under out_dir.
ToyDataset generate_toy_dataset(const ToySpec& spec, std::uint64_t seed,
                                const std::filesystem::path& out_dir);

struct OracleVerdict {
  std::string label;
  std::string patient_id;
  int stage = 0;
};

/// Ground-truth lookup for generated images, by relative path or by pixel content.
class OracleIndex {
 public:
  OracleIndex() = default;
  explicit OracleIndex(std::vector<OracleEntry> entries);
  static OracleIndex load(const std::filesystem::path& oracle_file);

  const std::vector<OracleEntry>& entries() const { return entries_; }

 private:
  friend OracleVerdict oracle_classify(const std::string& path, const OracleIndex& index);
  friend OracleVerdict oracle_classify(const ImageTensor& image, const OracleIndex& index);
  std::vector<OracleEntry> entries_;
  std::map<std::string, std::size_t> by_path_;
  std::map<std::uint64_t, std::size_t> by_hash_;
};

// Throws ValidationError for images the oracle never produced.
OracleVerdict oracle_classify(const std::string& path, const OracleIndex& index);
OracleVerdict oracle_classify(const ImageTensor& image, const OracleIndex& index);

void write_oracle(const std::vector<OracleEntry>& entries, const std::filesystem::path& path);

}  // namespace jekyll::synth
