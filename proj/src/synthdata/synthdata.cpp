#include "jekyll/synthdata/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "jekyll/core/error.hpp"
#include "jekyll/core/manifest.hpp"
#include "jekyll/core/rng.hpp"
#include "jekyll/ingest/ingest.hpp"

namespace jekyll::synth {

using nlohmann::json;

namespace {

constexpr double kBaseLevel = -0.3;
constexpr double kMarkerRadiusX = 0.22;  // fraction of the resolution
constexpr double kMarkerRadiusY = 0.17;
constexpr double kMarkerEdge = 0.15;     // soft rim, in normalized radius
constexpr double kOutlineRadius = 0.92;  // landmark rim, normalized radius
constexpr double kOutlineWidth = 0.08;

double angular_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), std::numbers::pi);
  return std::min(d, std::numbers::pi - d);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void ToySpec::validate() const {
  if (n_patients < 1) throw ValidationError("n_patients must be >= 1");
  if (images_per_patient < 1) throw ValidationError("images_per_patient must be >= 1");
  if (resolution < 16) throw ValidationError("resolution must be >= 16");
  if (stage_levels.empty()) throw ValidationError("at least one stage level is required");
  for (std::size_t i = 0; i < stage_levels.size(); ++i) {
    if (!(stage_levels[i] > 0.0)) throw ValidationError("stage levels must be positive");
    if (i > 0 && !(stage_levels[i] > stage_levels[i - 1]))
      throw ValidationError("stage levels must increase strictly");
  }
  if (!(disease_fraction >= 0.0 && disease_fraction <= 1.0))
    throw ValidationError("disease_fraction must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be >= 0");
  if (!(outline >= 0.0)) throw ValidationError("outline must be >= 0");
  if (condition.empty() || condition == kNonDiseaseLabel)
    throw ValidationError("condition name must be non-empty and distinct from non-disease");
}

std::string ToySpec::label_for_stage(int stage) const {
  if (stage == 0) return kNonDiseaseLabel;
  if (stage < 0 || stage > static_cast<int>(stage_levels.size()))
    throw ValidationError("stage out of range");
  if (stage_levels.size() == 1) return condition;
  return condition + "_stage" + std::to_string(stage);
}

std::vector<std::string> ToySpec::vocabulary() const {
  std::vector<std::string> v{kNonDiseaseLabel};
  for (int s = 1; s <= static_cast<int>(stage_levels.size()); ++s) v.push_back(label_for_stage(s));
  return v;
}

MarkerBox ToySpec::marker_box() const {
  const double c = 0.5 * resolution;
  const double rx = kMarkerRadiusX * resolution, ry = kMarkerRadiusY * resolution;
  return {static_cast<int>(std::floor(c - rx)), static_cast<int>(std::floor(c - ry)),
          static_cast<int>(std::ceil(c + rx)), static_cast<int>(std::ceil(c + ry))};
}

std::vector<IdentityParams> draw_identities(int n_patients, bool color, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> freq(2.5, 9.0), angle(0.0, std::numbers::pi),
      hue(0.0, 2.0 * std::numbers::pi), amp(0.32, 0.42);
  std::vector<IdentityParams> out;
  double min_freq_gap = 0.6, min_angle_gap = 0.35;
  int attempts = 0;
  while (static_cast<int>(out.size()) < n_patients) {
    IdentityParams p;
    p.frequency = freq(rng);
    p.orientation = angle(rng);
    p.amplitude = amp(rng);
    const double h = hue(rng);
    if (color)
      for (int c = 0; c < 3; ++c)
        p.tint[c] = 0.15 * std::cos(h - c * 2.0 * std::numbers::pi / 3.0);
    const bool distinct = std::all_of(out.begin(), out.end(), [&](const IdentityParams& q) {
      return std::abs(p.frequency - q.frequency) >= min_freq_gap ||
             angular_gap(p.orientation, q.orientation) >= min_angle_gap;
    });
    if (distinct) {
      out.push_back(p);
    } else if (++attempts % 2000 == 0) {
      // Crowded parameter space: relax the separation rather than loop forever.
      min_freq_gap *= 0.9;
      min_angle_gap *= 0.9;
    }
  }
  return out;
}

ImageTensor render_toy_image(const ToySpec& spec, const IdentityParams& id, int stage,
                             std::mt19937_64& rng) {
  const int r = spec.resolution;
  const int channels = spec.color ? 3 : 1;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), jitter(0.9, 1.1),
      offset(-0.05, 0.05);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  const double phi = phase(rng);
  const double amplitude = id.amplitude * jitter(rng);
  const double base = kBaseLevel + offset(rng);
  const double level = stage > 0 ? spec.stage_levels.at(stage - 1) * jitter(rng) : 0.0;
  const double kx = 2.0 * std::numbers::pi * id.frequency * std::cos(id.orientation) / r;
  const double ky = 2.0 * std::numbers::pi * id.frequency * std::sin(id.orientation) / r;
  const double c = 0.5 * r, rx = kMarkerRadiusX * r, ry = kMarkerRadiusY * r;

  std::vector<float> values(static_cast<std::size_t>(channels) * r * r);
  for (int y = 0; y < r; ++y) {
    for (int x = 0; x < r; ++x) {
      double v = base + amplitude * std::sin(kx * x + ky * y + phi);
      const double dx = (x + 0.5 - c) / rx, dy = (y + 0.5 - c) / ry;
      const double rho = std::sqrt(dx * dx + dy * dy);
      v -= spec.outline * std::max(0.0, 1.0 - std::abs(rho - kOutlineRadius) / kOutlineWidth);
      if (level > 0.0) v += level * std::clamp((1.0 - rho) / kMarkerEdge, 0.0, 1.0);
      for (int ch = 0; ch < channels; ++ch) {
        const double t = spec.color ? id.tint[ch] : 0.0;
        values[(static_cast<std::size_t>(ch) * r + y) * r + x] =
            static_cast<float>(std::clamp(v + t + noise(rng), -1.0, 1.0));
      }
    }
  }
  return ImageTensor(r, r, channels, std::move(values));
}

ToyDataset generate_toy_dataset(const ToySpec& spec, std::uint64_t seed,
                                const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "images");
  ToyDataset ds;
  ds.manifest.condition_vocabulary = spec.vocabulary();
  ds.manifest.image_resolution = spec.resolution;
  ds.manifest.root = out_dir.string();

  std::mt19937_64 id_rng(mix_seed(seed, "identities"));
  const auto ids = draw_identities(spec.n_patients, spec.color, id_rng);
  const int diseased =
      static_cast<int>(std::lround(spec.disease_fraction * spec.images_per_patient));
  const int n_stages = static_cast<int>(spec.stage_levels.size());
  const MarkerBox box = spec.marker_box();

  for (int p = 0; p < spec.n_patients; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof pid, "p%03d", p);
    ds.identities[pid] = ids[p];
    std::filesystem::create_directories(out_dir / "images" / pid);
    // Which images carry the marker, and at which stage, is fixed per patient.
    std::vector<int> stages(static_cast<std::size_t>(spec.images_per_patient), 0);
    for (int k = 0; k < diseased; ++k) stages[k] = 1 + k % n_stages;
    std::mt19937_64 assign(mix_seed(seed, "assign/" + std::string(pid)));
    std::shuffle(stages.begin(), stages.end(), assign);

    PatientRecord record{pid, {}};
    for (int k = 0; k < spec.images_per_patient; ++k) {
      std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(p) * 1000003ULL + k));
      const ImageTensor img = render_toy_image(spec, ids[p], stages[k], rng);
      char name[32];
      std::snprintf(name, sizeof name, "img%03d.png", k);
      const std::string rel = "images/" + std::string(pid) + "/" + name;
      save_image(img, out_dir / rel);
      const std::string label = spec.label_for_stage(stages[k]);
      record.images.push_back({rel, label});
      OracleEntry e{rel, pid, label, stages[k], std::nullopt, content_hash(img)};
      if (stages[k] > 0) e.marker = box;
      ds.oracle.push_back(std::move(e));
    }
    ds.manifest.records.push_back(std::move(record));
  }
  const auto violations = validate_manifest(ds.manifest);
  if (!violations.empty()) throw ingest::ManifestInvalid(violations);

  ds.manifest_path = out_dir / "manifest.jsonl";
  ds.oracle_path = out_dir / "oracle.jsonl";
  ingest::save_manifest(ds.manifest, ds.manifest_path);
  write_oracle(ds.oracle, ds.oracle_path);

  json params = json::object();
  for (const auto& [pid, id] : ds.identities)
    params[pid] = {{"frequency", id.frequency},
                   {"orientation", id.orientation},
                   {"amplitude", id.amplitude},
                   {"tint", id.tint}};
  std::ofstream os(out_dir / "identities.json");
  if (!os) throw IoError("cannot write identities.json");
  os << params.dump(2) << '\n';
  return ds;
}

void write_oracle(const std::vector<OracleEntry>& entries, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write oracle file " + path.string());
  for (const auto& e : entries) {
    json j{{"path", e.path},         {"patient_id", e.patient_id}, {"label", e.label},
           {"stage", e.stage},       {"marker_bbox", nullptr},
           {"content_hash", hex64(e.content_hash)}};
    if (e.marker) j["marker_bbox"] = {e.marker->x0, e.marker->y0, e.marker->x1, e.marker->y1};
    os << j.dump() << '\n';
  }
}

OracleIndex::OracleIndex(std::vector<OracleEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    by_path_[entries_[i].path] = i;
    by_hash_[entries_[i].content_hash] = i;
  }
}

OracleIndex OracleIndex::load(const std::filesystem::path& oracle_file) {
  std::ifstream is(oracle_file);
  if (!is) throw IoError("cannot read oracle file " + oracle_file.string());
  std::vector<OracleEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      OracleEntry e;
      e.path = j.at("path").get<std::string>();
      e.patient_id = j.at("patient_id").get<std::string>();
      e.label = j.at("label").get<std::string>();
      e.stage = j.at("stage").get<int>();
      if (!j.at("marker_bbox").is_null()) {
        const auto b = j.at("marker_bbox").get<std::vector<int>>();
        if (b.size() != 4) throw ParseError(lineno, "marker_bbox needs 4 values");
        e.marker = MarkerBox{b[0], b[1], b[2], b[3]};
      }
      e.content_hash = std::stoull(j.at("content_hash").get<std::string>(), nullptr, 16);
      entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError(lineno, ex.what());
    }
  }
  return OracleIndex(std::move(entries));
}

OracleVerdict oracle_classify(const std::string& path, const OracleIndex& index) {
  auto it = index.by_path_.find(path);
  if (it == index.by_path_.end()) {
    // Accept absolute paths that end in a known relative path.
    const std::string generic = std::filesystem::path(path).generic_string();
    for (const auto& [rel, i] : index.by_path_) {
      if (generic.size() > rel.size() &&
          generic.compare(generic.size() - rel.size(), rel.size(), rel) == 0 &&
          generic[generic.size() - rel.size() - 1] == '/') {
        const auto& e = index.entries_[i];
        return {e.label, e.patient_id, e.stage};
      }
    }
    throw ValidationError("image not produced by this generator: " + path);
  }
  const auto& e = index.entries_[it->second];
  return {e.label, e.patient_id, e.stage};
}

OracleVerdict oracle_classify(const ImageTensor& image, const OracleIndex& index) {
  auto it = index.by_hash_.find(content_hash(image));
  if (it == index.by_hash_.end()) throw ValidationError("image not produced by this generator");
  const auto& e = index.entries_[it->second];
  return {e.label, e.patient_id, e.stage};
}

}  // namespace jekyll::synth
