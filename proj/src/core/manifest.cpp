#include "jekyll/core/manifest.hpp"

#include <set>
#include <sstream>

#include "jekyll/core/error.hpp"

namespace jekyll {

std::vector<Violation> validate_manifest(const DatasetManifest& manifest) {
  std::vector<Violation> out;
  if (manifest.condition_vocabulary.empty())
    out.push_back({"manifest", "empty_vocabulary", "condition vocabulary is empty"});
  if (manifest.image_resolution <= 0)
    out.push_back({"manifest", "bad_resolution", "image resolution must be positive"});
  const std::set<std::string> vocab(manifest.condition_vocabulary.begin(),
                                    manifest.condition_vocabulary.end());
  std::set<std::string> seen;
  for (const auto& r : manifest.records) {
    const std::string who = r.patient_id.empty() ? "<empty id>" : r.patient_id;
    if (r.patient_id.empty()) out.push_back({who, "empty_patient_id", "patient id is empty"});
    if (!seen.insert(r.patient_id).second)
      out.push_back({who, "duplicate_patient_id", "patient id appears in more than one record"});
    if (r.images.empty()) out.push_back({who, "no_images", "patient has no images"});
    for (const auto& img : r.images) {
      if (img.path.empty()) out.push_back({who, "empty_path", "image path is empty"});
      if (!vocab.count(img.label))
        out.push_back({who, "unknown_label", "label '" + img.label + "' not in vocabulary"});
    }
  }
  return out;
}

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (const auto& v : violations) os << v.record << ": " << v.rule << " (" << v.message << ")\n";
  return os.str();
}

void assert_disjoint(const Partition& a, const Partition& b) {
  for (const auto& id : a.patient_ids) {
    if (b.patient_ids.count(id))
      throw ValidationError("patient " + id + " appears in both " + to_string(a.name) + " and " +
                            to_string(b.name) + " partitions");
  }
}

}  // namespace jekyll
