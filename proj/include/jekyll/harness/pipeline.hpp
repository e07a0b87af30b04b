#pragma once

#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/defense/defense.hpp"
#include "jekyll/harness/config.hpp"
#include "jekyll/ingest/ingest.hpp"
#include "jekyll/metrics/metrics.hpp"
#include "jekyll/translator/model.hpp"

// Building blocks of the standard pipeline, shared by the CLI and the plan steps.
namespace jekyll::harness::pipeline {

namespace fs = std::filesystem;

// Artifact layout under a run directory.
fs::path manifest_path(const Config& c, const fs::path& run_dir);
fs::path partition_path(const fs::path& run_dir, PartitionName name);
fs::path classifier_dir(const fs::path& run_dir, classifiers::ClassifierRole role);
fs::path victims_path(const fs::path& run_dir);
fs::path model_dir(const fs::path& run_dir);
fs::path report_path(const fs::path& run_dir);
fs::path detector_dir(const fs::path& run_dir);

std::string target_condition(const Config& c, const DatasetManifest& m);

void synthesize(const Config& c, std::uint64_t seed, const fs::path& out_dir);
ingest::PartitionPair prepare(const DatasetManifest& m, const Config& c, std::uint64_t seed,
                              const fs::path& out_dir);

struct ClassifierSummary {
  classifiers::ClassifierRole role;
  double accuracy = 0.0;
  double initial_loss = 0.0, final_loss = 0.0;
};

// Trains one classifier on a partition's images; every fifth image of each
// patient is held out for the reported accuracy.
ClassifierSummary train_role(const DatasetManifest& m, const Partition& partition,
                             classifiers::ClassifierRole role, const std::string& condition,
                             const Config& c, std::uint64_t seed, const std::string& config_hash,
                             const fs::path& out_dir);

std::shared_ptr<classifiers::ClassifierHandle> load_classifier(const fs::path& dir);

ingest::VictimSet screen_victims(const DatasetManifest& m, const Partition& evaluation,
                                 const classifiers::ClassifierHandle& disease_eval,
                                 const classifiers::ClassifierHandle& identity_eval);
// Victim entries with their images re-read from the manifest root.
ingest::VictimSet load_victims(const fs::path& victims_file, const DatasetManifest& m);

std::unique_ptr<translator::TranslationModel> train_gan(const DatasetManifest& m,
                                                       const Partition& attack,
                                                       const Config& c, std::uint64_t seed,
                                                       const fs::path& run_dir,
                                                       const fs::path& out_dir);

metrics::EvaluationReport evaluate(const translator::TranslationModel& model,
                                   const ingest::VictimSet& victims,
                                   const classifiers::ClassifierHandle& disease_eval,
                                   const classifiers::ClassifierHandle& identity_eval,
                                   const std::vector<ImageTensor>& real_diseased, const Config& c,
                                   std::uint64_t seed, const std::string& config_hash,
                                   const fs::path* fakes_dir = nullptr);

// Real condition images and G-translated non-disease images for the given patients.
std::vector<defense::DetectorSample> detector_samples(const DatasetManifest& m,
                                                      const std::set<std::string>& patients,
                                                      const std::string& condition,
                                                      const translator::TranslationModel& model);
std::set<std::string> detector_test_patients(const DatasetManifest& m, double test_fraction,
                                             std::uint64_t seed);

void defend(const DatasetManifest& m, const translator::TranslationModel& model, const Config& c,
            std::uint64_t seed, const std::string& config_hash, const fs::path& out_dir);

}  // namespace jekyll::harness::pipeline
