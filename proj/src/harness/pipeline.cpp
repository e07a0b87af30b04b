#include "jekyll/harness/pipeline.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <random>

#include "jekyll/core/error.hpp"
#include "jekyll/core/rng.hpp"
#include "jekyll/synthdata/synthdata.hpp"
#include "jekyll/translator/training.hpp"

namespace jekyll::harness::pipeline {

using classifiers::ClassifierRole;
using nlohmann::json;

namespace {

std::string role_dir_name(ClassifierRole role) {
  switch (role) {
    case ClassifierRole::attack_disease: return "attack_disease";
    case ClassifierRole::evaluation_disease: return "evaluation_disease";
    case ClassifierRole::attack_identity: return "attack_identity";
    case ClassifierRole::evaluation_identity: return "evaluation_identity";
  }
  return "unknown";
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::vector<ImageTensor> images_with_label(const std::vector<ingest::LoadedImage>& all,
                                           const std::string& label) {
  std::vector<ImageTensor> out;
  for (const auto& i : all)
    if (i.label == label) out.push_back(i.image);
  return out;
}

}  // namespace

fs::path manifest_path(const Config& c, const fs::path& run_dir) {
  const std::string given = c.get_string("data.manifest");
  return given.empty() ? run_dir / "data" / "manifest.jsonl" : fs::path(given);
}

fs::path partition_path(const fs::path& run_dir, PartitionName name) {
  return run_dir / "prepare" / (std::string(to_string(name)) + ".json");
}

fs::path classifier_dir(const fs::path& run_dir, ClassifierRole role) {
  return run_dir / "classifiers" / role_dir_name(role);
}

fs::path victims_path(const fs::path& run_dir) { return run_dir / "victims" / "victims.json"; }
fs::path model_dir(const fs::path& run_dir) { return run_dir / "gan" / "model"; }
fs::path report_path(const fs::path& run_dir) { return run_dir / "evaluate" / "report.json"; }
fs::path detector_dir(const fs::path& run_dir) { return run_dir / "defend"; }

std::string target_condition(const Config& c, const DatasetManifest& m) {
  const std::string cond = c.get_string("experiment.condition", "disease");
  if (std::find(m.condition_vocabulary.begin(), m.condition_vocabulary.end(), cond) ==
      m.condition_vocabulary.end())
    throw ValidationError("target condition '" + cond + "' is not in the manifest vocabulary");
  if (cond == kNonDiseaseLabel) throw ValidationError("target condition must be a disease label");
  return cond;
}

void synthesize(const Config& c, std::uint64_t seed, const fs::path& out_dir) {
  synth::ToySpec spec;
  spec.n_patients = static_cast<int>(c.get_int("synth.patients", spec.n_patients));
  spec.images_per_patient =
      static_cast<int>(c.get_int("synth.images_per_patient", spec.images_per_patient));
  spec.resolution = static_cast<int>(c.get_int("synth.resolution", spec.resolution));
  spec.color = c.get_bool("synth.color", false);
  spec.disease_fraction = c.get_double("synth.disease_fraction", spec.disease_fraction);
  spec.noise_sigma = c.get_double("synth.noise_sigma", spec.noise_sigma);
  spec.outline = c.get_double("synth.outline", spec.outline);
  spec.condition = c.get_string("experiment.condition", "disease");
  const int stages = static_cast<int>(c.get_int("synth.stages", 1));
  if (stages < 1) throw ValidationError("synth.stages must be >= 1");
  // Stages split the top marker level evenly.
  const double top = c.get_double("synth.marker_level", 0.6);
  spec.stage_levels.clear();
  for (int s = 1; s <= stages; ++s) spec.stage_levels.push_back(top * s / stages);
  synth::generate_toy_dataset(spec, seed, out_dir);
}

ingest::PartitionPair prepare(const DatasetManifest& m, const Config& c, std::uint64_t seed,
                              const fs::path& out_dir) {
  ingest::PartitionOptions opts;
  opts.eval_fraction = c.get_double("prepare.eval_fraction", opts.eval_fraction);
  opts.min_images_for_identity =
      static_cast<int>(c.get_int("prepare.min_images", opts.min_images_for_identity));
  auto parts = ingest::partition_patients(m, opts, seed);
  ingest::save_partition(parts.attack, out_dir / "attack.json");
  ingest::save_partition(parts.evaluation, out_dir / "evaluation.json");
  return parts;
}

ClassifierSummary train_role(const DatasetManifest& m, const Partition& partition, ClassifierRole role,
                             const std::string& condition, const Config& c, std::uint64_t seed,
                             const std::string& config_hash, const fs::path& out_dir) {
  const bool disease = classifiers::is_disease_role(role);
  const auto images = ingest::load_images(m, partition.patient_ids);
  std::vector<std::string> classes;
  if (disease)
    classes = {kNonDiseaseLabel, condition};
  else
    classes.assign(partition.patient_ids.begin(), partition.patient_ids.end());

  classifiers::LabeledImages train, held;
  std::map<std::string, int> seen;
  for (const auto& img : images) {
    int label;
    if (disease) {
      if (img.label == kNonDiseaseLabel)
        label = 0;
      else if (img.label == condition)
        label = 1;
      else
        continue;
    } else {
      label = static_cast<int>(std::find(classes.begin(), classes.end(), img.patient_id) -
                               classes.begin());
    }
    auto& dst = (++seen[img.patient_id] % 5 == 0) ? held : train;
    dst.images.push_back(img.image);
    dst.labels.push_back(label);
  }

  classifiers::BackboneSpec spec;
  spec.name = c.get_string("classifier.backbone", "toy_cnn");
  spec.width = static_cast<int>(c.get_int("classifier.width", 16));
  spec.pretrained_weights = c.get_string("classifier.pretrained");
  const std::uint64_t role_seed = mix_seed(seed, classifiers::to_string(role));
  auto handle = classifiers::build_classifier(role, classes, spec, role_seed);
  classifiers::TrainingRecipe recipe;
  recipe.epochs = static_cast<int>(
      c.get_int(disease ? "classifier.disease_epochs" : "classifier.identity_epochs", 10));
  recipe.batch_size = static_cast<int>(c.get_int("classifier.batch_size", 16));
  recipe.learning_rate = c.get_double("classifier.learning_rate", 1e-3);
  const auto report = classifiers::train_classifier(*handle, train, held, recipe, role_seed);
  handle->save(out_dir, config_hash);
  spdlog::info("{}: held-out accuracy {:.3f} ({} train / {} held out)",
               classifiers::to_string(role), report.accuracy, train.images.size(),
               held.images.size());
  return {role, report.accuracy, report.initial_loss, report.final_loss};
}

std::shared_ptr<classifiers::ClassifierHandle> load_classifier(const fs::path& dir) {
  return std::shared_ptr<classifiers::ClassifierHandle>(classifiers::ClassifierHandle::load(dir));
}

ingest::VictimSet screen_victims(const DatasetManifest& m, const Partition& evaluation,
                                 const classifiers::ClassifierHandle& disease_eval,
                                 const classifiers::ClassifierHandle& identity_eval) {
  std::vector<ingest::LoadedImage> candidates;
  for (auto& img : ingest::load_images(m, evaluation.patient_ids))
    if (img.label == kNonDiseaseLabel) candidates.push_back(std::move(img));
  return ingest::build_victim_set(candidates, disease_eval, identity_eval);
}

ingest::VictimSet load_victims(const fs::path& victims_file, const DatasetManifest& m) {
  std::ifstream is(victims_file);
  if (!is) throw IoError("cannot read victim set " + victims_file.string());
  ingest::VictimSet out;
  try {
    const json j = json::parse(is);
    if (j.at("source_partition").get<std::string>() != "evaluation")
      throw ValidationError("victim set must come from the evaluation partition");
    for (const auto& e : j.at("entries")) {
      const auto rel = e.at("path").get<std::string>();
      fs::path p(rel);
      if (p.is_relative() && !m.root.empty()) p = fs::path(m.root) / p;
      ImageTensor img = load_image(p);
      if (img.height() != m.image_resolution) img = resize_image(img, m.image_resolution);
      out.entries.push_back({e.at("patient_id").get<std::string>(), rel, std::move(img)});
    }
  } catch (const json::exception& ex) {
    throw ValidationError("corrupt victim set " + victims_file.string() + ": " + ex.what());
  }
  return out;
}

std::unique_ptr<translator::TranslationModel> train_gan(const DatasetManifest& m,
                                                       const Partition& attack, const Config& c,
                                                       std::uint64_t seed, const fs::path& run_dir,
                                                       const fs::path& out_dir) {
  const std::string condition = target_condition(c, m);
  const auto images = ingest::load_images(m, attack.patient_ids);
  const auto x_pool = images_with_label(images, kNonDiseaseLabel);
  const auto y_pool = images_with_label(images, condition);
  if (x_pool.empty() || y_pool.empty())
    throw ValidationError("attack partition needs both non-disease and '" + condition + "' images");
  const int channels = x_pool.front().channels();

  translator::GeneratorConfig g{channels, static_cast<int>(c.get_int("gan.generator_width", 8)),
                                static_cast<int>(c.get_int("gan.residual_blocks", 6))};
  translator::DiscriminatorConfig d{channels,
                                    static_cast<int>(c.get_int("gan.discriminator_width", 8))};
  translator::TranslatorOptions opts;
  opts.convention =
      translator::adversarial_convention_from_string(c.get_string("gan.convention", "standard_lsgan"));
  opts.identity_variant =
      translator::identity_variant_from_string(c.get_string("gan.identity_variant", "as_printed"));
  opts.pool_size = static_cast<int>(c.get_int("gan.image_pool", 50));
  opts.use_image_pool = opts.pool_size > 0;
  const ExperimentConfig cfg = experiment_config_from(c);

  auto model = std::make_unique<translator::TranslationModel>(
      g, d, m.image_resolution, cfg.loss_weights, mix_seed(seed, "translator"), opts);
  if (c.get_bool("gan.repurposed", false))
    translator::attach_global_discriminator(*model, mix_seed(seed, "global_head"));
  std::shared_ptr<classifiers::ClassifierHandle> disease, identity;
  if (cfg.loss_weights.disease > 0)
    disease = load_classifier(classifier_dir(run_dir, ClassifierRole::attack_disease));
  if (cfg.loss_weights.identity > 0)
    identity = load_classifier(classifier_dir(run_dir, ClassifierRole::attack_identity));
  model->attach_classifiers(disease, identity);

  translator::GanTrainingOptions topts;
  topts.steps_per_epoch = static_cast<int>(c.get_int("gan.steps_per_epoch", 0));
  if (c.get_bool("gan.checkpoints", true)) topts.checkpoint_dir = out_dir / "checkpoints";
  topts.on_epoch = [](const translator::EpochRecord& r) {
    spdlog::info("gan epoch {:3d}  lr {:.2e}  G {:.4f} (adv {:.4f} dis {:.4f} id {:.4f} cyc {:.4f})  D {:.4f}",
                 r.epoch, r.learning_rate, r.generator.total, r.generator.adversarial,
                 r.generator.disease, r.generator.identity, r.generator.cycle, r.discriminator);
  };
  const auto history = translator::train_jekyll(*model, x_pool, y_pool, cfg, topts);

  json epochs = json::array();
  for (const auto& e : history.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"learning_rate", e.learning_rate},
                      {"adversarial", e.generator.adversarial},
                      {"disease", e.generator.disease},
                      {"identity", e.generator.identity},
                      {"cycle", e.generator.cycle},
                      {"total", e.generator.total},
                      {"discriminator", e.discriminator}});
  write_json(out_dir / "history.json",
             {{"epochs", epochs},
              {"x_pool", x_pool.size()},
              {"y_pool", y_pool.size()},
              {"classifier_digests",
               {{"disease_before", history.disease_digest_before},
                {"disease_after", history.disease_digest_after},
                {"identity_before", history.identity_digest_before},
                {"identity_after", history.identity_digest_after}}}});
  model->save(out_dir / "model");
  return model;
}

metrics::EvaluationReport evaluate(const translator::TranslationModel& model,
                                   const ingest::VictimSet& victims,
                                   const classifiers::ClassifierHandle& disease_eval,
                                   const classifiers::ClassifierHandle& identity_eval,
                                   const std::vector<ImageTensor>& real_diseased, const Config& c,
                                   std::uint64_t seed, const std::string& config_hash,
                                   const fs::path* fakes_dir) {
  std::vector<ImageTensor> inputs;
  metrics::ReportInputs in;
  for (const auto& v : victims.entries) {
    inputs.push_back(v.image);
    in.image_refs.push_back(v.path);
    in.patient_ids.push_back(v.patient_id);
  }
  const auto fakes = translator::translate(model, inputs, translator::Direction::x_to_y);
  if (fakes_dir) {
    for (std::size_t i = 0; i < fakes.size(); ++i) {
      const fs::path out = *fakes_dir / in.image_refs[i];
      fs::create_directories(out.parent_path());
      save_image(fakes[i], out);
    }
  }
  in.injection = metrics::injection_rate(disease_eval, fakes, c.get_double("evaluate.threshold", 0.5));
  in.identity = metrics::identity_rate(identity_eval, fakes, in.patient_ids);
  if (real_diseased.size() >= 2) {
    std::vector<ImageTensor> a, b;
    for (std::size_t i = 0; i < real_diseased.size(); ++i)
      (i % 2 == 0 ? a : b).push_back(real_diseased[i]);
    in.cohort = metrics::mssim_cohort(a, b, fakes, mix_seed(seed, "mssim"),
                                      static_cast<int>(c.get_int("evaluate.mssim_pairs", 0)));
  }
  in.seed = seed;
  in.config_hash = config_hash;
  in.labels = {{"condition", c.get_string("experiment.condition", "disease")},
               {"victims", std::to_string(victims.entries.size())}};
  return metrics::assemble_report(in);
}

std::vector<defense::DetectorSample> detector_samples(const DatasetManifest& m,
                                                      const std::set<std::string>& patients,
                                                      const std::string& condition,
                                                      const translator::TranslationModel& model) {
  std::vector<defense::DetectorSample> out;
  std::vector<ImageTensor> sources;
  std::vector<std::string> source_ids;
  for (auto& img : ingest::load_images(m, patients)) {
    if (img.label == condition)
      out.push_back({std::move(img.image), false, img.patient_id});
    else if (img.label == kNonDiseaseLabel) {
      sources.push_back(std::move(img.image));
      source_ids.push_back(img.patient_id);
    }
  }
  const auto fakes = translator::translate(model, sources, translator::Direction::x_to_y);
  for (std::size_t i = 0; i < fakes.size(); ++i) out.push_back({fakes[i], true, source_ids[i]});
  return out;
}

std::set<std::string> detector_test_patients(const DatasetManifest& m, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ValidationError("defend.test_fraction must lie in (0, 1)");
  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.patient_id);
  std::mt19937_64 rng(mix_seed(seed, "detector_split"));
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(ids.size()))), 1,
      ids.size() - 1);
  return {ids.begin(), ids.begin() + static_cast<long>(n)};
}

void defend(const DatasetManifest& m, const translator::TranslationModel& model, const Config& c,
            std::uint64_t seed, const std::string& config_hash, const fs::path& out_dir) {
  const std::string condition = target_condition(c, m);
  const auto test_ids = detector_test_patients(m, c.get_double("defend.test_fraction", 0.3), seed);
  std::set<std::string> train_ids;
  for (const auto& r : m.records)
    if (!test_ids.count(r.patient_id)) train_ids.insert(r.patient_id);
  const auto train = detector_samples(m, train_ids, condition, model);
  const auto test = detector_samples(m, test_ids, condition, model);

  defense::DetectorRecipe recipe;
  recipe.epochs = static_cast<int>(c.get_int("defend.epochs", 10));
  recipe.batch_size = static_cast<int>(c.get_int("defend.batch_size", 16));
  recipe.learning_rate = c.get_double("defend.learning_rate", 1e-3);
  defense::DetectorMetrics supervised;
  const auto det = defense::train_supervised_detector(train, test, recipe,
                                                      mix_seed(seed, "supervised"), &supervised);
  det.save(out_dir / "mesonet");

  auto metrics_json = [](const defense::DetectorMetrics& d) {
    return json{{"accuracy", d.accuracy}, {"precision", d.precision}, {"recall", d.recall},
                {"tp", d.true_positive},  {"fp", d.false_positive},   {"tn", d.true_negative},
                {"fn", d.false_negative}};
  };
  json summary{{"config_hash", config_hash},
               {"seed", seed},
               {"test_patients", test_ids},
               {"supervised", metrics_json(supervised)},
               {"mesonet_parameters", det.net->parameter_count()}};

  if (train.front().image.channels() == 3) {
    std::vector<ImageTensor> reals;
    for (const auto& s : train)
      if (!s.fake) reals.push_back(s.image);
    const auto blind = defense::BlindDetector::train(
        reals, {c.get_double("defend.nu", 0.12), c.get_double("defend.gamma", 0.1)});
    blind.save(out_dir / "blind.json");
    std::vector<bool> predicted, truth;
    for (const auto& s : test) {
      predicted.push_back(defense::blind_detect(blind, s.image) == defense::Verdict::fake);
      truth.push_back(s.fake);
    }
    summary["blind"] = metrics_json(defense::detector_metrics(predicted, truth));
    summary["blind"]["training_anomaly_fraction"] = blind.training_anomaly_fraction();
  } else {
    summary["blind"] = {{"value", nullptr},
                        {"reason", "colour statistics need RGB images; this dataset is grayscale"}};
  }
  write_json(out_dir / "detectors.json", summary);
}

}  // namespace jekyll::harness::pipeline
