#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "jekyll/core/error.hpp"
#include "jekyll/defense/defense.hpp"
#include "jekyll/harness/config.hpp"
#include "jekyll/harness/harness.hpp"
#include "jekyll/harness/pipeline.hpp"
#include "jekyll/ingest/ingest.hpp"
#include "jekyll/metrics/metrics.hpp"
#include "jekyll/progression/progression.hpp"
#include "jekyll/translator/training.hpp"

namespace fs = std::filesystem;
namespace pl = jekyll::harness::pipeline;
using jekyll::harness::Config;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_file;
  std::vector<std::string> overrides;
  long long seed = -1;
  bool deterministic = false;
  bool verbose = false;
};

Config resolve(const Globals& g) {
  Config c = Config::defaults();
  if (!g.config_file.empty()) c.merge(Config::load(g.config_file));
  c.apply(g.overrides);
  if (g.seed >= 0) c.set("experiment.seed", std::to_string(g.seed));
  if (g.deterministic) c.set("experiment.deterministic", "true");
  return c;
}

std::uint64_t seed_of(const Config& c) {
  return static_cast<std::uint64_t>(c.get_int("experiment.seed", 7));
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw jekyll::IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(dir)) return {dir};
  if (!fs::is_directory(dir)) throw jekyll::IoError("no such image directory " + dir.string());
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg"))
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw jekyll::ValidationError("bad alpha '" + item + "'");
    }
  }
  return out;
}

jekyll::classifiers::ClassifierRole role_for(const std::string& role, const std::string& partition) {
  using R = jekyll::classifiers::ClassifierRole;
  const bool attack = partition == "attack";
  if (partition != "attack" && partition != "evaluation")
    throw jekyll::ValidationError("partition must be attack or evaluation");
  if (role == "disease") return attack ? R::attack_disease : R::evaluation_disease;
  if (role == "identity") return attack ? R::attack_identity : R::evaluation_identity;
  throw jekyll::ValidationError("role must be disease or identity");
}

void print_run(const jekyll::harness::RunResult& r) {
  for (const auto& s : r.steps)
    std::cout << s.name << ": " << jekyll::harness::to_string(s.state)
              << (s.error.empty() ? "" : " (" + s.error + ")") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disease-injection translation attack benchmark"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_file, "Configuration file (section.key = value)");
  app.add_option("--set", g.overrides, "Override a configuration key: section.key=value");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_flag("--deterministic", g.deterministic, "Force deterministic mode");
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a toy dataset with its oracle");
  int patients = -1, images_per = -1, resolution = -1, stages = -1;
  bool color = false;
  std::string out;
  synth->add_option("--patients", patients);
  synth->add_option("--images-per", images_per);
  synth->add_option("--resolution", resolution);
  synth->add_option("--stages", stages);
  synth->add_flag("--color", color);
  synth->add_option("--out", out)->required();

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Partition patients (and screen victims)");
  std::string manifest, disease_eval, identity_eval;
  double eval_fraction = -1;
  int min_images = -1;
  prepare->add_option("--manifest", manifest)->required();
  prepare->add_option("--eval-fraction", eval_fraction);
  prepare->add_option("--min-images", min_images);
  prepare->add_option("--disease-eval", disease_eval, "Evaluation disease checkpoint; enables victim screening");
  prepare->add_option("--identity-eval", identity_eval);
  prepare->add_option("--out", out)->required();

  // train-classifier
  auto* train_clf = app.add_subcommand("train-classifier", "Train one disease or identity classifier");
  std::string role, partition_name, partitions_dir;
  train_clf->add_option("--role", role)->required()->check(CLI::IsMember({"disease", "identity"}));
  train_clf->add_option("--partition", partition_name)->required()->check(CLI::IsMember({"attack", "evaluation"}));
  train_clf->add_option("--manifest", manifest)->required();
  train_clf->add_option("--partitions", partitions_dir, "Directory holding attack.json and evaluation.json")->required();
  train_clf->add_option("--out", out)->required();

  // train-gan
  auto* train_gan = app.add_subcommand("train-gan", "Train the disease-injection translator");
  std::string data_dir;
  train_gan->add_option("--data", data_dir, "Run directory with prepare/ and classifiers/")->required();
  train_gan->add_option("--manifest", manifest);
  train_gan->add_option("--out", out)->required();

  // translate
  auto* translate = app.add_subcommand("translate", "Translate one image");
  std::string model_dir, input, output, direction = "xy";
  translate->add_option("--model", model_dir)->required();
  translate->add_option("--input", input)->required();
  translate->add_option("--direction", direction)->check(CLI::IsMember({"xy", "yx"}));
  translate->add_option("--output", output)->required();

  // interpolate
  auto* interp = app.add_subcommand("interpolate", "Blend a non-disease image toward a diseased one");
  std::string nd, d, alphas_text;
  interp->add_option("--nd", nd)->required();
  interp->add_option("--d", d)->required();
  interp->add_option("--alphas", alphas_text)->required();
  interp->add_option("--disease-eval", disease_eval, "Scores the frames and writes curve.json");
  interp->add_option("--out", out)->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score a translator against the evaluation models");
  std::string victims_file;
  evaluate->add_option("--model", model_dir)->required();
  evaluate->add_option("--victims", victims_file)->required();
  evaluate->add_option("--manifest", manifest)->required();
  evaluate->add_option("--disease-eval", disease_eval)->required();
  evaluate->add_option("--identity-eval", identity_eval)->required();
  evaluate->add_option("--out", out)->required();

  // defend
  auto* defend = app.add_subcommand("defend", "Train a fake-image detector");
  defend->require_subcommand(1);
  auto* blind = defend->add_subcommand("train-blind", "One-class SVM on colour statistics of real images");
  std::string images_dir;
  blind->add_option("--images", images_dir)->required();
  blind->add_option("--out", out)->required();
  auto* supervised = defend->add_subcommand("train-supervised", "MesoNet on real vs translated images");
  supervised->add_option("--manifest", manifest)->required();
  supervised->add_option("--model", model_dir)->required();
  supervised->add_option("--out", out)->required();

  // detect
  auto* detect = app.add_subcommand("detect", "Flag images as real or fake");
  detect->add_option("--model", model_dir, "blind.json or a MesoNet directory")->required();
  detect->add_option("--images", images_dir)->required();
  detect->add_option("--out", out)->required();

  // run / compare / audit
  auto* run = app.add_subcommand("run", "Run the full pipeline into an artifact directory");
  bool fresh = false;
  run->add_option("--out", out)->required();
  run->add_flag("--fresh", fresh, "Ignore completed steps");
  auto* compare = app.add_subcommand("compare", "Difference of two evaluation reports");
  std::string report_a, report_b;
  compare->add_option("a", report_a)->required();
  compare->add_option("b", report_b)->required();
  compare->add_option("--out", out);
  auto* audit = app.add_subcommand("audit", "List files not produced by a completed step");
  audit->add_option("dir", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  spdlog::set_level(g.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    Config c = resolve(g);
    const auto seed = seed_of(c);
    const auto hash = c.hash();

    if (*synth) {
      if (patients > 0) c.set("synth.patients", std::to_string(patients));
      if (images_per > 0) c.set("synth.images_per_patient", std::to_string(images_per));
      if (resolution > 0) c.set("synth.resolution", std::to_string(resolution));
      if (stages > 0) c.set("synth.stages", std::to_string(stages));
      if (color) c.set("synth.color", "true");
      pl::synthesize(c, seed, out);
      std::cout << fs::path(out) / "manifest.jsonl" << '\n';
    } else if (*prepare) {
      if (eval_fraction >= 0) c.set("prepare.eval_fraction", std::to_string(eval_fraction));
      if (min_images >= 0) c.set("prepare.min_images", std::to_string(min_images));
      const auto m = jekyll::ingest::load_manifest(manifest);
      const auto parts = pl::prepare(m, c, seed, out);
      std::cout << "attack " << parts.attack.patient_ids.size() << " patients, evaluation "
                << parts.evaluation.patient_ids.size() << '\n';
      if (!disease_eval.empty() && !identity_eval.empty()) {
        const auto v = pl::screen_victims(m, parts.evaluation, *pl::load_classifier(disease_eval),
                                          *pl::load_classifier(identity_eval));
        jekyll::ingest::save_victim_set(v, fs::path(out) / "victims.json");
        std::cout << "victims " << v.entries.size() << '\n';
      }
    } else if (*train_clf) {
      const auto m = jekyll::ingest::load_manifest(manifest);
      const auto part = jekyll::ingest::load_partition(fs::path(partitions_dir) / (partition_name + ".json"));
      const auto s = pl::train_role(m, part, role_for(role, partition_name),
                                    pl::target_condition(c, m), c, seed, hash, out);
      std::cout << "accuracy " << s.accuracy << '\n';
    } else if (*train_gan) {
      if (!manifest.empty()) c.set("data.manifest", manifest);
      const auto m = jekyll::ingest::load_manifest(pl::manifest_path(c, data_dir));
      const auto attack = jekyll::ingest::load_partition(
          pl::partition_path(data_dir, jekyll::PartitionName::attack));
      pl::train_gan(m, attack, c, seed, data_dir, out);
    } else if (*translate) {
      const auto model = jekyll::translator::TranslationModel::load(model_dir);
      auto img = jekyll::load_image(input);
      if (img.height() != model->resolution() || img.width() != model->resolution())
        img = jekyll::resize_image(img, model->resolution());
      jekyll::save_image(jekyll::translator::translate(
                             *model, img, jekyll::translator::direction_from_string(direction)),
                         output);
    } else if (*interp) {
      jekyll::progression::InterpolationSpec spec{parse_alphas(alphas_text), std::nullopt};
      spec.validate();
      const auto a = jekyll::load_image(nd);
      const auto b = jekyll::load_image(d);
      fs::create_directories(out);
      for (std::size_t i = 0; i < spec.alphas.size(); ++i)
        jekyll::save_image(jekyll::progression::interpolate_stage(a, b, spec.alphas[i]),
                           fs::path(out) / ("frame_" + std::to_string(i) + ".png"));
      if (!disease_eval.empty()) {
        const auto curve = jekyll::progression::progression_curve(*pl::load_classifier(disease_eval),
                                                                  a, b, spec.alphas);
        write_json(fs::path(out) / "curve.json", curve.to_json());
        std::cout << curve.to_json().dump() << '\n';
      }
    } else if (*evaluate) {
      const auto m = jekyll::ingest::load_manifest(manifest);
      const auto model = jekyll::translator::TranslationModel::load(model_dir);
      const auto victims = pl::load_victims(victims_file, m);
      const auto ced = pl::load_classifier(disease_eval);
      const auto cei = pl::load_classifier(identity_eval);
      std::vector<jekyll::ImageTensor> real;
      std::set<std::string> victim_patients;
      for (const auto& v : victims.entries) victim_patients.insert(v.patient_id);
      const auto cond = pl::target_condition(c, m);
      for (auto& img : jekyll::ingest::load_images(m, victim_patients))
        if (img.label == cond) real.push_back(std::move(img.image));
      const auto report = pl::evaluate(*model, victims, *ced, *cei, real, c, seed, hash);
      jekyll::metrics::write_report(report, out);
      std::cout << "R_d " << report.r_d.value.value_or(-1) << "  R_i "
                << report.r_i.value.value_or(-1) << '\n';
    } else if (*blind) {
      std::vector<jekyll::ImageTensor> reals;
      for (const auto& p : image_files(images_dir)) reals.push_back(jekyll::load_image(p));
      const auto det = jekyll::defense::BlindDetector::train(
          reals, {c.get_double("defend.nu", 0.12), c.get_double("defend.gamma", 0.1)});
      det.save(out);
      std::cout << "support vectors " << det.svm().support_vector_count() << '\n';
    } else if (*supervised) {
      const auto m = jekyll::ingest::load_manifest(manifest);
      const auto model = jekyll::translator::TranslationModel::load(model_dir);
      pl::defend(m, *model, c, seed, hash, out);
      std::ifstream is(fs::path(out) / "detectors.json");
      std::cout << json::parse(is)["supervised"].dump() << '\n';
    } else if (*detect) {
      json verdicts = json::array();
      const bool is_blind = fs::is_regular_file(model_dir);
      std::optional<jekyll::defense::BlindDetector> bd;
      std::optional<jekyll::defense::SupervisedDetector> sd;
      if (is_blind)
        bd = jekyll::defense::BlindDetector::load(model_dir);
      else
        sd = jekyll::defense::SupervisedDetector::load(model_dir);
      for (const auto& p : image_files(images_dir)) {
        auto img = jekyll::load_image(p);
        double score;
        jekyll::defense::Verdict v;
        if (bd) {
          score = bd->score(jekyll::defense::csd_features(img));
          v = bd->detect_features(jekyll::defense::csd_features(img));
        } else {
          if (img.height() != sd->net->resolution()) img = jekyll::resize_image(img, sd->net->resolution());
          score = sd->net->probabilities({img}).front();
          v = sd->detect(img);
        }
        verdicts.push_back({{"path", p.string()}, {"verdict", jekyll::defense::to_string(v)}, {"score", score}});
      }
      write_json(out, verdicts);
    } else if (*run) {
      auto plan = jekyll::harness::make_standard_plan(c, out);
      plan.resumable = !fresh;
      const auto r = jekyll::harness::run_experiment(plan);
      print_run(r);
      return r.ok ? 0 : 2;
    } else if (*compare) {
      const auto diff = jekyll::harness::compare_runs(fs::path(report_a), fs::path(report_b));
      if (!out.empty()) write_json(out, diff.to_json());
      std::cout << diff.to_json().dump(2) << '\n';
    } else if (*audit) {
      const auto orphans = jekyll::harness::audit_artifacts(out);
      for (const auto& p : orphans) std::cout << p.string() << '\n';
      return orphans.empty() ? 0 : 1;
    }
  } catch (const jekyll::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const jekyll::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
