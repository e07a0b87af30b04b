// Acceptance run: one PASS/FAIL line per criterion.
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <sys/wait.h>

#include <spdlog/spdlog.h>

#include "jekyll/core/error.hpp"
#include "jekyll/defense/defense.hpp"
#include "jekyll/harness/harness.hpp"
#include "jekyll/harness/pipeline.hpp"
#include "jekyll/metrics/metrics.hpp"
#include "jekyll/progression/progression.hpp"
#include "jekyll/synthdata/synthdata.hpp"
#include "jekyll/translator/training.hpp"
#include "support/architecture.hpp"
#include "support/probes.hpp"

using namespace jekyll;
namespace fs = std::filesystem;
namespace pl = jekyll::harness::pipeline;
using classifiers::ClassifierRole;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::vector<std::pair<int, bool>> g_results;

void report(int id, const std::string& label, const Outcome& o, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("criterion %2d %-28s %s  %s  [%.0f s]\n", id, label.c_str(), o.pass ? "PASS" : "FAIL",
              o.detail.c_str(), secs);
  std::fflush(stdout);
  g_results.emplace_back(id, o.pass);
}

template <typename Fn>
void criterion(int id, const std::string& label, Fn&& fn) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  report(id, label, o, start);
}

std::string num(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Captured {
  int status = -1;
  std::string text;
};

Captured capture(const std::string& cmd) {
  Captured c;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return c;
  std::array<char, 512> buf{};
  while (fgets(buf.data(), buf.size(), p)) c.text += buf.data();
  const int st = pclose(p);
  c.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  while (!c.text.empty() && c.text.back() == '\n') c.text.pop_back();
  return c;
}

harness::Config toy_config() {
  harness::Config c = harness::Config::defaults();
  c.set("gan.checkpoints", "false");
  return c;
}

harness::RunResult run_standard(const harness::Config& c, const fs::path& dir) {
  auto plan = harness::make_standard_plan(c, dir);
  return harness::run_experiment(plan);
}

std::string failed_step(const harness::RunResult& r) {
  for (const auto& s : r.steps)
    if (s.state == harness::StepState::failed) return s.name + ": " + s.error;
  return "";
}

// Retrains only the translator on a finished run's data and classifiers, then evaluates it.
struct Variant {
  std::unique_ptr<translator::TranslationModel> model;
  metrics::EvaluationReport report;
};

Variant train_variant(const fs::path& base, const harness::Config& c, const fs::path& out) {
  const auto seed = static_cast<std::uint64_t>(c.get_int("experiment.seed", 7));
  const auto m = ingest::load_manifest(pl::manifest_path(c, base));
  const auto attack = ingest::load_partition(pl::partition_path(base, PartitionName::attack));
  const auto eval = ingest::load_partition(pl::partition_path(base, PartitionName::evaluation));
  Variant v;
  v.model = pl::train_gan(m, attack, c, seed, base, out / "gan");
  const auto victims = pl::load_victims(pl::victims_path(base), m);
  const auto ced = pl::load_classifier(pl::classifier_dir(base, ClassifierRole::evaluation_disease));
  const auto cei = pl::load_classifier(pl::classifier_dir(base, ClassifierRole::evaluation_identity));
  const auto cond = pl::target_condition(c, m);
  std::vector<ImageTensor> real;
  for (auto& img : ingest::load_images(m, eval.patient_ids))
    if (img.label == cond) real.push_back(std::move(img.image));
  v.report = pl::evaluate(*v.model, victims, *ced, *cei, real, c, seed, c.hash());
  metrics::write_report(v.report, out / "report.json");
  return v;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  return json::parse(is);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "jekyll_acceptance";
  const bool keep = argc > 2 && std::string(argv[2]) == "--keep";
  if (!keep) fs::remove_all(work);
  fs::create_directories(work);
  spdlog::set_level(spdlog::level::warn);
  std::printf("acceptance work dir %s\n", work.string().c_str());

  criterion(1, "loss unit suite", [] {
    const auto t0 = Clock::now();
    const auto r = capture(std::string(NUMERIC_CHECKS) + " losses 2>&1");
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    return Outcome{r.status == 0 && secs < 60, r.text};
  });
  criterion(2, "gradient suite", [] {
    const auto t0 = Clock::now();
    const auto r = capture(std::string(NUMERIC_CHECKS) + " gradients 2>&1");
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    int checks = 0;
    if (const auto at = r.text.find("checks="); at != std::string::npos) checks = std::stoi(r.text.substr(at + 7));
    return Outcome{r.status == 0 && checks >= 100 && secs < 300, r.text};
  });
  criterion(3, "architecture conformance", [] {
    translator::Generator g(translator::GeneratorConfig::reference(), 1);
    translator::PatchDiscriminator d(translator::DiscriminatorConfig::reference(), 2);
    auto problems = testing::parameter_mismatches(g.parameters(), testing::generator_table(), 3, "generator");
    for (auto& p : testing::parameter_mismatches(d.parameters(), testing::discriminator_table(), 3, "discriminator"))
      problems.push_back(p);
    nn::NoGradGuard guard;
    nn::Tensor x({1, 3, 256, 256});
    x.fill(0.1f);
    translator::ShapeTrace gt, dt;
    g.forward(nn::Var(x), &gt);
    const auto out = d.forward(nn::Var(x), &dt);
    for (auto& p : testing::trace_mismatches(gt, testing::generator_table(), 256, "generator")) problems.push_back(p);
    for (auto& p : testing::trace_mismatches(dt, testing::discriminator_table(), 256, "discriminator"))
      problems.push_back(p);
    const bool patch_ok = out.shape() == std::vector<int>{1, 1, 32, 32};
    return Outcome{problems.empty() && patch_ok,
                   problems.empty() ? "all filter shapes and layer outputs match; patch map 32x32x1"
                                    : problems.front()};
  });

  // The full toy attack feeds criteria 4-7, 9 and 10.
  const harness::Config base = toy_config();
  const fs::path run_a = work / "full";
  std::optional<metrics::EvaluationReport> full;
  criterion(4, "end-to-end toy attack", [&] {
    const auto r = run_standard(base, run_a);
    if (!r.ok) return Outcome{false, "pipeline failed at " + failed_step(r)};
    full = metrics::read_report(pl::report_path(run_a));
    const double rd = full->r_d.value.value_or(0), ri = full->r_i.value.value_or(0);
    const auto victims = full->per_image.size();
    std::ostringstream d;
    d << num("R_d %.1f%%", rd) << num(", R_i %.1f%%", ri) << ", " << victims << " victims";
    return Outcome{rd >= 80 && ri >= 80 && victims >= 200, d.str()};
  });

  criterion(5, "ablation direction", [&] {
    if (!full) return Outcome{false, "needs the full run"};
    harness::Config no_d = base;
    no_d.set("gan.lambda_disease", "0");
    harness::Config no_i = base;
    no_i.set("gan.lambda_identity", "0");
    const auto vd = train_variant(run_a, no_d, work / "no_disease");
    const auto vi = train_variant(run_a, no_i, work / "no_identity");
    const double rd = *full->r_d.value, ri = *full->r_i.value;
    const double rd0 = vd.report.r_d.value.value_or(0), ri0 = vi.report.r_i.value.value_or(100);
    const bool disease_ok = rd - rd0 >= 15, identity_ok = ri0 < ri;
    std::ostringstream d;
    d << num("lambda_d=0: R_d %.1f%%", rd0) << num(" vs %.1f%%", rd) << (disease_ok ? " ok" : " too small")
      << num("; lambda_i=0: R_i %.1f%%", ri0) << num(" vs %.1f%%", ri) << (identity_ok ? " ok" : " not lower");
    return Outcome{disease_ok && identity_ok, d.str()};
  });

  criterion(6, "progression monotone", [&] {
    const auto m = ingest::load_manifest(pl::manifest_path(base, run_a));
    const auto model = translator::TranslationModel::load(pl::model_dir(run_a));
    const auto victims = pl::load_victims(pl::victims_path(run_a), m);
    const auto ced = pl::load_classifier(pl::classifier_dir(run_a, ClassifierRole::evaluation_disease));
    const std::vector<double> alphas{0, 0.25, 0.5, 0.75, 1};
    int monotone = 0;
    bool endpoints = true;
    for (const auto& v : victims.entries) {
      const auto fake = translator::translate(*model, v.image, translator::Direction::x_to_y);
      endpoints = endpoints && progression::interpolate_stage(v.image, fake, 0.0) == v.image &&
                  progression::interpolate_stage(v.image, fake, 1.0) == fake;
      monotone += progression::progression_curve(*ced, v.image, fake, alphas).monotone;
    }
    const double frac = victims.entries.empty() ? 0 : double(monotone) / victims.entries.size();
    return Outcome{frac >= 0.9 && endpoints, num("%.1f%% of victims nondecreasing", 100 * frac) +
                                                 (endpoints ? ", endpoints exact" : ", endpoint mismatch")};
  });

  criterion(7, "MS-SSIM suite", [&] {
    if (!full) return Outcome{false, "needs the full run"};
    const auto m = ingest::load_manifest(pl::manifest_path(base, run_a));
    std::set<std::string> some{m.records[0].patient_id, m.records[1].patient_id};
    const auto imgs = ingest::load_images(m, some);
    double self_err = 0, asym = 0;
    for (std::size_t i = 0; i + 1 < imgs.size(); i += 3) {
      self_err = std::max(self_err, std::abs(metrics::mssim(imgs[i].image, imgs[i].image) - 1.0));
      asym = std::max(asym, std::abs(metrics::mssim(imgs[i].image, imgs[i + 1].image) -
                                     metrics::mssim(imgs[i + 1].image, imgs[i].image)));
    }
    const auto rr = full->mssim_real_real.value, rf = full->mssim_real_fake.value;
    if (!rr || !rf) return Outcome{false, "cohort MS-SSIM missing from the report"};
    const double gap = std::abs(*rr - *rf);
    std::ostringstream d;
    d << num("|1-mssim(x,x)| %.1e", self_err) << num(", asymmetry %.1e", asym) << num(", real-real %.3f", *rr)
      << num(" real-fake %.3f", *rf) << num(" gap %.3f", gap);
    return Outcome{self_err <= 1e-6 && asym <= 1e-9 && gap <= 0.05, d.str()};
  });

  criterion(8, "blind detector nu-property", [&] {
    synth::ToySpec spec;
    spec.n_patients = 20;
    spec.images_per_patient = 20;
    spec.color = true;
    const auto ds = synth::generate_toy_dataset(spec, 8, work / "color_toy");
    std::set<std::string> all;
    for (const auto& r : ds.manifest.records) all.insert(r.patient_id);
    std::vector<ImageTensor> reals;
    for (auto& img : ingest::load_images(ds.manifest, all)) reals.push_back(std::move(img.image));
    const auto det = defense::BlindDetector::train(reals, {0.12, 0.1});
    int flagged = 0, probes = 0;
    for (std::size_t k = 0; k < reals.size(); k += 4, ++probes)
      flagged += defense::blind_detect(det, testing::channel_shuffle_probe(reals[k], k)) == defense::Verdict::fake;
    const double frac = det.training_anomaly_fraction(), probe_rate = double(flagged) / probes;
    return Outcome{frac <= 0.17 && probe_rate >= 0.7,
                   num("training anomaly fraction %.3f", frac) + num(", probes flagged %.1f%%", 100 * probe_rate)};
  });

  criterion(9, "supervised MesoNet", [&] {
    const auto j = read_json(pl::detector_dir(run_a) / "detectors.json");
    const double acc = j.at("supervised").at("accuracy").get<double>();
    return Outcome{acc >= 95, num("test accuracy %.1f%%", acc) +
                                  num(" on %.0f held-out patients", double(j.at("test_patients").size()))};
  });

  criterion(10, "repurposed evasion", [&] {
    const auto j = read_json(pl::detector_dir(run_a) / "detectors.json");
    const double baseline = j.at("supervised").at("recall").get<double>();
    harness::Config rep = base;
    rep.set("gan.repurposed", "true");
    const auto v = train_variant(run_a, rep, work / "repurposed");
    const auto m = ingest::load_manifest(pl::manifest_path(base, run_a));
    std::set<std::string> test_ids;
    for (const auto& p : j.at("test_patients")) test_ids.insert(p.get<std::string>());
    auto samples = pl::detector_samples(m, test_ids, pl::target_condition(base, m), *v.model);
    const auto det = defense::SupervisedDetector::load(pl::detector_dir(run_a) / "mesonet");
    const double recall = det.evaluate(samples).recall;
    return Outcome{baseline - recall >= 30,
                   num("fake recall %.1f%%", baseline) + num(" -> %.1f%%", recall) +
                       num(" (repurposed R_d %.1f%%)", v.report.r_d.value.value_or(-1))};
  });

  criterion(11, "reproducibility", [&] {
    if (!full) return Outcome{false, "needs the full run"};
    const fs::path run_b = work / "repeat";
    const auto r = run_standard(base, run_b);
    if (!r.ok) return Outcome{false, "repeat failed at " + failed_step(r)};
    const auto again = metrics::read_report(pl::report_path(run_b));
    const bool same = again.to_json() == full->to_json();
    const auto diff = harness::compare_runs(*full, again);
    return Outcome{same, same ? "identical reports" : "reports differ: " + diff.to_json().dump()};
  });

  int passed = 0;
  for (const auto& [id, ok] : g_results) passed += ok;
  std::printf("acceptance: %d/%zu criteria passed\n", passed, g_results.size());
  if (!keep) fs::remove_all(work);
  return passed == static_cast<int>(g_results.size()) ? 0 : 1;
}
