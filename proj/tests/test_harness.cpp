#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "jekyll/core/error.hpp"
#include "jekyll/harness/harness.hpp"
#include "jekyll/metrics/metrics.hpp"
#include "support/temp_dir.hpp"

using namespace jekyll;
using namespace jekyll::harness;
namespace fs = std::filesystem;

namespace {

void touch(const fs::path& p, const std::string& text = "x") {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

PlanStep writer(const std::string& name, std::vector<std::string> in, const std::string& out, int* counter,
                bool* fail = nullptr) {
  return {name, std::move(in), {out}, [=](const StepContext& c) {
            ++*counter;
            if (fail && *fail) throw std::runtime_error(name + " interrupted");
            touch(c.artifact_dir / out, name);
          }};
}

int exit_code(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Config tiny_config() {
  Config c = Config::defaults();
  c.apply({"synth.patients=12", "synth.images_per_patient=20", "synth.resolution=32", "prepare.eval_fraction=0.34",
           "classifier.width=8", "classifier.disease_epochs=4", "classifier.identity_epochs=8",
           "gan.generator_width=2", "gan.residual_blocks=1", "gan.discriminator_width=2", "gan.epochs_constant=1",
           "gan.epochs_decay=1", "gan.steps_per_epoch=4", "defend.epochs=1"});
  return c;
}

}  // namespace

TEST_CASE("config text") {
  const auto c = Config::parse("# comment\n a.b = 1 \n\nc.d=two words\na.b = 3\n");
  CHECK(c.get_int("a.b", 0) == 3);
  CHECK(c.get_string("c.d") == "two words");
  CHECK(c.get_double("x.y", 2.5) == 2.5);
  try {
    Config::parse("a.b = 1\nno equals here\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  CHECK_THROWS_AS(Config::parse("nodot = 1\n"), ParseError);
  CHECK_THROWS_AS(Config::parse("a.b = x\n").get_int("a.b", 0), ValidationError);
  CHECK_THROWS_AS(Config::parse("a.b = maybe\n").get_bool("a.b", false), ValidationError);
  CHECK_THROWS_AS(Config::load("/nonexistent/cfg.txt"), IoError);

  // The hash ignores ordering and comments but not values.
  CHECK(Config::parse("a.b=1\nc.d=2\n").hash() == Config::parse("# x\nc.d = 2\na.b = 1\n").hash());
  CHECK(Config::parse("a.b=1\n").hash() != Config::parse("a.b=2\n").hash());
  Config d = Config::defaults();
  d.apply({"gan.lambda_identity=0"});
  CHECK(loss_weights_from(d).identity == 0);
  CHECK(loss_weights_from(Config::defaults()).cycle == 200);
  CHECK_THROWS_AS(d.apply({"novalue"}), ValidationError);

  testing::TempDir dir("cfg");
  d.save(dir / "c.txt");
  CHECK(Config::load(dir / "c.txt").hash() == d.hash());
}

TEST_CASE("plan validation") {
  testing::TempDir dir("plan");
  int n = 0;
  ExperimentPlan plan;
  plan.artifact_dir = dir.path();
  plan.steps = {writer("a", {"b.out"}, "a.out", &n), writer("b", {"a.out"}, "b.out", &n)};
  CHECK_THROWS_AS(plan.validate(), ValidationError);

  plan.steps = {writer("a", {}, "a.out", &n), writer("a", {}, "b.out", &n)};
  CHECK_THROWS_AS(plan.validate(), ValidationError);

  plan.steps = {writer("a", {}, "a.out", &n), writer("b", {"missing.out"}, "b.out", &n)};
  CHECK_THROWS_AS(plan.validate(), ValidationError);
  touch(dir / "missing.out");
  CHECK_NOTHROW(plan.validate());

  plan.steps = {writer("a", {}, "dir", &n), writer("b", {"dir/inner.json"}, "b.out", &n)};
  CHECK(step_dependencies(plan.steps)[1] == std::vector<std::size_t>{0});
  CHECK_NOTHROW(plan.validate());
}

TEST_CASE("resume after an interrupted step") {
  testing::TempDir dir("resume");
  int c1 = 0, c2 = 0, c3 = 0, c4 = 0;
  bool fail = true;
  ExperimentPlan plan;
  plan.artifact_dir = dir.path();
  plan.config = Config::parse("experiment.seed = 3\n");
  plan.steps = {writer("one", {}, "one.out", &c1), writer("two", {"one.out"}, "two.out", &c2),
                writer("three", {"two.out"}, "three.out", &c3, &fail), writer("four", {"three.out"}, "four.out", &c4)};

  const auto first = run_experiment(plan);
  CHECK_FALSE(first.ok);
  REQUIRE(first.steps.size() == 3);
  CHECK(first.steps[2].state == StepState::failed);
  CHECK(first.steps[2].error.find("interrupted") != std::string::npos);
  CHECK(c4 == 0);

  fail = false;
  const auto second = run_experiment(plan);
  CHECK(second.ok);
  CHECK(second.steps[0].state == StepState::skipped);
  CHECK(second.steps[1].state == StepState::skipped);
  CHECK(second.steps[2].state == StepState::done);
  CHECK(c1 == 1);
  CHECK(c2 == 1);
  CHECK(c3 == 2);
  CHECK(c4 == 1);

  // A removed output reruns its step and everything after it.
  fs::remove(dir / "two.out");
  run_experiment(plan);
  CHECK(c1 == 1);
  CHECK(c2 == 2);
  CHECK(c4 == 2);

  // A changed configuration invalidates all earlier results.
  plan.config = Config::parse("experiment.seed = 4\n");
  run_experiment(plan);
  CHECK(c1 == 2);

  plan.resumable = false;
  run_experiment(plan);
  CHECK(c1 == 3);

  CHECK(audit_artifacts(dir.path()).empty());
  touch(dir / "stray.bin");
  const auto orphans = audit_artifacts(dir.path());
  REQUIRE(orphans.size() == 1);
  CHECK(orphans[0].filename() == "stray.bin");
}

TEST_CASE("report comparison") {
  metrics::ReportInputs in;
  in.image_refs = {"a.png"};
  in.patient_ids = {"p0"};
  metrics::InjectionResult inj;
  inj.probabilities = {0.9};
  inj.diseased = {true};
  inj.rate = 100;
  in.injection = inj;
  const auto a = metrics::assemble_report(in);
  const auto same = compare_runs(a, a);
  CHECK(*same.r_d.delta == 0);
  CHECK_FALSE(same.r_i.delta.has_value());
  in.injection->probabilities = {0.2};
  in.injection->diseased = {false};
  in.injection->rate = 0;
  const auto diff = compare_runs(a, metrics::assemble_report(in));
  CHECK(*diff.r_d.delta == doctest::Approx(-100));
  CHECK(diff.to_json()["r_d"]["delta"].get<double>() == doctest::Approx(-100));
}

TEST_CASE("standard plan end to end") {
  testing::TempDir dir("e2e");
  const auto plan = make_standard_plan(tiny_config(), dir / "run");
  std::vector<std::string> names;
  for (const auto& s : plan.steps) names.push_back(s.name);
  CHECK(names == std::vector<std::string>{"synth", "prepare", "classifiers", "victims", "gan", "evaluate", "defend"});

  const auto result = run_experiment(plan);
  for (const auto& s : result.steps)
    if (s.state == StepState::failed) MESSAGE(s.name << ": " << s.error);
  REQUIRE(result.ok);
  const fs::path run = dir / "run";
  const auto report = metrics::read_report(run / "evaluate" / "report.json");
  CHECK(report.r_d.value.has_value());
  CHECK(report.r_i.value.has_value());
  CHECK(fs::exists(run / "defend" / "detectors.json"));
  std::ifstream is(run / "defend" / "detectors.json");
  const auto det = nlohmann::json::parse(is);
  CHECK(det["blind"]["value"].is_null());  // grayscale data
  CHECK(det["supervised"].contains("accuracy"));
  CHECK(audit_artifacts(run).empty());

  // Resuming a finished run does no work.
  const auto again = run_experiment(plan);
  for (const auto& s : again.steps) CHECK(s.state == StepState::skipped);
  const auto zero = compare_runs(run / "evaluate" / "report.json", run / "evaluate" / "report.json");
  CHECK(*zero.r_d.delta == 0);

#ifdef JEKYLLBENCH
  const std::string bench = JEKYLLBENCH;
  CHECK(exit_code(bench + " audit " + run.string()) == 0);
  touch(run / "stray.txt");
  CHECK(exit_code(bench + " audit " + run.string()) == 1);
  CHECK(exit_code(bench + " compare " + (run / "evaluate/report.json").string() + " " +
                  (run / "evaluate/report.json").string()) == 0);
  CHECK(exit_code(bench + " translate --model " + (run / "gan/model").string() + " --input " +
                  (run / "data/images/p000/img000.png").string() + " --output " + (dir / "t.png").string()) == 0);
  CHECK(fs::exists(dir / "t.png"));
#endif
}

#ifdef JEKYLLBENCH
TEST_CASE("command line exit codes") {
  const std::string bench = JEKYLLBENCH;
  testing::TempDir dir("cli");
  CHECK(exit_code(bench + " --help") == 0);
  CHECK(exit_code(bench + " no-such-command") == 1);
  CHECK(exit_code(bench + " synth") == 1);  // --out is required
  CHECK(exit_code(bench + " --set broken synth --out " + (dir / "x").string()) == 1);
  CHECK(exit_code(bench + " synth --patients 3 --images-per 12 --resolution 8 --out " + (dir / "s").string()) == 1);
  CHECK(exit_code(bench + " translate --model " + (dir / "none").string() + " --input a.png --output b.png") == 2);
  CHECK(exit_code(bench + " synth --patients 4 --images-per 12 --resolution 32 --out " + (dir / "ok").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "manifest.jsonl"));
  CHECK(exit_code(bench + " prepare --manifest " + (dir / "ok/manifest.jsonl").string() + " --min-images 5 --out " +
                  (dir / "parts").string()) == 0);
  CHECK(fs::exists(dir / "parts" / "attack.json"));
}
#endif
