#include "jekyll/harness/harness.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "jekyll/core/error.hpp"
#include "jekyll/harness/pipeline.hpp"
#include "jekyll/ingest/ingest.hpp"
#include "jekyll/translator/model.hpp"

namespace jekyll::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// True when path equals root or lies beneath it (both relative, lexically normalized).
bool within(const fs::path& path, const fs::path& root) {
  auto p = path.lexically_normal();
  auto r = root.lexically_normal();
  auto pi = p.begin();
  for (auto ri = r.begin(); ri != r.end(); ++ri, ++pi) {
    if (ri->empty()) continue;
    if (pi == p.end() || *pi != *ri) return false;
  }
  return true;
}

json read_state(const fs::path& file) {
  std::ifstream is(file);
  if (!is) return json::object();
  try {
    return json::parse(is);
  } catch (const json::exception&) {
    spdlog::warn("ignoring unreadable run state {}", file.string());
    return json::object();
  }
}

void write_state(const fs::path& file, const json& state) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot write " + tmp.string());
    os << state.dump(2) << '\n';
  }
  fs::rename(tmp, file);
}

MetricDelta delta(const metrics::Metric& a, const metrics::Metric& b) {
  MetricDelta d{a.value, b.value, std::nullopt};
  if (a.value && b.value) d.delta = *b.value - *a.value;
  return d;
}

json delta_json(const MetricDelta& d) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"a", opt(d.a)}, {"b", opt(d.b)}, {"delta", opt(d.delta)}};
}

}  // namespace

const char* to_string(StepState s) {
  switch (s) {
    case StepState::pending: return "pending";
    case StepState::done: return "done";
    case StepState::skipped: return "skipped";
    case StepState::failed: return "failed";
  }
  return "?";
}

std::vector<std::vector<std::size_t>> step_dependencies(const std::vector<PlanStep>& steps) {
  std::vector<std::vector<std::size_t>> deps(steps.size());
  for (std::size_t b = 0; b < steps.size(); ++b)
    for (std::size_t a = 0; a < steps.size(); ++a) {
      if (a == b) continue;
      bool uses = false;
      for (const auto& in : steps[b].inputs)
        for (const auto& out : steps[a].outputs)
          if (within(in, out)) uses = true;
      if (uses) deps[b].push_back(a);
    }
  return deps;
}

void ExperimentPlan::validate() const {
  std::set<std::string> names;
  for (const auto& s : steps) {
    if (s.name.empty()) throw ValidationError("plan step without a name");
    if (!names.insert(s.name).second) throw ValidationError("duplicate plan step '" + s.name + "'");
    if (!s.run) throw ValidationError("plan step '" + s.name + "' has no action");
  }
  const auto deps = step_dependencies(steps);
  // Kahn's algorithm; leftovers mean a cycle.
  std::vector<int> indegree(steps.size(), 0);
  for (std::size_t b = 0; b < steps.size(); ++b) indegree[b] = static_cast<int>(deps[b].size());
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < steps.size(); ++i)
    if (indegree[i] == 0) ready.push_back(i);
  std::size_t visited = 0;
  while (!ready.empty()) {
    const auto a = ready.back();
    ready.pop_back();
    ++visited;
    for (std::size_t b = 0; b < steps.size(); ++b)
      if (std::find(deps[b].begin(), deps[b].end(), a) != deps[b].end() && --indegree[b] == 0)
        ready.push_back(b);
  }
  if (visited != steps.size()) throw ValidationError("plan has a dependency cycle");

  for (std::size_t b = 0; b < steps.size(); ++b) {
    for (const auto& in : steps[b].inputs) {
      bool produced = false;
      for (std::size_t a = 0; a < b; ++a)
        for (const auto& out : steps[a].outputs)
          if (within(in, out)) produced = true;
      if (!produced && !fs::exists(artifact_dir / in))
        throw ValidationError("input '" + in + "' of step '" + steps[b].name +
                              "' is not produced by an earlier step");
    }
  }
}

RunResult run_experiment(const ExperimentPlan& plan) {
  plan.validate();
  fs::create_directories(plan.artifact_dir);
  const std::string hash = plan.config.hash();
  const auto seed = static_cast<std::uint64_t>(plan.config.get_int("experiment.seed", 7));
  plan.config.save(plan.artifact_dir / "config.txt");

  RunResult result;
  result.state_file = plan.artifact_dir / "state.json";
  json state = plan.resumable ? read_state(result.state_file) : json::object();
  if (state.value("config_hash", hash) != hash) {
    spdlog::info("configuration changed; earlier step results are discarded");
    state = json::object();
  }
  state["config_hash"] = hash;
  if (!state.contains("steps")) state["steps"] = json::object();

  const StepContext ctx{plan.config, plan.artifact_dir, seed, hash};
  bool upstream_rerun = false;
  for (const auto& step : plan.steps) {
    StepStatus status{step.name, StepState::pending, {}};
    const auto& prev = state["steps"].value(step.name, json::object());
    const bool outputs_present =
        std::all_of(step.outputs.begin(), step.outputs.end(),
                    [&](const std::string& o) { return fs::exists(plan.artifact_dir / o); });
    if (plan.resumable && !upstream_rerun && prev.value("state", "") == "done" && outputs_present) {
      status.state = StepState::skipped;
      spdlog::info("step {}: already complete", step.name);
      result.steps.push_back(status);
      continue;
    }
    upstream_rerun = true;
    spdlog::info("step {}: running", step.name);
    try {
      step.run(ctx);
      status.state = StepState::done;
    } catch (const std::exception& e) {
      status.state = StepState::failed;
      status.error = e.what();
      result.ok = false;
      spdlog::error("step {} failed: {}", step.name, e.what());
    }
    state["steps"][step.name] = {{"state", to_string(status.state)},
                                 {"error", status.error},
                                 {"outputs", step.outputs}};
    write_state(result.state_file, state);
    result.steps.push_back(status);
    if (!result.ok) break;
  }
  write_state(result.state_file, state);
  return result;
}

ExperimentPlan make_standard_plan(const Config& config, const fs::path& artifact_dir) {
  namespace pl = pipeline;
  using classifiers::ClassifierRole;
  ExperimentPlan plan;
  plan.config = config;
  plan.artifact_dir = artifact_dir;
  const bool external = !config.get_string("data.manifest").empty();

  auto manifest = [](const StepContext& c) {
    return ingest::load_manifest(pl::manifest_path(c.config, c.artifact_dir));
  };
  auto partition = [](const StepContext& c, PartitionName n) {
    return ingest::load_partition(pl::partition_path(c.artifact_dir, n));
  };

  if (!external) {
    plan.steps.push_back({"synth", {}, {"data"}, [](const StepContext& c) {
                            pl::synthesize(c.config, c.seed, c.artifact_dir / "data");
                          }});
  }
  plan.steps.push_back(
      {"prepare",
       external ? std::vector<std::string>{} : std::vector<std::string>{"data"},
       {"prepare/attack.json", "prepare/evaluation.json"},
       [manifest](const StepContext& c) {
         pl::prepare(manifest(c), c.config, c.seed, c.artifact_dir / "prepare");
       }});
  plan.steps.push_back(
      {"classifiers",
       {"prepare/attack.json", "prepare/evaluation.json"},
       {"classifiers"},
       [manifest, partition](const StepContext& c) {
         const auto m = manifest(c);
         const auto cond = pl::target_condition(c.config, m);
         const auto attack = partition(c, PartitionName::attack);
         const auto eval = partition(c, PartitionName::evaluation);
         for (auto role : {ClassifierRole::attack_disease, ClassifierRole::attack_identity,
                           ClassifierRole::evaluation_disease, ClassifierRole::evaluation_identity}) {
           const bool on_attack =
               role == ClassifierRole::attack_disease || role == ClassifierRole::attack_identity;
           pl::train_role(m, on_attack ? attack : eval, role, cond, c.config, c.seed, c.config_hash,
                          pl::classifier_dir(c.artifact_dir, role));
         }
       }});
  plan.steps.push_back(
      {"victims",
       {"prepare/evaluation.json", "classifiers"},
       {"victims/victims.json"},
       [manifest, partition](const StepContext& c) {
         const auto m = manifest(c);
         const auto ced =
             pl::load_classifier(pl::classifier_dir(c.artifact_dir, ClassifierRole::evaluation_disease));
         const auto cei = pl::load_classifier(
             pl::classifier_dir(c.artifact_dir, ClassifierRole::evaluation_identity));
         const auto v = pl::screen_victims(m, partition(c, PartitionName::evaluation), *ced, *cei);
         ingest::save_victim_set(v, pl::victims_path(c.artifact_dir));
         spdlog::info("victims: {}", v.entries.size());
       }});
  plan.steps.push_back({"gan",
                        {"prepare/attack.json", "classifiers"},
                        {"gan"},
                        [manifest, partition](const StepContext& c) {
                          pl::train_gan(manifest(c), partition(c, PartitionName::attack), c.config,
                                        c.seed, c.artifact_dir, c.artifact_dir / "gan");
                        }});
  plan.steps.push_back(
      {"evaluate",
       {"gan/model", "victims/victims.json", "classifiers", "prepare/evaluation.json"},
       {"evaluate"},
       [manifest, partition](const StepContext& c) {
         const auto m = manifest(c);
         const auto cond = pl::target_condition(c.config, m);
         const auto model = translator::TranslationModel::load(pl::model_dir(c.artifact_dir));
         const auto victims = pl::load_victims(pl::victims_path(c.artifact_dir), m);
         const auto ced =
             pl::load_classifier(pl::classifier_dir(c.artifact_dir, ClassifierRole::evaluation_disease));
         const auto cei = pl::load_classifier(
             pl::classifier_dir(c.artifact_dir, ClassifierRole::evaluation_identity));
         std::vector<ImageTensor> real;
         for (auto& img : ingest::load_images(m, partition(c, PartitionName::evaluation).patient_ids))
           if (img.label == cond) real.push_back(std::move(img.image));
         const fs::path fakes = c.artifact_dir / "evaluate" / "fakes";
         const auto report =
             pl::evaluate(*model, victims, *ced, *cei, real, c.config, c.seed, c.config_hash, &fakes);
         metrics::write_report(report, pl::report_path(c.artifact_dir));
         spdlog::info("R_d {:.1f}%  R_i {:.1f}%", report.r_d.value.value_or(-1),
                      report.r_i.value.value_or(-1));
       }});
  plan.steps.push_back({"defend",
                        {"gan/model"},
                        {"defend"},
                        [manifest](const StepContext& c) {
                          const auto model =
                              translator::TranslationModel::load(pl::model_dir(c.artifact_dir));
                          pl::defend(manifest(c), *model, c.config, c.seed, c.config_hash,
                                     pl::detector_dir(c.artifact_dir));
                        }});
  return plan;
}

std::vector<fs::path> audit_artifacts(const fs::path& artifact_dir) {
  const json state = read_state(artifact_dir / "state.json");
  std::vector<fs::path> claimed{"state.json", "config.txt"};
  if (state.contains("steps"))
    for (const auto& [name, s] : state["steps"].items())
      if (s.value("state", "") == "done")
        for (const auto& o : s.value("outputs", json::array())) claimed.emplace_back(o.get<std::string>());
  std::vector<fs::path> orphans;
  if (!fs::exists(artifact_dir)) return orphans;
  for (const auto& e : fs::recursive_directory_iterator(artifact_dir)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), artifact_dir);
    const bool ok = std::any_of(claimed.begin(), claimed.end(),
                                [&](const fs::path& c) { return within(rel, c); });
    if (!ok) orphans.push_back(rel);
  }
  std::sort(orphans.begin(), orphans.end());
  return orphans;
}

json ReportDiff::to_json() const {
  return {{"r_d", delta_json(r_d)},
          {"r_i", delta_json(r_i)},
          {"r_d_high_confidence", delta_json(r_d_high_confidence)},
          {"mssim_real_real", delta_json(mssim_real_real)},
          {"mssim_real_fake", delta_json(mssim_real_fake)}};
}

ReportDiff compare_runs(const metrics::EvaluationReport& a, const metrics::EvaluationReport& b) {
  return {delta(a.r_d, b.r_d), delta(a.r_i, b.r_i),
          delta(a.r_d_high_confidence, b.r_d_high_confidence),
          delta(a.mssim_real_real, b.mssim_real_real), delta(a.mssim_real_fake, b.mssim_real_fake)};
}

ReportDiff compare_runs(const fs::path& a, const fs::path& b) {
  return compare_runs(metrics::read_report(a), metrics::read_report(b));
}

}  // namespace jekyll::harness
