#include "jekyll/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "jekyll/core/error.hpp"
#include "jekyll/core/hash.hpp"

namespace jekyll::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void check_key(const std::string& key, int line) {
  const auto dot = key.find('.');
  if (key.empty() || dot == 0 || dot == std::string::npos || dot + 1 == key.size())
    throw ParseError(line, "key '" + key + "' must have the form section.key");
  for (char ch : key)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.'))
      throw ParseError(line, "invalid character in key '" + key + "'");
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    check_key(key, lineno);
    c.values_[key] = trim(t.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

Config Config::defaults() {
  return parse(R"(
experiment.seed = 7
experiment.deterministic = true
experiment.condition = disease
data.manifest =
synth.patients = 50
synth.images_per_patient = 40
synth.resolution = 64
synth.stages = 1
synth.color = false
synth.disease_fraction = 0.3
synth.marker_level = 0.6
synth.noise_sigma = 0.03
synth.outline = 0.3
prepare.eval_fraction = 0.2
prepare.min_images = 10
classifier.backbone = toy_cnn
classifier.width = 16
classifier.pretrained =
classifier.disease_epochs = 4
classifier.identity_epochs = 10
classifier.batch_size = 16
classifier.learning_rate = 0.001
gan.generator_width = 8
gan.residual_blocks = 6
gan.discriminator_width = 8
gan.epochs_constant = 10
gan.epochs_decay = 10
gan.steps_per_epoch = 200
gan.batch_size = 1
gan.learning_rate = 0.0002
gan.beta1 = 0.5
gan.beta2 = 0.999
gan.lambda_adv = 20
gan.lambda_disease = 50
gan.lambda_identity = 25
gan.lambda_cycle = 200
gan.convention = standard_lsgan
gan.identity_variant = as_printed
gan.image_pool = 50
gan.repurposed = false
gan.checkpoints = true
evaluate.threshold = 0.5
evaluate.mssim_pairs = 0
defend.epochs = 10
defend.batch_size = 16
defend.learning_rate = 0.001
defend.test_fraction = 0.3
defend.nu = 0.12
defend.gamma = 0.1
)");
}

void Config::set(const std::string& key, const std::string& value) {
  check_key(key, 0);
  values_[key] = value;
}

void Config::apply(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ValidationError("override '" + a + "' is not key=value");
    set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config " + key + " = '" + it->second + "' is not a number");
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) return fallback;
  long long v = 0;
  const auto& s = it->second;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ValidationError("config " + key + " = '" + s + "' is not an integer");
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ValidationError("config " + key + " = '" + it->second + "' is not a boolean");
}

std::string Config::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string Config::hash() const { return sha256_hex(canonical_text()); }

void Config::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write config " + path.string());
  os << canonical_text();
}

LossWeights loss_weights_from(const Config& c) {
  LossWeights w{c.get_double("gan.lambda_adv", 20.0), c.get_double("gan.lambda_disease", 50.0),
                c.get_double("gan.lambda_identity", 25.0), c.get_double("gan.lambda_cycle", 200.0)};
  w.validate();
  return w;
}

ExperimentConfig experiment_config_from(const Config& c) {
  ExperimentConfig e;
  e.seed = static_cast<std::uint64_t>(c.get_int("experiment.seed", 7));
  e.loss_weights = loss_weights_from(c);
  e.epochs_constant = static_cast<int>(c.get_int("gan.epochs_constant", 10));
  e.epochs_decay = static_cast<int>(c.get_int("gan.epochs_decay", 10));
  e.batch_size = static_cast<int>(c.get_int("gan.batch_size", 1));
  e.learning_rate = c.get_double("gan.learning_rate", 2e-4);
  e.adam_beta1 = c.get_double("gan.beta1", 0.5);
  e.adam_beta2 = c.get_double("gan.beta2", 0.999);
  e.deterministic_mode = c.get_bool("experiment.deterministic", true);
  e.validate();
  return e;
}

}  // namespace jekyll::harness
