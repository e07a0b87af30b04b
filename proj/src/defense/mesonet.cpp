#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "jekyll/core/error.hpp"
#include "jekyll/core/rng.hpp"
#include "jekyll/defense/defense.hpp"
#include "jekyll/ingest/ingest.hpp"
#include "jekyll/nn/optim.hpp"

namespace jekyll::defense {

namespace {

struct BlockSpec {
  int one, three, dil2, dil3;
};
constexpr BlockSpec kBlocks[4] = {{1, 4, 4, 2}, {2, 4, 4, 2}, {4, 8, 8, 4}, {4, 8, 8, 4}};
constexpr int kHiddenUnits = 16;
constexpr nn::Real kLeakySlope = nn::Real(0.1);

nn::Var to_rgb(const nn::Var& x) {
  if (x.dim(1) == 3) return x;
  if (x.dim(1) == 1) return nn::repeat_channels(x, 3);
  throw ValidationError("detector input must have 1 or 3 channels");
}

}  // namespace

MesoNet::MesoNet(int resolution, std::uint64_t seed) : resolution_(resolution), seed_(seed) {
  if (resolution < 16 || resolution % 16 != 0)
    throw ValidationError("MesoNet resolution must be a positive multiple of 16");
  std::mt19937_64 rng(seed);
  nn::LayerFactory make(store_, rng, nn::InitScheme::kaiming_uniform);
  int in = 3;
  for (int b = 0; b < 4; ++b) {
    const BlockSpec& s = kBlocks[b];
    const std::string p = "inception" + std::to_string(b + 1) + ".";
    Block block;
    block.branches.push_back({make.conv(p + "1x1", in, s.one, 1, nn::Conv2dGeometry::same(1))});
    block.branches.push_back({make.conv(p + "3x3", in, s.three, 3, nn::Conv2dGeometry::same(3))});
    block.branches.push_back(
        {make.conv(p + "3x3_d2", in, s.dil2, 3, nn::Conv2dGeometry::same(3, 2))});
    block.branches.push_back(
        {make.conv(p + "3x3_d3", in, s.dil3, 3, nn::Conv2dGeometry::same(3, 3))});
    in = s.one + s.three + s.dil2 + s.dil3;
    block.norm = make.batch_norm(p + "bn", in);
    blocks_.push_back(std::move(block));
  }
  const int side = resolution / 16;
  hidden_ = make.dense("head.dense16", in * side * side, kHiddenUnits);
  output_ = make.dense("head.out", kHiddenUnits, 1);
}

nn::Var MesoNet::logits(const nn::Var& x, bool training, std::mt19937_64* rng) const {
  if (x.dim(2) != resolution_ || x.dim(3) != resolution_)
    throw ValidationError("MesoNet built for " + std::to_string(resolution_) + "px input");
  if (training && !rng) throw std::logic_error("training-mode MesoNet needs a dropout RNG");
  nn::Var h = to_rgb(x);
  for (const auto& block : blocks_) {
    std::vector<nn::Var> parts;
    for (const auto& br : block.branches) parts.push_back(nn::relu(br.conv(h)));
    h = nn::max_pool2d(block.norm(nn::concat_channels(parts), training), 2, 2);
  }
  h = nn::flatten(h);
  if (training) h = nn::dropout(h, nn::Real(0.5), *rng, true);
  h = nn::leaky_relu(hidden_(h), kLeakySlope);
  if (training) h = nn::dropout(h, nn::Real(0.5), *rng, true);
  return nn::reshape(output_(h), {x.dim(0)});
}

std::vector<double> MesoNet::probabilities(const std::vector<ImageTensor>& images) const {
  nn::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
    const std::size_t end = std::min(images.size(), begin + kChunk);
    const nn::Var p = nn::sigmoid(
        logits(nn::Var(to_batch(std::span(images.data() + begin, end - begin))), false));
    for (std::size_t i = 0; i < p.value().size(); ++i) out.push_back(p.value()[i]);
  }
  return out;
}

std::unique_ptr<MesoNet> build_mesonet(int resolution, std::uint64_t seed) {
  return std::make_unique<MesoNet>(resolution, seed);
}

DetectorMetrics detector_metrics(const std::vector<bool>& predicted_fake,
                                 const std::vector<bool>& truly_fake) {
  if (predicted_fake.size() != truly_fake.size())
    throw ValidationError("detector_metrics: prediction and truth counts differ");
  if (truly_fake.empty()) throw ValidationError("detector_metrics: empty test set");
  const auto fakes = std::count(truly_fake.begin(), truly_fake.end(), true);
  if (fakes == 0 || fakes == static_cast<long>(truly_fake.size()))
    throw ValidationError("detector_metrics: test set holds a single class");
  DetectorMetrics m;
  for (std::size_t i = 0; i < truly_fake.size(); ++i) {
    if (truly_fake[i])
      (predicted_fake[i] ? m.true_positive : m.false_negative)++;
    else
      (predicted_fake[i] ? m.false_positive : m.true_negative)++;
  }
  const double n = static_cast<double>(truly_fake.size());
  m.accuracy = 100.0 * (m.true_positive + m.true_negative) / n;
  const int flagged = m.true_positive + m.false_positive;
  // No positive predictions: precision is reported as 0 rather than undefined.
  m.precision = flagged > 0 ? 100.0 * m.true_positive / flagged : 0.0;
  m.recall = 100.0 * m.true_positive / static_cast<double>(fakes);
  return m;
}

Verdict SupervisedDetector::detect(const ImageTensor& image) const {
  return predict_fake({image}).front() ? Verdict::fake : Verdict::real;
}

std::vector<bool> SupervisedDetector::predict_fake(const std::vector<ImageTensor>& images) const {
  std::vector<bool> out;
  for (double p : net->probabilities(images)) out.push_back(p >= threshold);
  return out;
}

DetectorMetrics SupervisedDetector::evaluate(const std::vector<DetectorSample>& test) const {
  std::vector<ImageTensor> images;
  std::vector<bool> truth;
  for (const auto& s : test) {
    images.push_back(s.image);
    truth.push_back(s.fake);
  }
  return detector_metrics(predict_fake(images), truth);
}

void SupervisedDetector::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  net->parameters().save(dir / "weights.bin");
  nlohmann::json meta{{"kind", to_string(DetectorKind::supervised_mesonet)},
                      {"resolution", net->resolution()},
                      {"seed", net->seed()},
                      {"threshold", threshold},
                      {"parameter_count", net->parameter_count()}};
  std::ofstream os(dir / "meta.json");
  if (!os) throw IoError("cannot write " + (dir / "meta.json").string());
  os << meta.dump(2) << '\n';
}

SupervisedDetector SupervisedDetector::load(const std::filesystem::path& dir) {
  std::ifstream is(dir / "meta.json");
  if (!is) throw IoError("no detector at " + dir.string());
  try {
    const auto meta = nlohmann::json::parse(is);
    if (meta.at("kind").get<std::string>() != to_string(DetectorKind::supervised_mesonet))
      throw ValidationError(dir.string() + " is not a supervised detector");
    SupervisedDetector d;
    d.net = build_mesonet(meta.at("resolution").get<int>(), meta.at("seed").get<std::uint64_t>());
    d.net->parameters().load(dir / "weights.bin");
    d.threshold = meta.at("threshold").get<double>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("corrupt detector metadata in " + dir.string() + ": " + e.what());
  }
}

SupervisedDetector train_supervised_detector(const std::vector<DetectorSample>& train,
                                             const std::vector<DetectorSample>& test,
                                             const DetectorRecipe& recipe, std::uint64_t seed,
                                             DetectorMetrics* test_metrics) {
  if (train.empty()) throw ValidationError("supervised detector: empty training set");
  if (recipe.epochs < 0 || recipe.batch_size < 1 || !(recipe.learning_rate > 0.0))
    throw ValidationError("supervised detector: invalid recipe");
  std::set<std::string> train_patients;
  for (const auto& s : train) train_patients.insert(s.patient_id);
  for (const auto& s : test)
    if (train_patients.count(s.patient_id))
      throw ValidationError("patient " + s.patient_id +
                            " appears in both detector training and test sets");

  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < train.size(); ++i)
    by_class[train[i].fake ? "fake" : "real"].push_back(i);
  if (by_class.size() != 2) throw ValidationError("supervised detector needs real and fake images");
  const auto balanced = ingest::upsample_minority(std::move(by_class));
  std::vector<std::size_t> order;
  for (const auto& [name, idx] : balanced) order.insert(order.end(), idx.begin(), idx.end());

  const int resolution = train.front().image.height();
  SupervisedDetector det;
  det.net = build_mesonet(resolution, mix_seed(seed, "mesonet"));
  det.threshold = recipe.threshold;
  nn::Adam adam(det.net->parameters().trainable(), {recipe.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(mix_seed(seed, "detector"));
  for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += recipe.batch_size) {
      const std::size_t end = std::min(order.size(), begin + recipe.batch_size);
      std::vector<ImageTensor> images;
      std::vector<nn::Real> targets;
      for (std::size_t k = begin; k < end; ++k) {
        images.push_back(train[order[k]].image);
        targets.push_back(train[order[k]].fake ? nn::Real(1) : nn::Real(0));
      }
      adam.zero_grad();
      nn::Var loss = nn::bce_with_logits(det.net->logits(nn::Var(to_batch(images)), true, &rng), targets);
      loss_sum += loss.value()[0] * static_cast<double>(images.size());
      loss.backward();
      adam.step();
    }
    det.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
  }
  if (test_metrics && !test.empty()) *test_metrics = det.evaluate(test);
  return det;
}

}  // namespace jekyll::defense
