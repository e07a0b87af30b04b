#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "jekyll/core/error.hpp"
#include "jekyll/defense/defense.hpp"
#include "jekyll/ingest/ingest.hpp"
#include "jekyll/synthdata/synthdata.hpp"
#include "support/probes.hpp"
#include "support/temp_dir.hpp"

using namespace jekyll;
using namespace jekyll::defense;

namespace {

struct ColorToy {
  testing::TempDir dir{"defense"};
  std::vector<ingest::LoadedImage> images;

  ColorToy() {
    synth::ToySpec spec;
    spec.n_patients = 12;
    spec.images_per_patient = 20;
    spec.resolution = 32;
    spec.color = true;
    const auto ds = synth::generate_toy_dataset(spec, 21, dir.path());
    std::set<std::string> all;
    for (const auto& r : ds.manifest.records) all.insert(r.patient_id);
    images = ingest::load_images(ds.manifest, all);
  }

  std::vector<ImageTensor> reals() const {
    std::vector<ImageTensor> out;
    for (const auto& i : images) out.push_back(i.image);
    return out;
  }
};

const ColorToy& toy() {
  static ColorToy t;
  return t;
}

ImageTensor solid(float r, float g, float b, int side = 16) {
  std::vector<float> px;
  for (float v : {r, g, b}) px.insert(px.end(), static_cast<std::size_t>(side) * side, v);
  return ImageTensor(side, side, 3, px);
}

// Scalar colour conversions on [0, 1] RGB.
std::array<double, 5> reference_hsv_ycbcr(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  double h = 0;
  if (d > 0) {
    if (mx == r)
      h = 60 * (g - b) / d;
    else if (mx == g)
      h = 120 + 60 * (b - r) / d;
    else
      h = 240 + 60 * (r - g) / d;
    if (h < 0) h += 360;
  }
  const double s = mx > 0 ? d / mx : 0;
  const double y = 0.299 * r + 0.587 * g + 0.114 * b;
  return {h / 360, s, mx, (b - y) * 0.564 + 0.5, (r - y) * 0.713 + 0.5};
}

// Real images plus a periodic high-frequency artifact on the fakes.
std::vector<DetectorSample> artifact_samples(const std::vector<ingest::LoadedImage>& imgs, bool relabel_only) {
  std::vector<DetectorSample> out;
  for (std::size_t k = 0; k < imgs.size(); ++k) {
    const bool fake = k % 2 == 1;
    ImageTensor img = imgs[k].image;
    if (fake && !relabel_only) {
      std::vector<float> px(img.values().begin(), img.values().end());
      const int s = img.height();
      for (std::size_t i = 0; i < px.size(); ++i) {
        const int y = static_cast<int>(i / s) % s, x = static_cast<int>(i % s);
        px[i] = std::clamp(px[i] + ((x + y) % 2 ? 0.25f : -0.25f), -1.f, 1.f);
      }
      img = ImageTensor(s, s, img.channels(), px);
    }
    out.push_back({img, fake, imgs[k].patient_id});
  }
  return out;
}

void split_by_patient(const std::vector<DetectorSample>& all, std::vector<DetectorSample>& train,
                      std::vector<DetectorSample>& test) {
  for (const auto& s : all) (s.patient_id < "p009" ? train : test).push_back(s);
}

}  // namespace

TEST_CASE("colour statistics") {
  const auto f = csd_features(solid(0.2f, -0.4f, 0.6f));
  CHECK(f.size() == kCsdDimension);
  for (int c = 0; c < kCsdChannels; ++c) {
    const auto begin = f.begin() + c * (kCsdBins + 2);
    CHECK(std::count(begin, begin + kCsdBins, 1.0) == 1);
    CHECK(std::count(begin, begin + kCsdBins, 0.0) == kCsdBins - 1);
    CHECK(*(begin + kCsdBins + 1) == doctest::Approx(0.0));
  }
  const auto& img = toy().images[3].image;
  CHECK(csd_features(img) == csd_features(img));
  CHECK_THROWS_AS(csd_features(ImageTensor(16, 16, 1, 0.0f)), UnsupportedInput);
}

TEST_CASE("colour conversions match a scalar reference") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> px(3 * 20 * 20);
  for (auto& v : px) v = u(rng);
  const ImageTensor img(20, 20, 3, px);
  const auto planes = csd_planes(img);
  double worst = 0;
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) {
      const auto ref = reference_hsv_ycbcr(0.5 * (img.at(0, y, x) + 1), 0.5 * (img.at(1, y, x) + 1),
                                           0.5 * (img.at(2, y, x) + 1));
      for (int c = 0; c < 5; ++c) {
        double d = std::abs(planes[c][y * 20 + x] - ref[c]);
        if (c == 0) d = std::min(d, 1 - d);  // hue wraps
        worst = std::max(worst, d);
      }
    }
  MESSAGE("worst conversion error " << worst);
  CHECK(worst < 1e-6);
}

TEST_CASE("blind detector") {
  const auto reals = toy().reals();
  const auto detector = BlindDetector::train(reals, {0.12, 0.1});
  CHECK(detector.training_size() == reals.size());
  CHECK(detector.training_anomaly_fraction() <= 0.17);
  int flagged_train = 0;
  for (const auto& r : reals) flagged_train += blind_detect(detector, r) == Verdict::fake;
  CHECK(flagged_train <= 0.17 * reals.size());

  int flagged = 0, probes = 0;
  for (std::size_t k = 0; k < reals.size(); k += 6, ++probes)
    flagged += blind_detect(detector, testing::channel_shuffle_probe(reals[k], k)) == Verdict::fake;
  MESSAGE("channel-shuffle probes flagged " << flagged << "/" << probes);
  CHECK(flagged >= 0.7 * probes);

  CHECK_THROWS_AS(detector.score(std::vector<double>(10, 0.0)), ValidationError);
  CHECK_THROWS_AS(BlindDetector::train({reals.begin(), reals.begin() + 10}, {}), ValidationError);
  CHECK_THROWS_AS(BlindDetector::train(std::vector<ImageTensor>(25, solid(0.1f, 0.2f, 0.3f)), {}),
                  ValidationError);
  CHECK_THROWS_AS((BlindDetectorConfig{0.0, 0.1}.validate()), ValidationError);

  const auto all = BlindDetector::train(reals, {1.0, 0.1});
  CHECK(all.training_anomaly_fraction() >= 0.9);

  testing::TempDir dir("blind");
  detector.save(dir / "b.json");
  const auto back = BlindDetector::load(dir / "b.json");
  for (std::size_t k = 0; k < reals.size(); k += 17)
    CHECK(back.score(csd_features(reals[k])) == doctest::Approx(detector.score(csd_features(reals[k]))));
}

TEST_CASE("one-class svm nu property on random points") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 1);
  std::vector<std::vector<double>> pts(200, std::vector<double>(4));
  for (auto& p : pts)
    for (auto& v : p) v = n(rng);
  for (double nu : {0.05, 0.12, 0.3, 0.6}) {
    OneClassSvm svm;
    svm.fit(pts, nu, 0.5);
    CHECK(svm.converged());
    int out = 0;
    for (const auto& p : pts) out += svm.outside(p);
    CHECK(out <= (nu + 0.05) * pts.size());
    // nu also lower-bounds the support-vector fraction.
    CHECK(svm.support_vector_count() >= (nu - 0.01) * pts.size());
  }
}

TEST_CASE("blind cross-validation") {
  std::vector<std::vector<double>> feats;
  for (const auto& r : toy().reals()) feats.push_back(csd_features(r));
  const std::vector<BlindDetectorConfig> grid{{0.12, 0.1}, {0.12, 1.0}, {0.3, 0.1}};
  const auto results = cross_validate_blind(feats, grid, 4, 3);
  CHECK(results.size() == 3);
  for (const auto& r : results) {
    CHECK(r.held_out_false_alarm >= 0);
    CHECK(r.held_out_false_alarm <= 1);
  }
  const auto best = select_blind_config(results);
  const auto it = std::min_element(results.begin(), results.end(), [](const auto& a, const auto& b) {
    return std::abs(a.held_out_false_alarm - a.config.nu) < std::abs(b.held_out_false_alarm - b.config.nu);
  });
  CHECK(best.nu == it->config.nu);
  CHECK(best.gamma == it->config.gamma);
  CHECK_THROWS_AS(cross_validate_blind(feats, grid, 1, 3), ValidationError);
}

TEST_CASE("detector metrics") {
  const std::vector<bool> truth{true, true, true, true, false, false, false, false, false, true};
  const std::vector<bool> pred{true, false, true, true, true, false, false, false, true, false};
  int tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    tp += pred[i] && truth[i];
    fp += pred[i] && !truth[i];
    tn += !pred[i] && !truth[i];
    fn += !pred[i] && truth[i];
  }
  const auto m = detector_metrics(pred, truth);
  CHECK(m.true_positive == tp);
  CHECK(m.false_positive == fp);
  CHECK(m.accuracy == doctest::Approx(100.0 * (tp + tn) / 10));
  CHECK(m.precision == doctest::Approx(100.0 * tp / (tp + fp)));
  CHECK(m.recall == doctest::Approx(100.0 * tp / (tp + fn)));

  const auto perfect = detector_metrics(truth, truth);
  CHECK(perfect.accuracy == 100);
  CHECK(perfect.precision == 100);
  CHECK(perfect.recall == 100);
  const auto none = detector_metrics(std::vector<bool>(10, false), truth);
  CHECK(none.recall == 0);
  CHECK(none.precision == 0);
  CHECK_THROWS_AS(detector_metrics(std::vector<bool>(3, true), std::vector<bool>(3, true)), ValidationError);
}

TEST_CASE("supervised detector") {
  std::vector<ingest::LoadedImage> subset;
  for (std::size_t k = 0; k < toy().images.size(); k += 2) subset.push_back(toy().images[k]);
  std::vector<DetectorSample> train, test;
  split_by_patient(artifact_samples(subset, false), train, test);
  DetectorRecipe recipe;
  recipe.epochs = 4;
  DetectorMetrics m;
  const auto det = train_supervised_detector(train, test, recipe, 5, &m);
  MESSAGE("artifact detector accuracy " << m.accuracy);
  CHECK(m.accuracy >= 90);
  CHECK(det.epoch_losses.size() == 4);

  DetectorMetrics again;
  const auto det2 = train_supervised_detector(train, test, recipe, 5, &again);
  CHECK(again.accuracy == m.accuracy);
  CHECK(det2.net->parameters().digest() == det.net->parameters().digest());

  testing::TempDir dir("meso");
  det.save(dir / "m");
  const auto back = SupervisedDetector::load(dir / "m");
  CHECK(back.evaluate(test).accuracy == m.accuracy);

  std::vector<DetectorSample> leaky = test;
  leaky.push_back(train.front());
  CHECK_THROWS_AS(train_supervised_detector(train, leaky, recipe, 5), ValidationError);

  std::vector<DetectorSample> rtrain, rtest;
  split_by_patient(artifact_samples(subset, true), rtrain, rtest);
  DetectorMetrics null_metrics;
  train_supervised_detector(rtrain, rtest, recipe, 5, &null_metrics);
  MESSAGE("real-vs-real accuracy " << null_metrics.accuracy);
  CHECK(null_metrics.accuracy > 25);
  CHECK(null_metrics.accuracy < 75);

  CHECK(build_mesonet(32, 1)->parameter_count() == build_mesonet(32, 2)->parameter_count());
}
