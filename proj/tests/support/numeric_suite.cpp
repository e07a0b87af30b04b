#include "numeric_suite.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "jekyll/classifiers/classifier.hpp"
#include "jekyll/translator/losses.hpp"
#include "jekyll/translator/model.hpp"

namespace jekyll::testing {

using nn::Real;
using nn::Tensor;
using nn::Var;
using translator::AdversarialConvention;
using translator::IdentityVariant;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  // Values are representable in single precision so that float-side oracles see the same inputs.
  for (auto& v : t.values()) v = static_cast<Real>(static_cast<float>(u(rng)));
  return t;
}

ImageTensor to_image(const Tensor& batch, int n) {
  const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  std::vector<float> px(static_cast<std::size_t>(c) * h * w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        px[(static_cast<std::size_t>(ch) * h + y) * w + x] = static_cast<float>(batch.at(n, ch, y, x));
  return ImageTensor(h, w, c, std::move(px));
}

struct Recorder {
  SuiteResult& r;
  void check(const std::string& what, double got, double want, double tol) {
    ++r.checks;
    const double err = std::abs(got - want);
    r.worst = std::max(r.worst, err);
    if (!(err <= tol)) {
      ++r.failures;
      std::ostringstream os;
      os.precision(12);
      os << what << ": got " << got << " want " << want << " (err " << err << ")";
      r.messages.push_back(os.str());
    }
  }
};

std::unique_ptr<classifiers::ClassifierHandle> small_classifier(classifiers::ClassifierRole role,
                                                                std::uint64_t seed) {
  classifiers::BackboneSpec spec;
  spec.width = 3;
  std::vector<std::string> names =
      classifiers::is_disease_role(role) ? std::vector<std::string>{"non_disease", "disease"}
                                         : std::vector<std::string>{"p0", "p1", "p2"};
  auto h = classifiers::build_classifier(role, names, spec, seed);
  h->mark_trained(0.0);
  h->freeze();
  return h;
}

}  // namespace

SuiteResult run_loss_suite(std::uint64_t seed) {
  SuiteResult result;
  Recorder rec{result};
  std::mt19937_64 rng(seed);

  // Adversarial objective, both target conventions.
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor real = random_tensor({2, 1, 6, 6}, rng, -2, 2);
    const Tensor fake = random_tensor({2, 1, 6, 6}, rng, -2, 2);
    for (auto conv : {AdversarialConvention::standard_lsgan, AdversarialConvention::as_written}) {
      const double rt = conv == AdversarialConvention::standard_lsgan ? 1.0 : 0.0;
      double sr = 0, sf = 0, sg = 0;
      for (std::size_t i = 0; i < real.size(); ++i) {
        sr += (real[i] - rt) * (real[i] - rt);
        sf += (fake[i] - (1 - rt)) * (fake[i] - (1 - rt));
        sg += (fake[i] - rt) * (fake[i] - rt);
      }
      const double n = static_cast<double>(real.size());
      rec.check("adversarial random", translator::adversarial_loss(Var(real), Var(fake), conv).value()[0],
                sr / n + sf / n, 1e-6);
      rec.check("generator adversarial random",
                translator::generator_adversarial_loss(Var(fake), conv).value()[0], sg / n, 1e-6);
    }
  }
  {
    const Var zeros(Tensor({1, 1, 4, 4}, Real(0))), ones(Tensor({1, 1, 4, 4}, Real(1)));
    rec.check("as_written minimum",
              translator::adversarial_loss(zeros, ones, AdversarialConvention::as_written).value()[0], 0, 0);
    rec.check("as_written real=1 fake=1",
              translator::adversarial_loss(ones, ones, AdversarialConvention::as_written).value()[0], 1, 0);
    rec.check("standard minimum",
              translator::adversarial_loss(ones, zeros, AdversarialConvention::standard_lsgan).value()[0], 0, 0);
  }

  // Disease term from probabilities, then through a classifier.
  auto prob_loss = [](std::vector<Real> p) {
    const int n = static_cast<int>(p.size());
    return translator::disease_loss_from_probabilities(Var(Tensor({n}, std::move(p)))).value()[0];
  };
  rec.check("disease S=1", prob_loss({1, 1, 1}), 0, 1.0000001e-7);
  rec.check("disease S=0.5", prob_loss({0.5, 0.5}), -std::log(0.5), 1e-6);
  rec.check("disease S=1/e", prob_loss({std::exp(-1.0)}), 1.0, 1e-6);
  rec.check("disease S=0 clamps", prob_loss({0.0}), -std::log(translator::kProbabilityClamp), 1e-6);
  {
    const auto handle = small_classifier(classifiers::ClassifierRole::attack_disease, seed + 1);
    const Tensor imgs = random_tensor({4, 1, 16, 16}, rng);
    double oracle = 0;
    for (int n = 0; n < 4; ++n) {
      const double p = classifiers::predict_disease(*handle, to_image(imgs, n));
      oracle -= std::log(std::clamp(p, translator::kProbabilityClamp, 1 - translator::kProbabilityClamp));
    }
    rec.check("disease through classifier", translator::disease_loss(*handle, Var(imgs)).value()[0],
              oracle / 4, 1e-6);
  }

  // Cycle term.
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({2, 3, 5, 5}, rng), fgx = random_tensor({2, 3, 5, 5}, rng);
    const Tensor y = random_tensor({2, 3, 5, 5}, rng), gfy = random_tensor({2, 3, 5, 5}, rng);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      a += std::abs(fgx[i] - x[i]);
      b += std::abs(gfy[i] - y[i]);
    }
    const double n = static_cast<double>(x.size());
    rec.check("cycle random", translator::cycle_loss(Var(x), Var(fgx), Var(y), Var(gfy)).value()[0],
              a / n + b / n, 1e-6);
  }
  {
    const Tensor x = random_tensor({1, 1, 4, 4}, rng), y = random_tensor({1, 1, 4, 4}, rng);
    rec.check("cycle perfect", translator::cycle_loss(Var(x), Var(x), Var(y), Var(y)).value()[0], 0, 0);
    Tensor shifted = x;
    for (auto& v : shifted.values()) v += Real(0.5);
    rec.check("cycle offset", translator::cycle_loss(Var(x), Var(shifted), Var(y), Var(y)).value()[0],
              0.5, 1e-6);
  }

  // Identity term through the feature tap, against per-image feature extraction.
  {
    const auto handle = small_classifier(classifiers::ClassifierRole::attack_identity, seed + 2);
    for (auto variant : {IdentityVariant::as_printed, IdentityVariant::against_input}) {
      const Tensor x = random_tensor({3, 1, 16, 16}, rng), gx = random_tensor({3, 1, 16, 16}, rng),
                   fgx = random_tensor({3, 1, 16, 16}, rng);
      double a = 0, b = 0;
      std::size_t count = 0;
      for (int n = 0; n < 3; ++n) {
        const auto ex = classifiers::extract_identity_features(*handle, to_image(x, n));
        const auto egx = classifiers::extract_identity_features(*handle, to_image(gx, n));
        const auto efgx = classifiers::extract_identity_features(*handle, to_image(fgx, n));
        const auto& anchor = variant == IdentityVariant::as_printed ? egx : ex;
        for (std::size_t i = 0; i < ex.size(); ++i) {
          a += std::abs(double(ex[i]) - egx[i]);
          b += std::abs(double(efgx[i]) - anchor[i]);
        }
        count += ex.size();
      }
      rec.check(std::string("identity ") + translator::to_string(variant),
                translator::identity_loss(*handle, Var(x), Var(gx), Var(fgx), variant).value()[0],
                a / count + b / count, 1e-5);
    }
    const Tensor x = random_tensor({2, 1, 16, 16}, rng);
    rec.check("identity G=F=id", translator::identity_loss(*handle, Var(x), Var(x), Var(x)).value()[0], 0, 0);
    // A constant feature map gives zero whatever the inputs.
    const Tensor c({2, 4, 3, 3}, Real(0.7));
    rec.check("identity constant tap",
              translator::identity_loss_from_features(Var(c), Var(c), Var(c)).value()[0], 0, 0);
  }

  // Weighted total.
  {
    auto unit = [] { return Var(Tensor({1}, Real(1))); };
    translator::LossTerms t{unit(), unit(), unit(), unit()};
    rec.check("total cardiomegaly units",
              translator::total_loss(LossWeights::cardiomegaly(), t, nullptr).value()[0], 295, 0);
    rec.check("total all zero", translator::total_loss({0, 0, 0, 0}, t, nullptr).value()[0], 0, 0);
    const Tensor x = random_tensor({1, 1, 4, 4}, rng);
    translator::LossTerms perfect;
    perfect.cycle = translator::cycle_loss(Var(x), Var(x), Var(x), Var(x));
    rec.check("total cycle only perfect", translator::total_loss({0, 0, 0, 1}, perfect, nullptr).value()[0],
              0, 0);
    for (int trial = 0; trial < 5; ++trial) {
      std::uniform_real_distribution<double> u(0, 3), wu(0, 100);
      const double a = u(rng), d = u(rng), i = u(rng), c = u(rng);
      const LossWeights w{wu(rng), wu(rng), wu(rng), wu(rng)};
      auto s = [](double v) { return Var(Tensor({1}, Real(v))); };
      translator::LossTerms terms{s(a), s(d), s(i), s(c)};
      const double want = w.adversarial * a + w.disease * d + w.identity * i + w.cycle * c;
      rec.check("total random", translator::total_loss(w, terms, nullptr).value()[0], want,
                1e-6 * std::max(1.0, want));
    }
  }
  return result;
}

SuiteResult run_gradient_suite(std::uint64_t seed, int probes_per_term, double eps, double tolerance) {
  SuiteResult result;
  std::mt19937_64 rng(seed);
  constexpr int kRes = 32;

  translator::TranslatorOptions opts;
  translator::TranslationModel model(translator::GeneratorConfig{1, 2, 1},
                                     translator::DiscriminatorConfig{1, 2}, kRes, LossWeights{},
                                     seed + 10, opts);
  const auto disease = small_classifier(classifiers::ClassifierRole::attack_disease, seed + 11);
  const auto identity = small_classifier(classifiers::ClassifierRole::attack_identity, seed + 12);
  const Var x(random_tensor({1, 1, kRes, kRes}, rng));
  const Var y(random_tensor({1, 1, kRes, kRes}, rng));
  const Var fake_y(random_tensor({1, 1, kRes, kRes}, rng));

  struct Term {
    std::string name;
    std::function<Var()> loss;
    std::vector<Var> params;
  };
  auto gparams = model.G().parameters().trainable();
  auto both = gparams;
  for (const auto& v : model.F().parameters().trainable()) both.push_back(v);
  const auto dparams = model.DY().parameters().trainable();

  std::vector<Term> terms;
  for (auto conv : {AdversarialConvention::standard_lsgan, AdversarialConvention::as_written}) {
    terms.push_back({std::string("discriminator adversarial ") + translator::to_string(conv),
                     [&, conv] { return translator::adversarial_loss(model.DY()(y), model.DY()(fake_y), conv); },
                     dparams});
    terms.push_back({std::string("generator adversarial ") + translator::to_string(conv),
                     [&, conv] { return translator::generator_adversarial_loss(model.DY()(model.G()(x)), conv); },
                     gparams});
  }
  terms.push_back({"disease", [&] { return translator::disease_loss(*disease, model.G()(x)); }, gparams});
  terms.push_back({"cycle",
                   [&] { return translator::cycle_loss(x, model.F()(model.G()(x)), y, model.G()(model.F()(y))); },
                   both});
  for (auto variant : {IdentityVariant::as_printed, IdentityVariant::against_input}) {
    terms.push_back({std::string("identity ") + translator::to_string(variant),
                     [&, variant] {
                       const Var gx = model.G()(x);
                       return translator::identity_loss(*identity, x, gx, model.F()(gx), variant);
                     },
                     both});
  }
  terms.push_back({"total",
                   [&] {
                     const Var gx = model.G()(x), fy = model.F()(y);
                     const Var fgx = model.F()(gx);
                     translator::LossTerms t;
                     t.adversarial = translator::generator_adversarial_loss(model.DY()(gx),
                                                                            AdversarialConvention::standard_lsgan);
                     t.disease = translator::disease_loss(*disease, gx);
                     t.identity = translator::identity_loss(*identity, x, gx, fgx);
                     t.cycle = translator::cycle_loss(x, fgx, y, model.G()(fy));
                     return translator::total_loss(LossWeights::cardiomegaly(), t, nullptr);
                   },
                   both});

  for (auto& term : terms) {
    for (const auto& p : term.params) p.zero_grad();
    const Var loss = term.loss();
    loss.backward();
    // Flat index over every parameter entry of the term.
    std::vector<std::pair<std::size_t, std::size_t>> entries;
    for (std::size_t k = 0; k < term.params.size(); ++k)
      for (std::size_t i = 0; i < term.params[k].value().size(); ++i) entries.emplace_back(k, i);
    std::uniform_int_distribution<std::size_t> pick(0, entries.size() - 1);

    int accepted = 0, attempts = 0;
    while (accepted < probes_per_term && attempts < probes_per_term * 100) {
      ++attempts;
      const auto [k, i] = entries[pick(rng)];
      Var param = term.params[k];
      const double analytic = param.has_grad() ? double(param.grad()[i]) : 0.0;
      auto central = [&](double h) {
        const Real saved = param.value()[i];
        param.mutable_value()[i] = saved + Real(h);
        const double up = term.loss().value()[0];
        param.mutable_value()[i] = saved - Real(h);
        const double down = term.loss().value()[0];
        param.mutable_value()[i] = saved;
        return (up - down) / (2 * h);
      };
      const double numeric = central(eps);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = scale < 1e-9 ? std::abs(analytic - numeric) : std::abs(analytic - numeric) / scale;
      // The ReLU, |.| and max kinks make some stencils straddle a non-differentiable
      // point; a much narrower stencil that disagrees with the wide one exposes them.
      if (!(rel < tolerance)) {
        const double fine = central(eps / 100);
        if (std::abs(fine - numeric) > tolerance * std::max(std::abs(fine), 1e-9)) {
          ++result.redrawn;
          continue;
        }
      }
      ++accepted;
      ++result.checks;
      result.worst = std::max(result.worst, rel);
      if (!(rel < tolerance)) {
        ++result.failures;
        std::ostringstream os;
        os.precision(10);
        os << term.name << " probe " << k << ":" << i << " analytic " << analytic << " numeric "
           << numeric << " rel " << rel;
        result.messages.push_back(os.str());
      }
    }
    if (accepted < probes_per_term) {
      ++result.failures;
      result.messages.push_back(term.name + ": too few smooth probes");
    }
  }
  return result;
}

}  // namespace jekyll::testing
