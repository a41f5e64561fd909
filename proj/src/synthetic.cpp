#include "mcnn/synthetic.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace mcnn {
namespace {

constexpr Index kGrid = 4;  // glyph blocks per side

struct GlyphRect {
  Index channel, y0, x0, bh, bw;
};

GlyphRect glyph_rect(Index attribute, Index height, Index width) {
  const Index cell = attribute % (kGrid * kGrid);
  const Index bh = height / kGrid, bw = width / kGrid;
  return {attribute / (kGrid * kGrid), (cell / kGrid) * bh, (cell % kGrid) * bw, bh, bw};
}

template <typename F>
void for_glyph(Index attribute, Index height, Index width, F&& f) {
  const auto g = glyph_rect(attribute, height, width);
  for (Index y = g.y0; y < g.y0 + g.bh; ++y)
    for (Index x = g.x0; x < g.x0 + g.bw; ++x) f((g.channel * height + y) * width + x);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (train < 1) throw ConfigError("synthetic: train count must be positive");
  if (val < 0 || test < 0) throw ConfigError("synthetic: negative split size");
  if (height < kGrid || width < kGrid || height % kGrid || width % kGrid)
    throw ConfigError("synthetic: image size must be a positive multiple of 4");
  if (!(noise >= 0)) throw ConfigError("synthetic: noise must be >= 0");
  if (!(label_noise >= 0 && label_noise < 0.5)) throw ConfigError("synthetic: label_noise must be in [0, 0.5)");
  if (vocab.size() > 3 * kGrid * kGrid) throw ConfigError("synthetic: at most 48 attributes have glyphs");
  if (!prevalence.empty() && static_cast<Index>(prevalence.size()) != vocab.size())
    throw ConfigError("synthetic: need one prevalence per attribute");
  for (double p : prevalence)
    if (!(p > 0 && p < 1)) throw ConfigError("synthetic: prevalence must be in (0, 1)");
  for (const auto& pp : pairs) {
    if (!(std::abs(pp.rho) <= 1)) throw ConfigError("synthetic: |rho| must be <= 1");
    if (vocab.index_of(pp.a) == vocab.index_of(pp.b))
      throw ConfigError("synthetic: pair " + pp.a + " with itself");
  }
}

double SyntheticSpec::prevalence_of(Index attribute) const {
  return prevalence.empty() ? 0.5 : prevalence[static_cast<size_t>(attribute)];
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0 && p < 1)) throw ConfigError("normal_quantile needs p in (0, 1)");
  double lo = -40, hi = 40;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double bivariate_normal_cdf(double h, double k, double rho) {
  if (rho >= 1) return normal_cdf(std::min(h, k));
  if (rho <= -1) return std::max(0.0, normal_cdf(h) + normal_cdf(k) - 1);
  // Plackett's identity d/dr Phi2 = phi2(h, k; r), integrated from 0 with
  // r = sin(t) so the integrand stays bounded as |r| -> 1.
  const double end = std::asin(rho);
  const int n = 2000;  // even, for Simpson's rule
  const double step = end / n;
  auto f = [&](double t) {
    const double s = std::sin(t), c2 = 1 - s * s;
    if (c2 <= 0) return h == k ? std::exp(-h * h / (1 + s)) : 0.0;
    return std::exp(-(h * h - 2 * h * k * s + k * k) / (2 * c2));
  };
  double sum = f(0) + f(end);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4 : 2) * f(i * step);
  return normal_cdf(h) * normal_cdf(k) + sum * step / 3 / (2 * std::numbers::pi);
}

double binary_correlation(double latent_rho, double pa, double pb) {
  const double p11 = bivariate_normal_cdf(normal_quantile(pa), normal_quantile(pb), latent_rho);
  return (p11 - pa * pb) / std::sqrt(pa * (1 - pa) * pb * (1 - pb));
}

double solve_latent_rho(double target, double pa, double pb) {
  const double lo_phi = binary_correlation(-1, pa, pb), hi_phi = binary_correlation(1, pa, pb);
  if (target < lo_phi - 1e-12 || target > hi_phi + 1e-12)
    throw ConfigError("label correlation " + std::to_string(target) + " unreachable at prevalences " +
                      std::to_string(pa) + ", " + std::to_string(pb));
  double lo = -1, hi = 1;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (binary_correlation(mid, pa, pb) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

RowMatrix<double> latent_correlation(const SyntheticSpec& spec) {
  const Index a = spec.vocab.size();
  RowMatrix<double> r = RowMatrix<double>::Identity(a, a);
  for (const auto& pp : spec.pairs) {
    const Index i = spec.vocab.index_of(pp.a), j = spec.vocab.index_of(pp.b);
    if (r(i, j) != 0) throw ConfigError("synthetic: pair " + pp.a + ", " + pp.b + " planted twice");
    r(i, j) = r(j, i) = solve_latent_rho(pp.rho, spec.prevalence_of(i), spec.prevalence_of(j));
  }
  return r;
}

Tensorf glyph_mask(Index attribute, Index height, Index width) {
  Tensorf m({3, height, width});
  for_glyph(attribute, height, width, [&](Index k) { m[k] = 1; });
  return m;
}

Dataset synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  const Index a = spec.vocab.size();
  const RowMatrix<double> corr = latent_correlation(spec);
  Eigen::LLT<RowMatrix<double>> llt(corr);
  // A failed factorisation, or one with a vanishing pivot, means the plan
  // asks for more correlation than any joint distribution can carry.
  if (llt.info() != Eigen::Success || RowMatrix<double>(llt.matrixL()).diagonal().minCoeff() < 1e-6)
    throw ConfigError("synthetic: correlation plan is not positive definite");
  const RowMatrix<double> lower = llt.matrixL();

  Eigen::VectorXd threshold(a);
  for (Index j = 0; j < a; ++j) threshold(j) = normal_quantile(spec.prevalence_of(j));

  const Index n = spec.train + spec.val + spec.test;
  const Index h = spec.height, w = spec.width;
  Dataset d;
  d.vocab = spec.vocab;
  d.images.reserve(static_cast<size_t>(n));
  BinaryMatrix values(n, a);

  Rng rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution flip(spec.label_noise);
  Eigen::VectorXd e(a);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < a; ++j) e(j) = gauss(rng);
    const Eigen::VectorXd z = lower * e;
    Tensorf img({3, h, w});
    for (auto& v : img.values()) v = static_cast<float>(spec.noise * gauss(rng));
    for (Index j = 0; j < a; ++j) {
      const std::uint8_t label = z(j) <= threshold(j);
      values(i, j) = label;
      const bool rendered = flip(rng) ? !label : label;
      if (rendered) for_glyph(j, h, w, [&](Index k) { img[k] += static_cast<float>(spec.intensity); });
    }
    char id[32];
    std::snprintf(id, sizeof id, "s%06ld", static_cast<long>(i + 1));
    d.ids.emplace_back(id);
    d.images.push_back(std::move(img));
    d.splits.push_back(i < spec.train ? Split::Train : i < spec.train + spec.val ? Split::Val : Split::Test);
  }
  d.labels = LabelMatrix::full(std::move(values));
  return d;
}

}  // namespace mcnn
