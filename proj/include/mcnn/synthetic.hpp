#pragma once

#include <string>
#include <vector>

#include "mcnn/data.hpp"

namespace mcnn {

// Target Pearson correlation between two binary labels.
struct PlantedPair {
  std::string a;
  std::string b;
  double rho = 0.0;
};

/// Synthetic stand-in for a face dataset. Each attribute owns a square glyph
/// (a block in a 4x4 grid on one colour channel); an image is Gaussian
/// background noise plus the glyphs of its rendered attributes.
///
/// Labels come from a Gaussian copula: attribute a is 1 iff its latent
/// normal is below the prevalence quantile, with latent correlations solved
/// so that every planted pair reaches its target label correlation.
///
/// `label_noise` is the probability that an attribute's glyph is rendered
/// with the opposite value while the label keeps the true one, so a
/// correlated partner's glyph carries information the attribute's own glyph
/// lacks.
struct SyntheticSpec {
  AttributeVocab vocab = AttributeVocab::celeba();
  Index train = 10000;
  Index val = 0;
  Index test = 2000;
  Index height = 16;
  Index width = 16;
  double noise = 0.3;
  double intensity = 1.0;
  double label_noise = 0.0;
  std::vector<PlantedPair> pairs;
  std::vector<double> prevalence;  // empty: 0.5 for every attribute
  std::uint64_t seed = 1;

  void validate() const;  // ConfigError on bad values
  double prevalence_of(Index attribute) const;
};

/// Throws ConfigError when the latent correlation matrix implied by the
/// plan is not positive definite or a target is out of reach.
Dataset synth_generate(const SyntheticSpec& spec);

/// Latent correlation matrix realising the plan's label correlations.
RowMatrix<double> latent_correlation(const SyntheticSpec& spec);

/// 1 on attribute a's glyph, 0 elsewhere; shape [3, height, width].
Tensorf glyph_mask(Index attribute, Index height, Index width);

// P(X <= h, Y <= k) for standard normals with correlation rho.
double bivariate_normal_cdf(double h, double k, double rho);
double normal_cdf(double x);
double normal_quantile(double p);
// Correlation of 1{X <= qa} and 1{Y <= qb} where P(X <= qa) = pa.
double binary_correlation(double latent_rho, double pa, double pb);
// Inverse of binary_correlation in latent_rho; ConfigError if unreachable.
double solve_latent_rho(double target, double pa, double pb);

}  // namespace mcnn
