#include <algorithm>
#include <cmath>
#include <numeric>

#include "mcnn/layers.hpp"

namespace mcnn {

namespace {

constexpr double kEps = 1e-5;

// Inputs are drawn so that no entry sits within finite-difference reach of a
// kink: ReLU inputs stay away from zero and MaxPool inputs are well separated.
Tensord make_input(const LayerSpec& spec, const Shape& shape, Rng& rng) {
  Tensord x(shape);
  if (std::holds_alternative<ReLU>(spec)) {
    std::uniform_real_distribution<double> mag(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : x.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  } else if (std::holds_alternative<MaxPool>(spec)) {
    std::vector<Index> order(static_cast<size_t>(x.size()));
    std::iota(order.begin(), order.end(), Index(0));
    std::shuffle(order.begin(), order.end(), rng);
    for (Index i = 0; i < x.size(); ++i)
      x[i] = 0.01 * static_cast<double>(order[static_cast<size_t>(i)]) - 0.005 * x.size();
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : x.values()) v = normal(rng);
  }
  return x;
}

double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double gradient_check(const LayerSpec& spec, const Shape& input_shape, std::uint64_t seed) {
  validate(spec);
  Rng rng(seed);
  Tensord x = make_input(spec, input_shape, rng);
  const Shape sample(input_shape.begin() + 1, input_shape.end());
  LayerParams<double> params = init_params<double>(spec, sample, InitScheme::xavier_uniform(), seed + 1);
  if (!params.bias.empty()) {
    std::normal_distribution<double> normal(0.0, 0.1);
    for (auto& v : params.bias.values()) v = normal(rng);
  }
  const std::uint64_t dropout_seed = seed + 2;

  auto run = [&](const Tensord& in, LayerCache<double>* cache) {
    Rng local(dropout_seed);
    return forward(spec, params, in, Mode::Train, &local, cache);
  };

  LayerCache<double> cache;
  const Tensord y = run(x, &cache);
  Tensord probe(y.shape());
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : probe.values()) v = normal(rng);
  auto objective = [&](const Tensord& in) {
    const Tensord out = run(in, nullptr);
    return (out.array() * probe.array()).sum();
  };

  const LayerGrads<double> grads = backward(spec, params, cache, probe);

  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + kEps;
    const double up = objective(x);
    x[i] = saved - kEps;
    const double down = objective(x);
    x[i] = saved;
    worst = std::max(worst, rel_error(grads.input[i], (up - down) / (2 * kEps)));
  }
  auto check_param = [&](Tensord& p, const Tensord& g) {
    for (Index i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + kEps;
      const double up = objective(x);
      p[i] = saved - kEps;
      const double down = objective(x);
      p[i] = saved;
      worst = std::max(worst, rel_error(g[i], (up - down) / (2 * kEps)));
    }
  };
  check_param(params.weight, grads.weight);
  check_param(params.bias, grads.bias);
  return worst;
}

}  // namespace mcnn
