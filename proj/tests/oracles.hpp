#pragma once

// Independent reference computations for the network and the learning
// targets. They use plain loops over the parameter tensors and share nothing
// with the library's Eigen code paths.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bpsim/dqn.hpp"
#include "bpsim/network.hpp"
#include "bpsim/random.hpp"

namespace bpsim::testing {

/// Eval-mode forward pass for a single input row.
inline std::vector<double> reference_forward(const NetworkParams<double>& net,
                                             const std::vector<double>& input) {
  std::vector<double> x = input;
  const std::size_t hidden = net.norm.size();
  for (std::size_t l = 0; l <= hidden; ++l) {
    const auto& w = net.dense[l].weight;
    std::vector<double> z(static_cast<std::size_t>(w.cols()));
    for (std::size_t j = 0; j < z.size(); ++j) {
      double acc = net.dense[l].bias(static_cast<Eigen::Index>(j));
      for (std::size_t i = 0; i < x.size(); ++i)
        acc += x[i] * w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      z[j] = acc;
    }
    if (l < hidden) {
      const auto& bn = net.norm[l];
      for (std::size_t j = 0; j < z.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const double xhat = (z[j] - bn.running_mean(jj)) / std::sqrt(bn.running_var(jj) + 1e-5);
        z[j] = std::max(0.0, bn.gamma(jj) * xhat + bn.beta(jj));
      }
    }
    x = std::move(z);
  }
  return x;
}

/// r + discount * Q_target(s', argmax_a Q_online(s', a)), lowest index on ties.
inline std::vector<double> reference_targets(const std::vector<Experience>& batch,
                                             const NetworkParams<double>& online,
                                             const NetworkParams<double>& target,
                                             double discount) {
  std::vector<double> out;
  for (const auto& e : batch) {
    const auto q_online = reference_forward(online, e.next_state);
    std::size_t best = 0;
    for (std::size_t a = 1; a < q_online.size(); ++a)
      if (q_online[a] > q_online[best]) best = a;
    const auto q_target = reference_forward(target, e.next_state);
    out.push_back(e.reward + discount * q_target[best]);
  }
  return out;
}

/// Perturbs running statistics away from the identity so that eval mode
/// exercises the normalisation.
inline void randomize_norm_stats(NetworkParams<double>& net, Rng& rng) {
  for (auto& bn : net.norm) {
    for (Eigen::Index j = 0; j < bn.gamma.size(); ++j) {
      bn.gamma(j) = 0.5 + uniform01(rng);
      bn.beta(j) = uniform01(rng) - 0.5;
      bn.running_mean(j) = uniform01(rng) - 0.5;
      bn.running_var(j) = 0.5 + uniform01(rng);
    }
  }
}

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t parameters_checked = 0;
};

/// Compares backprop against central differences (step h) for every trainable
/// parameter of a double network. The relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6). The floor sits well
/// above the central-difference round-off (about 1e-11 here) and matters for
/// the biases feeding a batch norm, whose exact gradient is zero.
inline GradientCheckResult check_gradients(const NetworkShape& shape, std::uint64_t seed,
                                           int batch = 8, double h = 1e-5) {
  Rng rng(seed);
  auto net = NetworkParams<double>::he_uniform(shape, rng);
  randomize_norm_stats(net, rng);

  Matrix<double> x(batch, shape.input);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 2.0 * uniform01(rng) - 1.0;
  std::vector<int> actions;
  std::vector<double> targets;
  for (int b = 0; b < batch; ++b) {
    actions.push_back(static_cast<int>(uniform_int(rng, 0, shape.output - 1)));
    targets.push_back(2.0 * uniform01(rng) - 1.0);
  }

  NetworkParams<double> grads(shape);
  loss_and_gradients<double>(net, x, actions, targets, grads);

  GradientCheckResult result;
  auto params = net.tensors();
  const auto analytic = std::as_const(grads).tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!params[t].trainable) continue;
    for (std::size_t i = 0; i < params[t].data.size(); ++i) {
      double& p = params[t].data[i];
      const double saved = p;
      p = saved + h;
      const double up = selected_output_loss<double>(net, x, actions, targets);
      p = saved - h;
      const double down = selected_output_loss<double>(net, x, actions, targets);
      p = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t].data[i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_tensor = params[t].name;
      }
      ++result.parameters_checked;
    }
  }
  return result;
}

}  // namespace bpsim::testing
