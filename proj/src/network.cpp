#include "bpsim/network.hpp"

#include <cmath>

#include <boost/random/uniform_real_distribution.hpp>
#include <fmt/format.h>

namespace bpsim {

std::vector<int> NetworkShape::layer_sizes() const {
  std::vector<int> sizes{input};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output);
  return sizes;
}

NetworkShape q_network_shape(std::size_t state_width, std::size_t action_count) {
  return {static_cast<int>(state_width), {32, 32}, static_cast<int>(action_count)};
}

template <typename Scalar>
NetworkParams<Scalar>::NetworkParams(NetworkShape shape) : shape_(std::move(shape)) {
  const auto sizes = shape_.layer_sizes();
  for (int s : sizes)
    if (s <= 0) throw std::invalid_argument("network layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    dense.push_back({Matrix<Scalar>::Zero(sizes[l], sizes[l + 1]),
                     RowVector<Scalar>::Zero(sizes[l + 1])});
  }
  for (int width : shape_.hidden) {
    norm.push_back({RowVector<Scalar>::Ones(width), RowVector<Scalar>::Zero(width),
                    RowVector<Scalar>::Zero(width), RowVector<Scalar>::Ones(width)});
  }
}

template <typename Scalar>
NetworkParams<Scalar> NetworkParams<Scalar>::he_uniform(NetworkShape shape, Rng& rng) {
  NetworkParams params(std::move(shape));
  for (auto& layer : params.dense) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.rows()));
    boost::random::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        layer.weight(r, c) = static_cast<Scalar>(dist(rng));
  }
  return params;
}

namespace {

template <typename S, typename M>
std::span<S> span_of(M& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

}  // namespace

template <typename Scalar>
std::vector<TensorView<Scalar>> NetworkParams<Scalar>::tensors() {
  std::vector<TensorView<Scalar>> out;
  auto add_dense = [&](DenseLayer<Scalar>& d, const std::string& prefix) {
    out.push_back({prefix + ".weight",
                   {static_cast<int>(d.weight.rows()), static_cast<int>(d.weight.cols())},
                   span_of<Scalar>(d.weight), true});
    out.push_back({prefix + ".bias", {static_cast<int>(d.bias.size())},
                   span_of<Scalar>(d.bias), true});
  };
  for (std::size_t l = 0; l < norm.size(); ++l) {
    add_dense(dense[l], fmt::format("dense{}", l));
    auto& n = norm[l];
    const std::vector<int> s{static_cast<int>(n.gamma.size())};
    const auto prefix = fmt::format("norm{}", l);
    out.push_back({prefix + ".gamma", s, span_of<Scalar>(n.gamma), true});
    out.push_back({prefix + ".beta", s, span_of<Scalar>(n.beta), true});
    out.push_back({prefix + ".running_mean", s, span_of<Scalar>(n.running_mean), false});
    out.push_back({prefix + ".running_var", s, span_of<Scalar>(n.running_var), false});
  }
  if (!dense.empty()) add_dense(dense.back(), fmt::format("dense{}", norm.size()));
  return out;
}

template <typename Scalar>
std::vector<TensorView<const Scalar>> NetworkParams<Scalar>::tensors() const {
  auto mutable_views = const_cast<NetworkParams*>(this)->tensors();
  std::vector<TensorView<const Scalar>> out;
  out.reserve(mutable_views.size());
  for (auto& t : mutable_views)
    out.push_back({std::move(t.name), std::move(t.shape),
                   std::span<const Scalar>(t.data), t.trainable});
  return out;
}

template <typename Scalar>
template <typename Other>
NetworkParams<Other> NetworkParams<Scalar>::cast() const {
  NetworkParams<Other> out(shape_);
  auto src = tensors();
  auto dst = out.tensors();
  for (std::size_t t = 0; t < src.size(); ++t)
    for (std::size_t j = 0; j < src[t].data.size(); ++j)
      dst[t].data[j] = static_cast<Other>(src[t].data[j]);
  return out;
}

template <typename Scalar>
bool NetworkParams<Scalar>::all_finite() const {
  for (const auto& t : tensors())
    for (Scalar v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

template <typename Scalar>
bool NetworkParams<Scalar>::operator==(const NetworkParams& other) const {
  if (!(shape_ == other.shape_)) return false;
  auto a = tensors();
  auto b = other.tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    if (!std::equal(a[t].data.begin(), a[t].data.end(), b[t].data.begin()))
      return false;
  return true;
}

template <typename Scalar>
void copy_into(const NetworkParams<Scalar>& src, NetworkParams<Scalar>& dst) {
  if (!(src.shape() == dst.shape()))
    throw std::invalid_argument("copy_into: network shapes differ");
  dst = src;
}

namespace {

template <typename Scalar>
void check_inputs(const NetworkParams<Scalar>& params, const Matrix<Scalar>& inputs) {
  if (inputs.rows() < 1) throw std::invalid_argument("forward: empty batch");
  if (inputs.cols() != params.shape().input)
    throw std::invalid_argument(fmt::format("forward: input width {} != {}",
                                            inputs.cols(), params.shape().input));
  if (!inputs.allFinite()) throw std::domain_error("forward: non-finite input");
}

template <typename Scalar>
struct HiddenCache {
  Matrix<Scalar> input;
  Matrix<Scalar> normalized;  // x-hat
  Matrix<Scalar> activated;   // after ReLU
  RowVector<Scalar> inv_std;
  RowVector<Scalar> mean;
  RowVector<Scalar> var;
};

template <typename Scalar>
struct TrainCache {
  std::vector<HiddenCache<Scalar>> hidden;
  Matrix<Scalar> output;
};

template <typename Scalar>
Matrix<Scalar> affine(const DenseLayer<Scalar>& d, const Matrix<Scalar>& x) {
  Matrix<Scalar> y = x * d.weight;
  y.rowwise() += d.bias;
  return y;
}

template <typename Scalar>
void forward_train_cached(const NetworkParams<Scalar>& params,
                          const Matrix<Scalar>& inputs, TrainCache<Scalar>& cache) {
  const auto eps = NetworkParams<Scalar>::kBatchNormEpsilon;
  const auto rows = static_cast<Scalar>(inputs.rows());
  cache.hidden.resize(params.norm.size());
  Matrix<Scalar> h = inputs;
  for (std::size_t l = 0; l < params.norm.size(); ++l) {
    auto& c = cache.hidden[l];
    const auto& bn = params.norm[l];
    c.input = std::move(h);
    Matrix<Scalar> a = affine(params.dense[l], c.input);
    c.mean = a.colwise().sum() / rows;
    a.rowwise() -= c.mean;
    c.var = a.array().square().colwise().sum().matrix() / rows;
    c.inv_std = (c.var.array() + eps).rsqrt().matrix();
    c.normalized = a.array().rowwise() * c.inv_std.array();
    Matrix<Scalar> z = c.normalized.array().rowwise() * bn.gamma.array();
    z.rowwise() += bn.beta;
    c.activated = z.cwiseMax(Scalar(0));
    h = c.activated;
  }
  cache.output = affine(params.dense.back(), h);
}

template <typename Scalar>
void update_running_stats(NetworkParams<Scalar>& params, const TrainCache<Scalar>& cache) {
  const auto m = NetworkParams<Scalar>::kBatchNormMomentum;
  for (std::size_t l = 0; l < params.norm.size(); ++l) {
    auto& bn = params.norm[l];
    bn.running_mean = m * bn.running_mean + (Scalar(1) - m) * cache.hidden[l].mean;
    bn.running_var = m * bn.running_var + (Scalar(1) - m) * cache.hidden[l].var;
  }
}

template <typename Scalar>
void check_targets(const Matrix<Scalar>& inputs, const NetworkParams<Scalar>& params,
                   std::span<const int> actions, std::span<const Scalar> targets) {
  const auto rows = static_cast<std::size_t>(inputs.rows());
  if (actions.size() != rows || targets.size() != rows)
    throw std::invalid_argument("one action and one target per input row required");
  for (int a : actions)
    if (a < 0 || a >= params.shape().output)
      throw std::out_of_range(fmt::format("action index {} out of range", a));
}

template <typename Scalar>
Scalar selected_loss(const Matrix<Scalar>& output, std::span<const int> actions,
                     std::span<const Scalar> targets) {
  Scalar sum = 0;
  for (std::size_t b = 0; b < actions.size(); ++b) {
    const Scalar r = output(static_cast<Eigen::Index>(b), actions[b]) - targets[b];
    sum += r * r;
  }
  return sum / static_cast<Scalar>(actions.size());
}

}  // namespace

template <typename Scalar>
Matrix<Scalar> forward(const NetworkParams<Scalar>& params, const Matrix<Scalar>& inputs) {
  check_inputs(params, inputs);
  const auto eps = NetworkParams<Scalar>::kBatchNormEpsilon;
  Matrix<Scalar> h = inputs;
  for (std::size_t l = 0; l < params.norm.size(); ++l) {
    const auto& bn = params.norm[l];
    Matrix<Scalar> a = affine(params.dense[l], h);
    a.rowwise() -= bn.running_mean;
    const RowVector<Scalar> scale =
        ((bn.running_var.array() + eps).rsqrt() * bn.gamma.array()).matrix();
    a = a.array().rowwise() * scale.array();
    a.rowwise() += bn.beta;
    h = a.cwiseMax(Scalar(0));
  }
  return affine(params.dense.back(), h);
}

template <typename Scalar>
Matrix<Scalar> forward(NetworkParams<Scalar>& params, const Matrix<Scalar>& inputs,
                       Mode mode) {
  if (mode == Mode::kEval) return forward(std::as_const(params), inputs);
  check_inputs(params, inputs);
  if (inputs.rows() < 2)
    throw std::invalid_argument("train-mode forward needs a batch of at least 2");
  TrainCache<Scalar> cache;
  forward_train_cached(params, inputs, cache);
  update_running_stats(params, cache);
  return std::move(cache.output);
}

namespace {

template <typename Scalar>
Scalar backward(const NetworkParams<Scalar>& params, const Matrix<Scalar>& inputs,
                std::span<const int> actions, std::span<const Scalar> targets,
                TrainCache<Scalar>& cache, NetworkParams<Scalar>& grads) {
  check_inputs(params, inputs);
  check_targets(inputs, params, actions, targets);
  if (inputs.rows() < 2)
    throw std::invalid_argument("gradient step needs a batch of at least 2");
  forward_train_cached(params, inputs, cache);

  const auto batch = static_cast<Scalar>(inputs.rows());
  const Scalar loss = selected_loss(cache.output, actions, targets);

  if (!(grads.shape() == params.shape())) grads = NetworkParams<Scalar>(params.shape());

  Matrix<Scalar> d_out = Matrix<Scalar>::Zero(cache.output.rows(), cache.output.cols());
  for (std::size_t b = 0; b < actions.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    d_out(row, actions[b]) = Scalar(2) * (cache.output(row, actions[b]) - targets[b]) / batch;
  }

  const std::size_t hidden = params.norm.size();
  const Matrix<Scalar>& last_in = hidden ? cache.hidden.back().activated : inputs;
  grads.dense[hidden].weight.noalias() = last_in.transpose() * d_out;
  grads.dense[hidden].bias = d_out.colwise().sum();
  Matrix<Scalar> d_h = d_out * params.dense[hidden].weight.transpose();

  for (std::size_t l = hidden; l-- > 0;) {
    const auto& c = cache.hidden[l];
    const auto& bn = params.norm[l];
    auto& g = grads.norm[l];
    // ReLU
    Matrix<Scalar> d_z = (c.activated.array() > Scalar(0)).select(d_h, Scalar(0));
    g.gamma = (d_z.array() * c.normalized.array()).colwise().sum().matrix();
    g.beta = d_z.colwise().sum();
    g.running_mean.setZero();
    g.running_var.setZero();
    // Batch norm: dx = inv_std / B * (B dxhat - sum(dxhat) - xhat * sum(dxhat xhat))
    Matrix<Scalar> d_xhat = d_z.array().rowwise() * bn.gamma.array();
    const RowVector<Scalar> sum_d = d_xhat.colwise().sum();
    const RowVector<Scalar> sum_dx =
        (d_xhat.array() * c.normalized.array()).colwise().sum().matrix();
    Matrix<Scalar> d_a = batch * d_xhat;
    d_a.rowwise() -= sum_d;
    d_a -= (c.normalized.array().rowwise() * sum_dx.array()).matrix();
    d_a = (d_a.array().rowwise() * (c.inv_std.array() / batch)).matrix();

    grads.dense[l].weight.noalias() = c.input.transpose() * d_a;
    grads.dense[l].bias = d_a.colwise().sum();
    if (l > 0) d_h = d_a * params.dense[l].weight.transpose();
  }
  return loss;
}

}  // namespace

template <typename Scalar>
Scalar loss_and_gradients(const NetworkParams<Scalar>& params, const Matrix<Scalar>& inputs,
                          std::span<const int> actions, std::span<const Scalar> targets,
                          NetworkParams<Scalar>& gradients) {
  TrainCache<Scalar> cache;
  return backward(params, inputs, actions, targets, cache, gradients);
}

template <typename Scalar>
Scalar selected_output_loss(const NetworkParams<Scalar>& params,
                            const Matrix<Scalar>& inputs, std::span<const int> actions,
                            std::span<const Scalar> targets) {
  check_inputs(params, inputs);
  check_targets(inputs, params, actions, targets);
  TrainCache<Scalar> cache;
  forward_train_cached(params, inputs, cache);
  return selected_loss(cache.output, actions, targets);
}

template <typename Scalar>
AdamOptimizer<Scalar>::AdamOptimizer(const NetworkShape& shape, AdamConfig config)
    : config_(config), first_moment_(shape), second_moment_(shape) {
  for (auto* moments : {&first_moment_, &second_moment_})
    for (auto& t : moments->tensors()) std::fill(t.data.begin(), t.data.end(), Scalar(0));
}

template <typename Scalar>
void AdamOptimizer<Scalar>::apply(NetworkParams<Scalar>& params,
                                  const NetworkParams<Scalar>& gradients) {
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  auto p = params.tensors();
  auto g = gradients.tensors();
  auto m = first_moment_.tensors();
  auto v = second_moment_.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    if (!p[t].trainable) continue;
    for (std::size_t j = 0; j < p[t].data.size(); ++j) {
      const double grad = g[t].data[j];
      const double mj = b1 * m[t].data[j] + (1.0 - b1) * grad;
      const double vj = b2 * v[t].data[j] + (1.0 - b2) * grad * grad;
      m[t].data[j] = static_cast<Scalar>(mj);
      v[t].data[j] = static_cast<Scalar>(vj);
      const double m_hat = mj / correction1;
      const double v_hat = vj / correction2;
      p[t].data[j] -= static_cast<Scalar>(config_.learning_rate * m_hat /
                                          (std::sqrt(v_hat) + config_.epsilon));
    }
  }
}

template <typename Scalar>
Scalar train_step(NetworkParams<Scalar>& params, AdamOptimizer<Scalar>& optimizer,
                  const Matrix<Scalar>& inputs, std::span<const int> actions,
                  std::span<const Scalar> targets) {
  TrainCache<Scalar> cache;
  NetworkParams<Scalar> grads(params.shape());
  const Scalar loss = backward(params, inputs, actions, targets, cache, grads);
  if (!std::isfinite(loss))
    throw DivergenceError(fmt::format("non-finite loss {}", static_cast<double>(loss)));
  update_running_stats(params, cache);
  optimizer.apply(params, grads);
  return loss;
}

#define BPSIM_INSTANTIATE(S)                                                          \
  template class NetworkParams<S>;                                                    \
  template void copy_into(const NetworkParams<S>&, NetworkParams<S>&);                \
  template Matrix<S> forward(const NetworkParams<S>&, const Matrix<S>&);              \
  template Matrix<S> forward(NetworkParams<S>&, const Matrix<S>&, Mode);              \
  template S loss_and_gradients(const NetworkParams<S>&, const Matrix<S>&,            \
                                std::span<const int>, std::span<const S>,             \
                                NetworkParams<S>&);                                   \
  template S selected_output_loss(const NetworkParams<S>&, const Matrix<S>&,          \
                                  std::span<const int>, std::span<const S>);          \
  template class AdamOptimizer<S>;                                                    \
  template S train_step(NetworkParams<S>&, AdamOptimizer<S>&, const Matrix<S>&,       \
                        std::span<const int>, std::span<const S>);

BPSIM_INSTANTIATE(float)
BPSIM_INSTANTIATE(double)
#undef BPSIM_INSTANTIATE

template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;
template NetworkParams<float> NetworkParams<float>::cast<float>() const;
template NetworkParams<double> NetworkParams<double>::cast<double>() const;

}  // namespace bpsim
