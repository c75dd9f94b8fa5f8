#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bpsim/random.hpp"

namespace bpsim {

/// Layer widths of a fully connected Q-network: input, hidden..., output.
/// Every hidden layer is followed by batch normalisation and a ReLU; the
/// output layer is affine.
struct NetworkShape {
  int input = 0;
  std::vector<int> hidden;
  int output = 0;

  std::vector<int> layer_sizes() const;
  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

/// Default Q-network for a suite with the given state width and action count.
NetworkShape q_network_shape(std::size_t state_width, std::size_t action_count);

enum class Mode { kTrain, kEval };

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weight;  // fan_in x fan_out
  RowVector<Scalar> bias;
};

template <typename Scalar>
struct BatchNormLayer {
  RowVector<Scalar> gamma;
  RowVector<Scalar> beta;
  RowVector<Scalar> running_mean;
  RowVector<Scalar> running_var;
};

template <typename Scalar>
struct TensorView {
  std::string name;
  std::vector<int> shape;
  std::span<Scalar> data;
  bool trainable = true;
};

/// Weights, biases and batch-norm parameters of one network. Value type:
/// copies are deep.
template <typename Scalar>
class NetworkParams {
 public:
  static constexpr Scalar kBatchNormEpsilon = Scalar(1e-5);
  static constexpr Scalar kBatchNormMomentum = Scalar(0.99);

  NetworkParams() = default;
  /// Zero weights and biases, identity batch norm.
  explicit NetworkParams(NetworkShape shape);
  /// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
  static NetworkParams he_uniform(NetworkShape shape, Rng& rng);

  const NetworkShape& shape() const { return shape_; }

  /// Tensors in the fixed serialization order: per hidden layer
  /// weight, bias, gamma, beta, running mean, running var; then the
  /// output weight and bias.
  std::vector<TensorView<Scalar>> tensors();
  std::vector<TensorView<const Scalar>> tensors() const;

  template <typename Other>
  NetworkParams<Other> cast() const;

  bool all_finite() const;
  bool operator==(const NetworkParams& other) const;

  std::vector<DenseLayer<Scalar>> dense;
  std::vector<BatchNormLayer<Scalar>> norm;

 private:
  NetworkShape shape_;
};

template <typename Scalar>
NetworkParams<Scalar> clone_params(const NetworkParams<Scalar>& params) {
  return params;
}

/// Overwrites dst with src. Shapes must match.
template <typename Scalar>
void copy_into(const NetworkParams<Scalar>& src, NetworkParams<Scalar>& dst);

/// Eval-mode forward pass using running batch-norm statistics. Pure.
template <typename Scalar>
Matrix<Scalar> forward(const NetworkParams<Scalar>& params,
                       const Matrix<Scalar>& inputs);

/// Forward pass in the given mode. Train mode normalises with batch
/// statistics, needs at least two rows and updates the running statistics.
template <typename Scalar>
Matrix<Scalar> forward(NetworkParams<Scalar>& params,
                       const Matrix<Scalar>& inputs, Mode mode);

/// Mean over rows of (target - Q(row)[action])^2 with train-mode batch
/// statistics; fills `gradients` (same shape as params, running statistics
/// left at zero). Does not modify params.
template <typename Scalar>
Scalar loss_and_gradients(const NetworkParams<Scalar>& params,
                          const Matrix<Scalar>& inputs,
                          std::span<const int> actions,
                          std::span<const Scalar> targets,
                          NetworkParams<Scalar>& gradients);

/// Same loss without gradients and without touching running statistics.
template <typename Scalar>
Scalar selected_output_loss(const NetworkParams<Scalar>& params,
                            const Matrix<Scalar>& inputs,
                            std::span<const int> actions,
                            std::span<const Scalar> targets);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename Scalar>
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(const NetworkShape& shape, AdamConfig config);

  /// Applies one bias-corrected Adam update to every trainable tensor.
  void apply(NetworkParams<Scalar>& params, const NetworkParams<Scalar>& gradients);

  const AdamConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_; }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  NetworkParams<Scalar> first_moment_;
  NetworkParams<Scalar> second_moment_;
};

/// One optimisation step on the selected-output squared error. Returns the
/// loss before the update; throws DivergenceError when it is not finite.
template <typename Scalar>
Scalar train_step(NetworkParams<Scalar>& params, AdamOptimizer<Scalar>& optimizer,
                  const Matrix<Scalar>& inputs, std::span<const int> actions,
                  std::span<const Scalar> targets);

using Network = NetworkParams<float>;

}  // namespace bpsim
