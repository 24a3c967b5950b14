#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dacpol/linalg.hpp"
#include "dacpol/rng.hpp"

namespace dacpol::nnet {

enum class Activation : std::uint8_t { identity = 0, relu = 1 };

struct DenseLayer {
  Matrix weights;  // in x out
  RowVector bias;  // out
  Activation activation = Activation::identity;

  Eigen::Index in() const { return weights.rows(); }
  Eigen::Index out() const { return weights.cols(); }
};

struct Network {
  std::vector<DenseLayer> layers;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().out(); }
  std::size_t num_parameters() const;
};

// widths = {in, hidden..., out}. Hidden layers use `hidden`, the last layer
// uses `output`. Weights are Glorot-uniform, biases zero.
Network make_network(std::span<const int> widths, Activation hidden, Activation output, Rng& rng);

struct ForwardCache {
  std::vector<Matrix> inputs;          // input to each layer
  std::vector<Matrix> pre_activations; // affine output of each layer
};

// Rows of `input` are samples. Fills `cache` when given.
Matrix forward(const Network& net, const Matrix& input, ForwardCache* cache = nullptr);

struct LayerGradient {
  Matrix weights;
  RowVector bias;
};

struct NetworkGradient {
  std::vector<LayerGradient> layers;

  static NetworkGradient zeros_like(const Network& net);
  void set_zero();
  // this += scale * other
  void add_scaled(const NetworkGradient& other, double scale);
  bool all_finite() const;
  double squared_norm() const;
};

// Accumulates parameter gradients into `grad` (which must be shaped like
// `net`) and returns the gradient with respect to the network input.
Matrix backward(const Network& net, const ForwardCache& cache, const Matrix& grad_output,
                NetworkGradient& grad);

// Sign pattern of every ReLU pre-activation in the cache, hashed. Two
// evaluations with equal patterns lie in the same linear region.
std::uint64_t activation_pattern(const Network& net, const ForwardCache& cache);

double sigmoid(double t);
Vector softmax(std::span<const double> logits);
// Row-wise softmax with max-shift.
Matrix softmax_rows(const Matrix& logits);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<LayerGradient> first_moment;
  std::vector<LayerGradient> second_moment;

  static AdamState for_network(const Network& net);
};

// One bias-corrected Adam descent step. Throws UpdateError(block_name) when
// the gradient carries a non-finite entry; parameters are then untouched.
void adam_step(Network& net, const NetworkGradient& grad, AdamState& state, double learning_rate,
               std::string_view block_name);

// Addresses of every scalar parameter in a fixed order (layer by layer,
// weights row-major then bias), and the matching flattening of a gradient.
std::vector<double*> parameter_pointers(Network& net);
std::vector<double> flatten(const NetworkGradient& grad);

// Checkpoints: named blocks, each a layer stack, row-major float64.
struct NamedBlock {
  std::string name;
  Network network;
};

void write_checkpoint(std::ostream& out, std::span<const NamedBlock> blocks);
std::vector<NamedBlock> read_checkpoint(std::istream& in);

// Finite-difference verification of analytic gradients.
struct Probe {
  double value = 0.0;
  std::uint64_t pattern = 0;  // activation pattern; see activation_pattern
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  // Coordinates where the +h or -h evaluation changed the ReLU pattern; the
  // loss is not differentiable across those so they are not compared.
  std::size_t skipped = 0;
};

inline constexpr double kGradCheckStep = 1e-5;

// |a - b| / max(|a|, |b|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

GradCheckReport check_gradient(std::span<double* const> params, std::span<const double> analytic,
                               const std::function<Probe()>& evaluate, double h = kGradCheckStep);

}  // namespace dacpol::nnet
