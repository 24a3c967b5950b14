#include "dacpol/nnet.hpp"

#include <cmath>
#include <stdexcept>

#include "dacpol/errors.hpp"

namespace dacpol::nnet {

std::size_t Network::num_parameters() const {
  std::size_t total = 0;
  for (const auto& layer : layers) total += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  return total;
}

Network make_network(std::span<const int> widths, Activation hidden, Activation output, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("a network needs at least input and output widths");
  Network net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    if (fan_in < 1 || fan_out < 1) throw std::invalid_argument("layer widths must be positive");
    DenseLayer layer;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    layer.weights.resize(fan_in, fan_out);
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = rng.uniform(-bound, bound);
    layer.bias = RowVector::Zero(fan_out);
    layer.activation = (l + 2 == widths.size()) ? output : hidden;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Matrix forward(const Network& net, const Matrix& input, ForwardCache* cache) {
  if (net.layers.empty()) throw std::invalid_argument("forward through an empty network");
  if (input.cols() != net.input_dim())
    throw ShapeError("network expects " + std::to_string(net.input_dim()) + " inputs, got " +
                     std::to_string(input.cols()));
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
  }
  Matrix x = input;
  for (const auto& layer : net.layers) {
    Matrix pre = x * layer.weights;
    pre.rowwise() += layer.bias;
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre_activations.push_back(pre);
    }
    if (layer.activation == Activation::relu) {
      x = pre.cwiseMax(0.0);
    } else {
      x = std::move(pre);
    }
  }
  return x;
}

NetworkGradient NetworkGradient::zeros_like(const Network& net) {
  NetworkGradient g;
  g.layers.reserve(net.layers.size());
  for (const auto& layer : net.layers)
    g.layers.push_back({Matrix::Zero(layer.in(), layer.out()), RowVector::Zero(layer.out())});
  return g;
}

void NetworkGradient::set_zero() {
  for (auto& l : layers) {
    l.weights.setZero();
    l.bias.setZero();
  }
}

void NetworkGradient::add_scaled(const NetworkGradient& other, double scale) {
  if (other.layers.size() != layers.size()) throw ShapeError("gradient layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weights += scale * other.layers[i].weights;
    layers[i].bias += scale * other.layers[i].bias;
  }
}

bool NetworkGradient::all_finite() const {
  for (const auto& l : layers)
    if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

double NetworkGradient::squared_norm() const {
  double total = 0.0;
  for (const auto& l : layers) total += l.weights.squaredNorm() + l.bias.squaredNorm();
  return total;
}

Matrix backward(const Network& net, const ForwardCache& cache, const Matrix& grad_output,
                NetworkGradient& grad) {
  const std::size_t depth = net.layers.size();
  if (cache.inputs.size() != depth || cache.pre_activations.size() != depth)
    throw ShapeError("forward cache does not match network depth");
  if (grad.layers.size() != depth) throw ShapeError("gradient buffer does not match network depth");
  if (grad_output.rows() != cache.pre_activations.back().rows() || grad_output.cols() != net.output_dim())
    throw ShapeError("upstream gradient does not match cached output");

  Matrix delta = grad_output;
  for (std::size_t l = depth; l-- > 0;) {
    const auto& layer = net.layers[l];
    if (layer.activation == Activation::relu)
      delta = (cache.pre_activations[l].array() > 0.0).select(delta, 0.0);
    grad.layers[l].weights.noalias() += cache.inputs[l].transpose() * delta;
    grad.layers[l].bias += delta.colwise().sum();
    Matrix upstream = delta * layer.weights.transpose();
    delta = std::move(upstream);
  }
  return delta;
}

std::uint64_t activation_pattern(const Network& net, const ForwardCache& cache) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t l = 0; l < net.layers.size() && l < cache.pre_activations.size(); ++l) {
    if (net.layers[l].activation != Activation::relu) continue;
    const Matrix& pre = cache.pre_activations[l];
    for (Eigen::Index i = 0; i < pre.size(); ++i) {
      h ^= pre.data()[i] > 0.0 ? 0x9eu : 0x37u;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

Vector softmax(std::span<const double> logits) {
  Vector out(static_cast<Eigen::Index>(logits.size()));
  double shift = -INFINITY;
  for (double v : logits) shift = std::max(shift, v);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = std::exp(logits[i] - shift);
    total += out[static_cast<Eigen::Index>(i)];
  }
  return out / total;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double shift = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - shift).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

AdamState AdamState::for_network(const Network& net) {
  AdamState state;
  const auto zeros = NetworkGradient::zeros_like(net);
  state.first_moment = zeros.layers;
  state.second_moment = zeros.layers;
  return state;
}

void adam_step(Network& net, const NetworkGradient& grad, AdamState& state, double learning_rate,
               std::string_view block_name) {
  const std::size_t depth = net.layers.size();
  if (grad.layers.size() != depth || state.first_moment.size() != depth || state.second_moment.size() != depth)
    throw ShapeError(std::string(block_name) + ": optimizer state does not match network");
  if (!grad.all_finite()) throw UpdateError(std::string(block_name), "non-finite gradient");

  ++state.step;
  const double correction1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double eps = state.epsilon;

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < depth; ++l) {
    update(net.layers[l].weights, grad.layers[l].weights, state.first_moment[l].weights,
           state.second_moment[l].weights);
    update(net.layers[l].bias, grad.layers[l].bias, state.first_moment[l].bias, state.second_moment[l].bias);
  }
}

std::vector<double*> parameter_pointers(Network& net) {
  std::vector<double*> out;
  out.reserve(net.num_parameters());
  for (auto& layer : net.layers) {
    for (Eigen::Index i = 0; i < layer.weights.size(); ++i) out.push_back(layer.weights.data() + i);
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) out.push_back(layer.bias.data() + i);
  }
  return out;
}

std::vector<double> flatten(const NetworkGradient& grad) {
  std::vector<double> out;
  for (const auto& layer : grad.layers) {
    out.insert(out.end(), layer.weights.data(), layer.weights.data() + layer.weights.size());
    out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
  }
  return out;
}

}  // namespace dacpol::nnet
