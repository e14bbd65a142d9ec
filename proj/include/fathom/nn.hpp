#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fathom/tensor.hpp"

namespace fathom {

using Rng = std::mt19937_64;

enum class Activation { none, tanh, sigmoid, softmax };
enum class Mode { train, eval };

// A trainable tensor plus the L2 coefficient applied to it by the optimizer.
struct NamedParam {
  std::string name;
  Tensor tensor;
  double l2 = 0.0;
};

// y = act(x W + b), x of shape [batch x in].
struct DenseLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
  Activation activation = Activation::none;

  static DenseLayer zeros(std::size_t in, std::size_t out, Activation activation);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Single LSTM layer returning the full hidden sequence.
//
// Gate pre-activations for the input (i), forget (f), output (o) and
// candidate (g) paths are stored side by side: column block 0 of every
// weight/bias belongs to i, block 1 to f, block 2 to o, block 3 to g.
//
//   z = x_t W + h_{t-1} U + b
//   i = sigmoid(z_i)  f = sigmoid(z_f)  o = sigmoid(z_o)  g = tanh(z_g)
//   c_t = f * c_{t-1} + i * g
//   h_t = o * tanh(c_t)
//
// In train mode the input dropout and the recurrent dropout each draw one
// inverted-dropout mask per sequence and reuse it at every step.
struct LstmLayer {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor w_input;      // [input x 4*hidden]
  Tensor w_recurrent;  // [hidden x 4*hidden]
  Tensor bias;         // [4*hidden]
  double dropout = 0.0;
  double recurrent_dropout = 0.0;
  double l2 = 0.0;

  static LstmLayer zeros(std::size_t input, std::size_t hidden);

  // x: [batch x T x input] -> [batch x T x hidden]. `rng` may be null in eval mode.
  Tensor forward(const Tensor& x, Mode mode, Rng* rng) const;
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Inverted-dropout keep mask: entries are 0 or 1/(1-rate).
std::vector<double> dropout_mask(std::size_t n, double rate, Rng& rng);
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// --- initialization ---------------------------------------------------------

std::vector<double> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count, Rng& rng);
// Row-major n x n orthogonal matrix (Gram-Schmidt on a Gaussian draw).
std::vector<double> orthogonal(std::size_t n, Rng& rng);

// Glorot weights, zero bias.
void init_dense(DenseLayer& layer, Rng& rng);
// Glorot input kernel, orthogonal recurrent blocks, forget-gate bias 1.
void init_lstm(LstmLayer& layer, Rng& rng);

// --- Adam ---------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. The L2 term of each NamedParam is folded into the
// gradient (g + 2*l2*w) before the moment update. Parameters without a
// gradient buffer are treated as having zero gradient.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Throws NumericError, leaving every parameter untouched, if any gradient
  // is non-finite.
  void step(std::span<const NamedParam> params);

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace fathom
