#include "fathom/nn.hpp"

#include <cmath>

namespace fathom {

// --- Dense -------------------------------------------------------------------

DenseLayer DenseLayer::zeros(std::size_t in, std::size_t out, Activation activation) {
  return DenseLayer{Tensor::zeros(Shape{in, out}, true), Tensor::zeros(Shape{out}, true), activation};
}

Tensor DenseLayer::forward(const Tensor& x) const {
  if (x.shape().rank() != 2 || x.dim(1) != in_features()) {
    throw DimensionError("dense: expected [batch x " + std::to_string(in_features()) + "], got " +
                         x.shape().to_string());
  }
  Tensor y = add(matmul(x, weight), repeat(bias, 0, x.dim(0)));
  switch (activation) {
    case Activation::none:
      return y;
    case Activation::tanh:
      return fathom::tanh(y);
    case Activation::sigmoid:
      return sigmoid(y);
    case Activation::softmax:
      return softmax(y, 1);
  }
  return y;
}

void DenseLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".weight", weight, 0.0});
  out.push_back({prefix + ".bias", bias, 0.0});
}

// --- LSTM --------------------------------------------------------------------

LstmLayer LstmLayer::zeros(std::size_t input, std::size_t hidden) {
  LstmLayer layer;
  layer.input_size = input;
  layer.hidden_size = hidden;
  layer.w_input = Tensor::zeros(Shape{input, 4 * hidden}, true);
  layer.w_recurrent = Tensor::zeros(Shape{hidden, 4 * hidden}, true);
  layer.bias = Tensor::zeros(Shape{4 * hidden}, true);
  return layer;
}

Tensor LstmLayer::forward(const Tensor& x, Mode mode, Rng* rng) const {
  const Shape& s = x.shape();
  if (s.rank() != 3 || s[2] != input_size) {
    throw DimensionError("lstm: expected [batch x T x " + std::to_string(input_size) + "], got " + s.to_string());
  }
  const std::size_t batch = s[0], steps = s[1], hidden = hidden_size;
  const bool training = mode == Mode::train;
  if (training && (dropout > 0.0 || recurrent_dropout > 0.0) && rng == nullptr) {
    throw ContractError("lstm: train-mode dropout needs a random stream");
  }

  Tensor input = x;
  if (training && dropout > 0.0) {
    Tensor mask(Shape{batch, input_size}, dropout_mask(batch * input_size, dropout, *rng));
    input = mul(x, repeat(mask, 1, steps));
  }
  Tensor recurrent_mask;
  if (training && recurrent_dropout > 0.0) {
    recurrent_mask = Tensor(Shape{batch, hidden}, dropout_mask(batch * hidden, recurrent_dropout, *rng));
  }

  // Input projections for all steps at once.
  const Tensor projected =
      reshape(matmul(reshape(input, Shape{batch * steps, input_size}), w_input), Shape{batch, steps, 4 * hidden});
  const Tensor bias_rows = repeat(bias, 0, batch);

  Tensor h = Tensor::zeros(Shape{batch, hidden});
  Tensor c = Tensor::zeros(Shape{batch, hidden});
  std::vector<Tensor> outputs;
  outputs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor h_in = recurrent_mask.defined() ? mul(h, recurrent_mask) : h;
    const Tensor z = add(add(select(projected, 1, t), matmul(h_in, w_recurrent)), bias_rows);
    const Tensor i = sigmoid(slice(z, 1, 0, hidden));
    const Tensor f = sigmoid(slice(z, 1, hidden, hidden));
    const Tensor o = sigmoid(slice(z, 1, 2 * hidden, hidden));
    const Tensor g = fathom::tanh(slice(z, 1, 3 * hidden, hidden));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, fathom::tanh(c));
    outputs.push_back(h);
  }
  return stack(outputs, 1);
}

void LstmLayer::collect(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".w_input", w_input, l2});
  out.push_back({prefix + ".w_recurrent", w_recurrent, l2});
  out.push_back({prefix + ".bias", bias, 0.0});
}

// --- dropout -----------------------------------------------------------------

std::vector<double> dropout_mask(std::size_t n, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must be in [0, 1)");
  std::vector<double> mask(n, 1.0);
  if (rate == 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale_up = 1.0 / (1.0 - rate);
  for (auto& m : mask) m = keep(rng) ? scale_up : 0.0;
  return mask;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  return mul(x, Tensor(x.shape(), dropout_mask(x.numel(), rate, rng)));
}

// --- initialization ------------------------------------------------------------

std::vector<double> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t count, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

std::vector<double> orthogonal(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  // Columns of q, stored column-major during the sweep.
  std::vector<std::vector<double>> cols(n, std::vector<double>(n));
  for (auto& col : cols) {
    for (auto& v : col) v = normal(rng);
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t r = 0; r < n; ++r) dot += cols[j][r] * cols[k][r];
      for (std::size_t r = 0; r < n; ++r) cols[j][r] -= dot * cols[k][r];
    }
    double norm = 0.0;
    for (double v : cols[j]) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : cols[j]) v /= norm;
  }
  std::vector<double> out(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = cols[c][r];
  }
  return out;
}

void init_dense(DenseLayer& layer, Rng& rng) {
  const auto in = layer.in_features(), out = layer.out_features();
  auto w = glorot_uniform(in, out, in * out, rng);
  std::copy(w.begin(), w.end(), layer.weight.mutable_values().begin());
  auto b = layer.bias.mutable_values();
  std::fill(b.begin(), b.end(), 0.0);
}

void init_lstm(LstmLayer& layer, Rng& rng) {
  const std::size_t in = layer.input_size, h = layer.hidden_size;
  auto w = glorot_uniform(in, 4 * h, in * 4 * h, rng);
  std::copy(w.begin(), w.end(), layer.w_input.mutable_values().begin());

  auto u = layer.w_recurrent.mutable_values();
  for (std::size_t gate = 0; gate < 4; ++gate) {
    const auto block = orthogonal(h, rng);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < h; ++c) u[r * 4 * h + gate * h + c] = block[r * h + c];
    }
  }

  auto b = layer.bias.mutable_values();
  std::fill(b.begin(), b.end(), 0.0);
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(h), b.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0);
}

// --- Adam ----------------------------------------------------------------------

void Adam::step(std::span<const NamedParam> params) {
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.emplace_back(p.tensor.numel(), 0.0);
      second_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (first_.size() != params.size()) throw ContractError("adam: parameter list changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& t = params[k].tensor;
    if (first_[k].size() != t.numel()) throw ContractError("adam: shape changed for " + params[k].name);
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in " + params[k].name);
    }
  }

  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto w = t.mutable_values();
    const bool has_grad = t.has_grad();
    const std::span<const double> grad = has_grad ? t.grad() : std::span<const double>{};
    const double l2 = params[k].l2;
    auto& m = first_[k];
    auto& v = second_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = has_grad ? grad[i] : 0.0;
      if (l2 != 0.0) g += 2.0 * l2 * w[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

}  // namespace fathom
