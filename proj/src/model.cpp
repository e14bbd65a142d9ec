#include "fathom/model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

namespace fathom {

namespace {

constexpr std::array<std::pair<ModelVariant, std::string_view>, 7> kVariantNames{{
    {ModelVariant::fathom, "FATHOM"},
    {ModelVariant::fathom_sa, "FATHOM-sa"},
    {ModelVariant::fathom_ca, "FATHOM-ca"},
    {ModelVariant::s_lstm, "S-LSTM"},
    {ModelVariant::m_lstm, "M-LSTM"},
    {ModelVariant::lr, "LR"},
    {ModelVariant::mlp_16_16, "MLP-16-16"},
}};

std::string canonical(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '-' || c == '_' || c == '(' || c == ')' || c == ',' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

Activation output_activation(TaskKind kind) {
  return kind == TaskKind::classification ? Activation::sigmoid : Activation::none;
}

LstmLayer make_lstm(const ModelConfig& c, std::size_t input) {
  LstmLayer layer = LstmLayer::zeros(input, c.hidden);
  layer.dropout = c.dropout;
  layer.recurrent_dropout = c.recurrent_dropout;
  layer.l2 = c.l2;
  return layer;
}

void clone_into(std::optional<DenseLayer>& dst, const std::optional<DenseLayer>& src) {
  if (!src) return;
  dst = DenseLayer{src->weight.detach(true), src->bias.detach(true), src->activation};
}

void clone_into(std::optional<LstmLayer>& dst, const std::optional<LstmLayer>& src) {
  if (!src) return;
  dst = *src;
  dst->w_input = src->w_input.detach(true);
  dst->w_recurrent = src->w_recurrent.detach(true);
  dst->bias = src->bias.detach(true);
}

Tensor heads(const TaskParams& p, const Tensor& sequence) {
  const Tensor last = select(sequence, 1, sequence.dim(1) - 1);
  return p.fc2->forward(p.fc1->forward(last));
}

Tensor flatten_rows(const Tensor& x) { return reshape(x, Shape{x.dim(0), x.numel() / x.dim(0)}); }

}  // namespace

std::string_view to_string(ModelVariant variant) {
  for (const auto& [v, name] : kVariantNames) {
    if (v == variant) return name;
  }
  return "unknown";
}

std::string_view to_string(TaskKind kind) {
  return kind == TaskKind::classification ? "classification" : "regression";
}

ModelVariant parse_variant(std::string_view name) {
  const auto key = canonical(name);
  for (const auto& [v, n] : kVariantNames) {
    if (canonical(n) == key) return v;
  }
  throw ContractError("unknown model variant '" + std::string(name) + "'");
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification") return TaskKind::classification;
  if (name == "regression") return TaskKind::regression;
  throw ContractError("unknown task kind '" + std::string(name) + "'");
}

bool has_sensor_attention(ModelVariant v) { return v == ModelVariant::fathom || v == ModelVariant::fathom_ca; }
bool has_central_attention(ModelVariant v) { return v == ModelVariant::fathom || v == ModelVariant::fathom_sa; }

void ModelConfig::validate() const {
  if (tasks.empty()) throw ConfigError("model: at least one task is required");
  if (window == 0) throw ConfigError("model: window must be positive");
  if (hidden == 0) throw ConfigError("model: hidden must be positive");
  if (head_width == 0) throw ConfigError("model: head_width must be positive");
  if (mlp_width == 0) throw ConfigError("model: mlp_width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
  if (!(recurrent_dropout >= 0.0 && recurrent_dropout < 1.0)) {
    throw ConfigError("model: recurrent_dropout must be in [0, 1)");
  }
  if (!(l2 >= 0.0)) throw ConfigError("model: l2 must be non-negative");
  for (const auto& t : tasks) {
    if (t.features == 0 || t.labels == 0) throw ConfigError("model: every task needs features and labels");
  }
  if (variant == ModelVariant::m_lstm || variant == ModelVariant::mlp_16_16) {
    for (const auto& t : tasks) {
      if (t.features != tasks[0].features) {
        throw ConfigError("model: " + std::string(to_string(variant)) + " shares layers and needs equal D per task");
      }
    }
  }
}

// --- parameter containers -------------------------------------------------------

std::vector<NamedParam> TaskParams::parameters(const std::string& prefix) const {
  std::vector<NamedParam> out;
  if (sensor_score) sensor_score->collect(prefix + "sensor_score", out);
  if (lstm1) lstm1->collect(prefix + "lstm1", out);
  if (lstm2) lstm2->collect(prefix + "lstm2", out);
  if (fc1) fc1->collect(prefix + "fc1", out);
  if (fc2) fc2->collect(prefix + "fc2", out);
  if (output) output->collect(prefix + "output", out);
  return out;
}

TaskParams TaskParams::clone() const {
  TaskParams p;
  clone_into(p.sensor_score, sensor_score);
  clone_into(p.lstm1, lstm1);
  clone_into(p.lstm2, lstm2);
  clone_into(p.fc1, fc1);
  clone_into(p.fc2, fc2);
  clone_into(p.output, output);
  return p;
}

std::vector<NamedParam> SharedParams::parameters() const {
  std::vector<NamedParam> out;
  if (time_score) time_score->collect("shared.time_score", out);
  if (lstm) lstm->collect("shared.lstm", out);
  if (mlp1) mlp1->collect("shared.mlp1", out);
  if (mlp2) mlp2->collect("shared.mlp2", out);
  return out;
}

SharedParams SharedParams::clone() const {
  SharedParams p;
  clone_into(p.time_score, time_score);
  clone_into(p.lstm, lstm);
  clone_into(p.mlp1, mlp1);
  clone_into(p.mlp2, mlp2);
  return p;
}

std::vector<NamedParam> ModelParams::parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto p = tasks[k].parameters("task" + std::to_string(k) + ".");
    out.insert(out.end(), p.begin(), p.end());
  }
  auto s = shared.parameters();
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  for (const auto& t : tasks) p.tasks.push_back(t.clone());
  p.shared = shared.clone();
  return p;
}

ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  const std::size_t T = c.window, H = c.hidden, K = c.task_count();
  ModelParams params;
  for (const auto& task : c.tasks) {
    const std::size_t D = task.features, M = task.labels;
    TaskParams p;
    switch (c.variant) {
      case ModelVariant::fathom:
      case ModelVariant::fathom_sa:
      case ModelVariant::fathom_ca:
        if (has_sensor_attention(c.variant)) p.sensor_score = DenseLayer::zeros(D, D, Activation::none);
        p.lstm1 = make_lstm(c, D);
        p.lstm2 = make_lstm(c, c.variant == ModelVariant::fathom_ca ? H : D);
        break;
      case ModelVariant::s_lstm:
        p.lstm1 = make_lstm(c, D);
        break;
      default:
        break;
    }
    switch (c.variant) {
      case ModelVariant::lr:
        p.output = DenseLayer::zeros(T * D, M, output_activation(task.kind));
        break;
      case ModelVariant::mlp_16_16:
        p.output = DenseLayer::zeros(c.mlp_width, M, output_activation(task.kind));
        break;
      default:
        p.fc1 = DenseLayer::zeros(H, c.head_width, Activation::tanh);
        p.fc2 = DenseLayer::zeros(c.head_width, M, output_activation(task.kind));
        break;
    }
    params.tasks.push_back(std::move(p));
  }
  if (has_central_attention(c.variant)) params.shared.time_score = DenseLayer::zeros(T * K * H, T, Activation::tanh);
  if (c.variant == ModelVariant::m_lstm) params.shared.lstm = make_lstm(c, c.tasks[0].features);
  if (c.variant == ModelVariant::mlp_16_16) {
    params.shared.mlp1 = DenseLayer::zeros(T * c.tasks[0].features, c.mlp_width, Activation::tanh);
    params.shared.mlp2 = DenseLayer::zeros(c.mlp_width, c.mlp_width, Activation::tanh);
  }
  return params;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ salt) ^ index);
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params = zero_params(config);
  for (std::size_t k = 0; k < params.tasks.size(); ++k) {
    Rng rng(derive_seed(seed, 1, k));
    auto& p = params.tasks[k];
    if (p.sensor_score) init_dense(*p.sensor_score, rng);
    if (p.lstm1) init_lstm(*p.lstm1, rng);
    if (p.lstm2) init_lstm(*p.lstm2, rng);
    if (p.fc1) init_dense(*p.fc1, rng);
    if (p.fc2) init_dense(*p.fc2, rng);
    if (p.output) init_dense(*p.output, rng);
  }
  Rng rng(derive_seed(seed, 2, 0));
  auto& s = params.shared;
  if (s.time_score) init_dense(*s.time_score, rng);
  if (s.lstm) init_lstm(*s.lstm, rng);
  if (s.mlp1) init_dense(*s.mlp1, rng);
  if (s.mlp2) init_dense(*s.mlp2, rng);
  return params;
}

// --- attention ------------------------------------------------------------------

SensorAttentionResult sensor_attention(const DenseLayer& score, const Tensor& x) {
  const Shape& s = x.shape();
  if (s.rank() < 2) throw DimensionError("sensor attention: expected [..., D], got " + s.to_string());
  const std::size_t D = s[s.rank() - 1];
  const Tensor rows = reshape(x, Shape{x.numel() / D, D});
  const Tensor weights = reshape(softmax(score.forward(rows), 1), s);
  return {fathom::tanh(mul(x, weights)), weights};
}

Tensor time_attention(const DenseLayer& score, std::span<const Tensor> hidden) {
  if (hidden.empty()) throw ContractError("central attention: no task hidden states");
  const Shape& first = hidden[0].shape();
  if (first.rank() != 3) throw DimensionError("central attention: expected [batch x T x H], got " + first.to_string());
  for (const Tensor& h : hidden) {
    const Shape& s = h.shape();
    if (s.rank() != 3 || s[0] != first[0] || s[1] != first[1]) {
      throw DimensionError("central attention: hidden " + s.to_string() + " does not align with " +
                           first.to_string());
    }
  }
  const Tensor shared = concat(hidden, 2);
  const Tensor flat = flatten_rows(shared);
  if (flat.dim(1) != score.in_features() || score.out_features() != first[1]) {
    throw DimensionError("central attention: score layer expects " + std::to_string(score.in_features()) + " -> " +
                         std::to_string(score.out_features()) + ", got " + std::to_string(flat.dim(1)) +
                         " inputs for T=" + std::to_string(first[1]));
  }
  return softmax(score.forward(flat), 1);
}

Tensor apply_time_attention(const Tensor& x, const Tensor& attention) {
  const Shape& s = x.shape();
  if (s.rank() != 3 || attention.shape() != Shape{s[0], s[1]}) {
    throw DimensionError("time attention: inputs " + s.to_string() + " vs weights " + attention.shape().to_string());
  }
  return mul(x, repeat(attention, 2, s[2]));
}

CentralAttentionResult central_attention(const DenseLayer& score, std::span<const Tensor> hidden,
                                         std::span<const Tensor> inputs) {
  if (inputs.size() != hidden.size()) throw ContractError("central attention: one input per task is required");
  CentralAttentionResult out;
  out.weights = time_attention(score, hidden);
  for (const Tensor& x : inputs) out.contexts.push_back(apply_time_attention(x, out.weights));
  return out;
}

// --- staged forward -------------------------------------------------------------

EncodeResult encode(const ModelConfig& c, std::size_t task, const TaskParams& p, const SharedParams& shared,
                    const Tensor& x, Mode mode, Rng* rng) {
  const Shape& s = x.shape();
  if (s.rank() != 3 || s[1] != c.window || s[2] != c.tasks.at(task).features) {
    throw DimensionError("task " + std::to_string(task) + ": expected [batch x " + std::to_string(c.window) + " x " +
                         std::to_string(c.tasks.at(task).features) + "], got " + s.to_string());
  }
  EncodeResult out;
  switch (c.variant) {
    case ModelVariant::fathom:
    case ModelVariant::fathom_ca: {
      auto attended = sensor_attention(*p.sensor_score, x);
      out.sensor_attention = attended.weights;
      out.hidden = p.lstm1->forward(attended.context, mode, rng);
      break;
    }
    case ModelVariant::fathom_sa:
    case ModelVariant::s_lstm:
      out.hidden = p.lstm1->forward(x, mode, rng);
      break;
    case ModelVariant::m_lstm:
      out.hidden = shared.lstm->forward(x, mode, rng);
      break;
    case ModelVariant::lr:
    case ModelVariant::mlp_16_16:
      break;
  }
  return out;
}

Tensor predict(const ModelConfig& c, std::size_t, const TaskParams& p, const SharedParams& shared, const Tensor& x,
               const EncodeResult& encoded, const Tensor& attention, Mode mode, Rng* rng) {
  switch (c.variant) {
    case ModelVariant::fathom:
    case ModelVariant::fathom_sa: {
      if (!attention.defined()) throw ContractError("predict: central attention weights missing");
      return heads(p, p.lstm2->forward(apply_time_attention(x, attention), mode, rng));
    }
    case ModelVariant::fathom_ca:
      return heads(p, p.lstm2->forward(encoded.hidden, mode, rng));
    case ModelVariant::s_lstm:
    case ModelVariant::m_lstm:
      return heads(p, encoded.hidden);
    case ModelVariant::lr:
      return p.output->forward(flatten_rows(x));
    case ModelVariant::mlp_16_16:
      return p.output->forward(shared.mlp2->forward(shared.mlp1->forward(flatten_rows(x))));
  }
  throw ContractError("predict: unknown variant");
}

ForwardResult forward(const ModelConfig& c, const ModelParams& params, std::span<const Tensor> inputs, Mode mode,
                      std::span<Rng> rngs) {
  const std::size_t K = c.task_count();
  if (inputs.size() != K || params.tasks.size() != K) throw ContractError("forward: one input batch per task");
  if (!rngs.empty() && rngs.size() != K) throw ContractError("forward: one random stream per task");
  auto rng_of = [&](std::size_t k) { return rngs.empty() ? nullptr : &rngs[k]; };

  std::vector<EncodeResult> encoded;
  for (std::size_t k = 0; k < K; ++k) {
    encoded.push_back(encode(c, k, params.tasks[k], params.shared, inputs[k], mode, rng_of(k)));
  }
  ForwardResult out;
  if (has_central_attention(c.variant)) {
    std::vector<Tensor> hidden;
    for (const auto& e : encoded) hidden.push_back(e.hidden);
    out.time_attention = time_attention(*params.shared.time_score, hidden);
  }
  for (std::size_t k = 0; k < K; ++k) {
    out.predictions.push_back(
        predict(c, k, params.tasks[k], params.shared, inputs[k], encoded[k], out.time_attention, mode, rng_of(k)));
    out.sensor_attention.push_back(encoded[k].sensor_attention);
  }
  return out;
}

// --- losses ---------------------------------------------------------------------

Tensor loss_classification(const Tensor& predicted, const Tensor& labels) {
  if (predicted.shape() != labels.shape() || predicted.shape().rank() != 2) {
    throw DimensionError("classification loss: predictions " + predicted.shape().to_string() + " vs labels " +
                         labels.shape().to_string());
  }
  for (double y : labels.values()) {
    if (y != 0.0 && y != 1.0) throw DataError("classification loss: labels must be 0 or 1");
  }
  const double batch = static_cast<double>(predicted.dim(0));
  const Tensor p = clamp(predicted, 1e-12, 1.0 - 1e-12);
  const Tensor negatives = add_scalar(scale(labels, -1.0), 1.0);
  const Tensor log_likelihood =
      add(sum(mul(labels, log(p))), sum(mul(negatives, log(add_scalar(scale(p, -1.0), 1.0)))));
  return scale(log_likelihood, -1.0 / batch);
}

Tensor loss_regression(const Tensor& predicted, const Tensor& labels) {
  if (predicted.shape() != labels.shape() || predicted.shape().rank() != 2) {
    throw DimensionError("regression loss: predictions " + predicted.shape().to_string() + " vs labels " +
                         labels.shape().to_string());
  }
  const double norm = static_cast<double>(predicted.dim(0) * predicted.dim(1));
  return scale(sum(abs(sub(predicted, labels))), 1.0 / norm);
}

Tensor task_loss(TaskKind kind, const Tensor& predicted, const Tensor& labels) {
  return kind == TaskKind::classification ? loss_classification(predicted, labels)
                                          : loss_regression(predicted, labels);
}

}  // namespace fathom
