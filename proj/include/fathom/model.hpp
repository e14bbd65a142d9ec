#pragma once

// The hierarchical attention model and the comparison variants.
//
// A forward pass is split into the two halves that run on a task node,
// with the coordinator's time attention in between:
//
//   encode  (node k)      X -> [sensor attention] -> LSTM1 -> h^k
//   attend  (coordinator) h^1..h^K -> concat -> flatten -> dense+tanh -> softmax over T -> a
//   predict (node k)      X * repeat(a) -> LSTM2 -> last step -> fc1 -> fc2
//
// Note that the time attention is applied to the raw task inputs X, not to
// the sensor-attended context, so sensor attention reaches the predictions
// only through the hidden states that shape `a`.
//
// Variants without central attention skip the coordinator step; `forward`
// runs all three stages in one graph and is the reference for the
// federated runtime, which runs the same stage functions on separate graphs.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fathom/nn.hpp"

namespace fathom {

enum class ModelVariant { fathom, fathom_sa, fathom_ca, s_lstm, m_lstm, lr, mlp_16_16 };
enum class TaskKind { classification, regression };

std::string_view to_string(ModelVariant variant);
std::string_view to_string(TaskKind kind);
// Throws ContractError for unknown names.
ModelVariant parse_variant(std::string_view name);
TaskKind parse_task_kind(std::string_view name);

bool has_sensor_attention(ModelVariant v);
bool has_central_attention(ModelVariant v);

struct TaskShape {
  std::size_t features = 0;  // D
  std::size_t labels = 0;    // M
  TaskKind kind = TaskKind::classification;
};

struct ModelConfig {
  ModelVariant variant = ModelVariant::fathom;
  std::size_t window = 30;      // T
  std::size_t hidden = 64;      // H, both LSTM layers
  std::size_t head_width = 64;  // fc1 units
  std::size_t mlp_width = 16;
  double dropout = 0.25;
  double recurrent_dropout = 0.25;
  double l2 = 1e-4;
  std::vector<TaskShape> tasks;

  std::size_t task_count() const { return tasks.size(); }
  // Throws ConfigError.
  void validate() const;
};

// Parameters private to one task node. Which members are present depends on
// the variant.
struct TaskParams {
  std::optional<DenseLayer> sensor_score;  // D -> D
  std::optional<LstmLayer> lstm1;          // D -> H (also the S-LSTM layer)
  std::optional<LstmLayer> lstm2;          // D -> H, or H -> H without central attention
  std::optional<DenseLayer> fc1;           // H -> head_width, tanh
  std::optional<DenseLayer> fc2;           // head_width -> M
  std::optional<DenseLayer> output;        // LR / MLP output layer

  std::vector<NamedParam> parameters(const std::string& prefix) const;
  TaskParams clone() const;
};

// Parameters owned by the coordinator.
struct SharedParams {
  std::optional<DenseLayer> time_score;  // T*K*H -> T, tanh
  std::optional<LstmLayer> lstm;         // M-LSTM's shared layer
  std::optional<DenseLayer> mlp1;        // T*D -> 16, tanh
  std::optional<DenseLayer> mlp2;        // 16 -> 16, tanh

  std::vector<NamedParam> parameters() const;
  SharedParams clone() const;
  bool empty() const { return parameters().empty(); }
};

struct ModelParams {
  std::vector<TaskParams> tasks;
  SharedParams shared;

  // Task parameters in task order, then shared ones.
  std::vector<NamedParam> parameters() const;
  ModelParams clone() const;
};

// All-zero parameters with the variant's structure.
ModelParams zero_params(const ModelConfig& config);
// Glorot / orthogonal initialization. Task k draws from its own stream
// derived from (seed, k), so task parameters do not depend on K.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Deterministic 64-bit stream derivation (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt, std::uint64_t index);

// --- attention ----------------------------------------------------------------

struct SensorAttentionResult {
  Tensor context;  // tanh(X * A), same shape as X
  Tensor weights;  // A, softmax over the last axis
};

// X: [..., D]. The score layer is applied to every time-step row.
SensorAttentionResult sensor_attention(const DenseLayer& score, const Tensor& x);

// h: K tensors of [batch x T x H]  ->  a: [batch x T]
Tensor time_attention(const DenseLayer& score, std::span<const Tensor> hidden);
// X: [batch x T x D], a: [batch x T]  ->  X * repeat_D(a)
Tensor apply_time_attention(const Tensor& x, const Tensor& attention);

struct CentralAttentionResult {
  std::vector<Tensor> contexts;  // per task, [batch x T x D_k]
  Tensor weights;                // [batch x T]
};
CentralAttentionResult central_attention(const DenseLayer& score, std::span<const Tensor> hidden,
                                         std::span<const Tensor> inputs);

// --- staged forward -----------------------------------------------------------

struct EncodeResult {
  Tensor hidden;            // [batch x T x H]; undefined for LR / MLP
  Tensor sensor_attention;  // [batch x T x D]; undefined without sensor attention
};

EncodeResult encode(const ModelConfig& config, std::size_t task, const TaskParams& params,
                    const SharedParams& shared, const Tensor& x, Mode mode, Rng* rng);

// `attention` is ignored (may be undefined) for variants without central attention.
Tensor predict(const ModelConfig& config, std::size_t task, const TaskParams& params, const SharedParams& shared,
               const Tensor& x, const EncodeResult& encoded, const Tensor& attention, Mode mode, Rng* rng);

struct ForwardResult {
  std::vector<Tensor> predictions;       // per task, [batch x M_k]
  std::vector<Tensor> sensor_attention;  // per task, may be undefined
  Tensor time_attention;                 // may be undefined
};

// Single-graph forward over all K tasks. `rngs` holds one stream per task
// (may be empty in eval mode or when dropout is off).
ForwardResult forward(const ModelConfig& config, const ModelParams& params, std::span<const Tensor> inputs,
                      Mode mode, std::span<Rng> rngs = {});

// --- losses --------------------------------------------------------------------

// Binary cross-entropy summed over labels, averaged over the batch.
// Predictions are clamped to [1e-12, 1 - 1e-12]. Throws DataError if a
// label is not 0 or 1.
Tensor loss_classification(const Tensor& predicted, const Tensor& labels);
// (1/M) * sum of absolute errors, averaged over the batch.
Tensor loss_regression(const Tensor& predicted, const Tensor& labels);
Tensor task_loss(TaskKind kind, const Tensor& predicted, const Tensor& labels);

}  // namespace fathom
