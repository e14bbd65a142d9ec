#pragma once

// Simulated synchronous federation. Each TaskNode owns one task's data and
// parameters; the Coordinator owns the shared parameters (the time score
// layer, or the shared layers of M-LSTM / MLP). They only exchange
// RoundMessages, whose payloads are serialized arrays of doubles:
//
//   node -> coord  hidden_states        h^k             [batch x T x H]
//   coord -> node  time_attention       a               [batch x T]
//   node -> coord  attention_grad       dL_k/da         [batch x T]
//   coord -> node  hidden_grad          dL/dh^k         [batch x T x H]
//   coord -> node  shared_params        shared weights  (M-LSTM, MLP)
//   node -> coord  shared_param_grads   dL_k/dshared    (M-LSTM, MLP)
//
// The coordinator sums the K attention gradients, backpropagates once
// through the score layer, and returns to every node the gradient of its
// hidden states so the node can finish backpropagation locally.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fathom/data.hpp"
#include "fathom/metrics.hpp"
#include "fathom/model.hpp"
#include "fathom/nn.hpp"

namespace fathom {

enum class Direction { to_coordinator, to_node };
enum class MessageKind { hidden_states, time_attention, attention_grad, hidden_grad, shared_params, shared_param_grads };
enum class Phase { train, eval };

std::string_view to_string(Direction d);
std::string_view to_string(MessageKind k);

struct RoundMessage {
  std::uint64_t round = 0;
  Phase phase = Phase::train;
  Direction direction = Direction::to_coordinator;
  std::size_t node_id = 0;
  MessageKind kind = MessageKind::hidden_states;
  std::vector<Shape> shapes;
  std::vector<std::uint8_t> payload;

  std::size_t bytes() const { return payload.size(); }
};

RoundMessage pack(std::uint64_t round, Phase phase, Direction direction, std::size_t node_id, MessageKind kind,
                  std::span<const Tensor> tensors);
// Gradients of the given tensors, zero where a tensor has none.
RoundMessage pack_grads(std::uint64_t round, Phase phase, Direction direction, std::size_t node_id, MessageKind kind,
                        std::span<const Tensor> tensors);
std::vector<Tensor> unpack(const RoundMessage& message, bool requires_grad = false);

// Audit trail of every message. Writes one JSON line per message to `sink`
// when given, and keeps full copies of coordinator-bound messages when
// capture is on.
class MessageLog {
 public:
  explicit MessageLog(std::ostream* sink = nullptr, bool capture = false) : sink_(sink), capture_(capture) {}
  void record(const RoundMessage& message);

  const std::vector<RoundMessage>& captured() const { return captured_; }
  std::size_t count() const { return count_; }
  void set_sink(std::ostream* sink) { sink_ = sink; }
  void set_capture(bool capture) { capture_ = capture; }

 private:
  std::ostream* sink_;
  bool capture_;
  std::size_t count_ = 0;
  std::vector<RoundMessage> captured_;
};

std::string message_json(const RoundMessage& message);

class TaskNode {
 public:
  TaskNode(std::size_t node_id, std::shared_ptr<const ModelConfig> config, TaskParams params, TaskSplits data,
           AdamConfig adam, std::uint64_t seed);

  std::size_t id() const { return id_; }
  const TaskParams& params() const { return params_; }
  void set_params(TaskParams params) { params_ = std::move(params); }
  const TaskSplits& data() const { return data_; }
  const TaskDataset& split(Phase phase, int which) const;
  bool online() const { return online_; }
  void set_online(bool online) { online_ = online; }

  // Round steps, in protocol order.
  void begin(std::uint64_t round, Phase phase, const TaskDataset& split, std::span<const std::size_t> positions,
             std::optional<RoundMessage> shared);
  std::optional<RoundMessage> send_hidden();
  // Runs the prediction half and the local loss. Returns messages for the
  // coordinator (attention gradient or shared gradients) in train phase.
  std::vector<RoundMessage> receive_attention(std::optional<RoundMessage> attention);
  void receive_hidden_grad(std::optional<RoundMessage> grad);
  void apply_update();

  double last_loss() const { return loss_; }
  const Tensor& last_predictions() const { return predictions_; }
  const Tensor& last_labels() const { return labels_; }
  const Tensor& last_sensor_attention() const { return encoded_.sensor_attention; }

 private:
  std::size_t id_;
  std::shared_ptr<const ModelConfig> config_;
  TaskParams params_;
  TaskSplits data_;
  Adam adam_;
  Rng rng_;
  bool online_ = true;

  // Per-round state.
  std::uint64_t round_ = 0;
  Phase phase_ = Phase::train;
  Tensor x_, labels_, predictions_, attention_;
  EncodeResult encoded_;
  SharedParams shared_;
  double loss_ = 0.0;
};

class Coordinator {
 public:
  Coordinator(std::shared_ptr<const ModelConfig> config, SharedParams params, AdamConfig adam);

  const SharedParams& params() const { return params_; }
  void set_params(SharedParams params) { params_ = std::move(params); }
  std::uint64_t round() const { return round_; }
  std::uint64_t next_round() { return ++round_; }

  // Shared weights for M-LSTM / MLP; nullopt for other variants.
  std::optional<RoundMessage> shared_params_for(std::size_t node_id, Phase phase) const;
  // Time attention from exactly K hidden-state messages of the current round.
  std::vector<RoundMessage> attend(std::span<const RoundMessage> hidden, Phase phase);
  // Sums attention gradients, backpropagates, returns per-node hidden gradients.
  std::vector<RoundMessage> receive_attention_grads(std::span<const RoundMessage> grads);
  void receive_shared_grads(std::span<const RoundMessage> grads);
  void apply_update();

  const Tensor& last_attention() const { return attention_; }

 private:
  std::shared_ptr<const ModelConfig> config_;
  SharedParams params_;
  Adam adam_;
  std::uint64_t round_ = 0;
  std::vector<Tensor> hidden_;
  Tensor attention_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainConfig {
  std::size_t batch = 60;
  AdamConfig adam;
  std::size_t patience = 20;
  std::size_t max_epochs = 100;
  std::uint64_t seed = 1;
  std::size_t workers = 0;  // 0 means one per node
  std::size_t eval_batch = 512;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct RoundResult {
  std::vector<double> losses;  // per task, each L_k (not divided by K)
};

struct EvalResult {
  std::vector<Tensor> predictions;  // per task, [N_k x M_k]
  std::vector<Tensor> labels;
  std::vector<double> losses;
  double mean_loss = 0.0;
  // Only when requested: [N_k x T x D_k] and [N_k x T].
  std::vector<std::vector<double>> sensor_attention;
  std::vector<std::vector<double>> time_attention;
};

struct TaskMetrics {
  std::size_t task_id = 0;
  TaskKind kind = TaskKind::classification;
  double loss = 0.0;
  std::optional<ClassificationReport> classification;
  std::optional<double> smape;
  double mae = 0.0;
};

struct TrainingReport {
  std::string variant;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::vector<EpochRecord> history;
  std::vector<TaskMetrics> tasks;
  // Means over tasks of the per-task (label-macro) metrics.
  std::optional<double> f1, precision, recall, balanced_accuracy, smape;
  double wall_time_seconds = 0.0;
  std::uint64_t messages = 0;
};

std::vector<TaskMetrics> task_metrics(const EvalResult& eval, const std::vector<TaskShape>& shapes);
void summarize(TrainingReport& report);

class Federation {
 public:
  // Every task needs non-empty train, val and test splits for fit; rounds
  // only need the split they draw from.
  Federation(ModelConfig config, std::vector<TaskSplits> data, const TrainConfig& train, ModelParams params);
  Federation(ModelConfig config, std::vector<TaskSplits> data, const TrainConfig& train);

  const ModelConfig& config() const { return *config_; }
  std::vector<TaskNode>& nodes() { return nodes_; }
  Coordinator& coordinator() { return coordinator_; }
  MessageLog& log() { return log_; }

  // One synchronous round on the training split. positions[j] selects
  // window positions[j] % N_k on node k. Throws StragglerError naming the
  // first node that cannot take part; nothing is updated in that case.
  RoundResult train_round(std::span<const std::size_t> positions);
  // Forward-only rounds over a whole split (0 train, 1 val, 2 test).
  EvalResult evaluate(int split, bool collect_attention = false);
  TrainingReport fit();

  ModelParams params() const;
  void set_params(const ModelParams& params);

 private:
  void check_round(int split, std::span<const std::size_t> positions) const;
  void run_nodes(const std::function<void(TaskNode&)>& fn);

  std::shared_ptr<const ModelConfig> config_;
  TrainConfig train_;
  std::vector<TaskNode> nodes_;
  Coordinator coordinator_;
  MessageLog log_;
};

// Reference trainer on the single-graph model: one Adam over all
// parameters, same per-task random streams as the federation.
class MonolithicTrainer {
 public:
  MonolithicTrainer(ModelConfig config, ModelParams params, AdamConfig adam, std::uint64_t seed);

  // Builds the averaged loss and backpropagates, leaving gradients in the
  // parameters. Returns per-task losses.
  std::vector<double> compute_gradients(std::span<const Tensor> inputs, std::span<const Tensor> labels);
  std::vector<double> step(std::span<const Tensor> inputs, std::span<const Tensor> labels);
  const ModelParams& params() const { return params_; }

 private:
  ModelConfig config_;
  ModelParams params_;
  Adam adam_;
  std::vector<Rng> rngs_;
};

// Seed of node k's dropout stream.
std::uint64_t node_stream_seed(std::uint64_t seed, std::size_t node_id);

std::string report_json(const TrainingReport& report, const std::string& config_echo_json = "");

}  // namespace fathom
