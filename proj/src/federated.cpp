#include "fathom/federated.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include "fathom/errors.hpp"
#include "json.hpp"

namespace fathom {

using ojson = nlohmann::ordered_json;

namespace {

bool uses_shared_layers(ModelVariant v) { return v == ModelVariant::m_lstm || v == ModelVariant::mlp_16_16; }

std::vector<Tensor> tensors_of(const std::vector<NamedParam>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

// Shared-parameter copies on a node, filled from the coordinator's message.
SharedParams shared_from(const ModelConfig& c, const RoundMessage& message) {
  SharedParams s = zero_params(c).shared;
  const auto dst = s.parameters();
  const auto src = unpack(message);
  if (dst.size() != src.size()) throw ContractError("shared parameter message has the wrong number of tensors");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].tensor.shape() != src[i].shape()) {
      throw DimensionError("shared parameter " + dst[i].name + ": expected " + dst[i].tensor.shape().to_string() +
                           ", received " + src[i].shape().to_string());
    }
    auto v = Tensor(dst[i].tensor).mutable_values();
    std::copy(src[i].values().begin(), src[i].values().end(), v.begin());
  }
  return s;
}

void check_round_tags(std::span<const RoundMessage> messages, std::size_t K, std::uint64_t round, MessageKind kind) {
  if (messages.size() != K) {
    throw ContractError("coordinator expected " + std::to_string(K) + " " + std::string(to_string(kind)) +
                        " messages, received " + std::to_string(messages.size()));
  }
  for (std::size_t k = 0; k < K; ++k) {
    const auto& m = messages[k];
    if (m.round != round || m.node_id != k || m.kind != kind || m.direction != Direction::to_coordinator) {
      throw ContractError("coordinator received an out-of-round or misrouted message from node " +
                          std::to_string(m.node_id));
    }
  }
}

Tensor rows_prefix(const Tensor& t, std::size_t rows) {
  if (rows >= t.dim(0)) return t;
  return slice(t, 0, 0, rows);
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.size() == 1) return parts.front();
  return concat(parts, 0);
}

ojson finite_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::to_coordinator ? "node_to_coordinator" : "coordinator_to_node"; }

std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::hidden_states: return "hidden_states";
    case MessageKind::time_attention: return "time_attention";
    case MessageKind::attention_grad: return "attention_grad";
    case MessageKind::hidden_grad: return "hidden_grad";
    case MessageKind::shared_params: return "shared_params";
    case MessageKind::shared_param_grads: return "shared_param_grads";
  }
  return "unknown";
}

std::uint64_t node_stream_seed(std::uint64_t seed, std::size_t node_id) { return derive_seed(seed, 4, node_id); }

// --- messages ----------------------------------------------------------------------

namespace {

RoundMessage pack_spans(std::uint64_t round, Phase phase, Direction direction, std::size_t node_id, MessageKind kind,
                        std::span<const Tensor> tensors, bool grads) {
  RoundMessage m;
  m.round = round;
  m.phase = phase;
  m.direction = direction;
  m.node_id = node_id;
  m.kind = kind;
  std::size_t total = 0;
  for (const auto& t : tensors) total += t.numel();
  m.payload.resize(total * sizeof(double));
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    m.shapes.push_back(t.shape());
    const std::size_t n = t.numel() * sizeof(double);
    if (!grads) {
      std::memcpy(m.payload.data() + offset, t.values().data(), n);
    } else if (t.has_grad()) {
      std::memcpy(m.payload.data() + offset, t.grad().data(), n);
    } else {
      std::memset(m.payload.data() + offset, 0, n);
    }
    offset += n;
  }
  return m;
}

}  // namespace

RoundMessage pack(std::uint64_t round, Phase phase, Direction direction, std::size_t node_id, MessageKind kind,
                  std::span<const Tensor> tensors) {
  return pack_spans(round, phase, direction, node_id, kind, tensors, false);
}

RoundMessage pack_grads(std::uint64_t round, Phase phase, Direction direction, std::size_t node_id, MessageKind kind,
                        std::span<const Tensor> tensors) {
  return pack_spans(round, phase, direction, node_id, kind, tensors, true);
}

std::vector<Tensor> unpack(const RoundMessage& m, bool requires_grad) {
  std::vector<Tensor> out;
  std::size_t offset = 0;
  for (const auto& shape : m.shapes) {
    std::vector<double> v(shape.numel());
    const std::size_t n = v.size() * sizeof(double);
    if (offset + n > m.payload.size()) throw ContractError("message payload shorter than its shapes");
    std::memcpy(v.data(), m.payload.data() + offset, n);
    offset += n;
    out.emplace_back(shape, std::move(v), requires_grad);
  }
  if (offset != m.payload.size()) throw ContractError("message payload longer than its shapes");
  return out;
}

std::string message_json(const RoundMessage& m) {
  ojson j;
  j["round"] = m.round;
  j["phase"] = m.phase == Phase::train ? "train" : "eval";
  j["direction"] = std::string(to_string(m.direction));
  j["node_id"] = m.node_id;
  j["kind"] = std::string(to_string(m.kind));
  ojson shapes = ojson::array();
  for (const auto& s : m.shapes) {
    ojson dims = ojson::array();
    for (std::size_t i = 0; i < s.rank(); ++i) dims.push_back(s[i]);
    shapes.push_back(dims);
  }
  j["shapes"] = shapes;
  j["bytes"] = m.bytes();
  return j.dump();
}

void MessageLog::record(const RoundMessage& m) {
  ++count_;
  if (sink_) *sink_ << message_json(m) << '\n';
  if (capture_ && m.direction == Direction::to_coordinator) captured_.push_back(m);
}

// --- task node ---------------------------------------------------------------------

TaskNode::TaskNode(std::size_t node_id, std::shared_ptr<const ModelConfig> config, TaskParams params, TaskSplits data,
                   AdamConfig adam, std::uint64_t seed)
    : id_(node_id),
      config_(std::move(config)),
      params_(std::move(params)),
      data_(std::move(data)),
      adam_(adam),
      rng_(node_stream_seed(seed, node_id)) {}

const TaskDataset& TaskNode::split(Phase, int which) const {
  switch (which) {
    case 0: return data_.train;
    case 1: return data_.val;
    case 2: return data_.test;
  }
  throw ContractError("unknown split " + std::to_string(which));
}

void TaskNode::begin(std::uint64_t round, Phase phase, const TaskDataset& split, std::span<const std::size_t> positions,
                     std::optional<RoundMessage> shared) {
  if (!online_) throw StragglerError(id_, "node is offline");
  const std::size_t N = split.size();
  if (N == 0) throw StragglerError(id_, "no windows in the requested split");
  round_ = round;
  phase_ = phase;
  std::vector<std::size_t> idx(positions.size());
  for (std::size_t j = 0; j < positions.size(); ++j) idx[j] = positions[j] % N;

  std::optional<NoGradGuard> guard;
  if (phase == Phase::eval) guard.emplace();
  x_ = split.batch_x(idx);
  labels_ = split.batch_y(idx);
  attention_ = Tensor();
  predictions_ = Tensor();
  shared_ = shared ? shared_from(*config_, *shared) : SharedParams{};
  if (phase == Phase::train) {
    for (auto& p : params_.parameters("")) p.tensor.zero_grad();
  }
  const Mode mode = phase == Phase::train ? Mode::train : Mode::eval;
  encoded_ = encode(*config_, id_, params_, shared_, x_, mode, phase == Phase::train ? &rng_ : nullptr);
}

std::optional<RoundMessage> TaskNode::send_hidden() {
  if (!has_central_attention(config_->variant)) return std::nullopt;
  const Tensor h[] = {encoded_.hidden};
  return pack(round_, phase_, Direction::to_coordinator, id_, MessageKind::hidden_states, h);
}

std::vector<RoundMessage> TaskNode::receive_attention(std::optional<RoundMessage> attention) {
  std::optional<NoGradGuard> guard;
  if (phase_ == Phase::eval) guard.emplace();
  const bool train = phase_ == Phase::train;
  if (has_central_attention(config_->variant)) {
    if (!attention || attention->round != round_ || attention->kind != MessageKind::time_attention) {
      throw ContractError("node " + std::to_string(id_) + ": missing time attention for round " +
                          std::to_string(round_));
    }
    attention_ = unpack(*attention, train).at(0);
  }
  const Mode mode = train ? Mode::train : Mode::eval;
  predictions_ = predict(*config_, id_, params_, shared_, x_, encoded_, attention_, mode, train ? &rng_ : nullptr);
  const Tensor loss = task_loss(config_->tasks[id_].kind, predictions_, labels_);
  loss_ = loss.item();

  std::vector<RoundMessage> out;
  if (!train) return out;
  backward(scale(loss, 1.0 / static_cast<double>(config_->task_count())));
  if (attention_.defined()) {
    const Tensor a[] = {attention_};
    out.push_back(pack_grads(round_, phase_, Direction::to_coordinator, id_, MessageKind::attention_grad, a));
  }
  if (!shared_.empty()) {
    const auto t = tensors_of(shared_.parameters());
    out.push_back(pack_grads(round_, phase_, Direction::to_coordinator, id_, MessageKind::shared_param_grads, t));
  }
  return out;
}

void TaskNode::receive_hidden_grad(std::optional<RoundMessage> grad) {
  if (!grad || phase_ != Phase::train) return;
  if (grad->round != round_ || grad->kind != MessageKind::hidden_grad) {
    throw ContractError("node " + std::to_string(id_) + ": unexpected message in round " + std::to_string(round_));
  }
  const auto g = unpack(*grad).at(0);
  if (g.shape() != encoded_.hidden.shape()) {
    throw DimensionError("node " + std::to_string(id_) + ": hidden gradient " + g.shape().to_string() +
                         " does not match hidden states " + encoded_.hidden.shape().to_string());
  }
  backward(encoded_.hidden, g.values());
}

void TaskNode::apply_update() { adam_.step(params_.parameters("")); }

// --- coordinator -------------------------------------------------------------------

Coordinator::Coordinator(std::shared_ptr<const ModelConfig> config, SharedParams params, AdamConfig adam)
    : config_(std::move(config)), params_(std::move(params)), adam_(adam) {}

std::optional<RoundMessage> Coordinator::shared_params_for(std::size_t node_id, Phase phase) const {
  if (!uses_shared_layers(config_->variant)) return std::nullopt;
  const auto t = tensors_of(params_.parameters());
  return pack(round_, phase, Direction::to_node, node_id, MessageKind::shared_params, t);
}

std::vector<RoundMessage> Coordinator::attend(std::span<const RoundMessage> hidden, Phase phase) {
  const std::size_t K = config_->task_count();
  check_round_tags(hidden, K, round_, MessageKind::hidden_states);
  std::optional<NoGradGuard> guard;
  if (phase == Phase::eval) guard.emplace();
  const bool train = phase == Phase::train;
  if (train) {
    for (auto& p : params_.parameters()) p.tensor.zero_grad();
  }
  hidden_.clear();
  for (const auto& m : hidden) hidden_.push_back(unpack(m, train).at(0));
  attention_ = time_attention(*params_.time_score, hidden_);
  std::vector<RoundMessage> out;
  const Tensor a[] = {attention_};
  for (std::size_t k = 0; k < K; ++k) {
    out.push_back(pack(round_, phase, Direction::to_node, k, MessageKind::time_attention, a));
  }
  return out;
}

std::vector<RoundMessage> Coordinator::receive_attention_grads(std::span<const RoundMessage> grads) {
  const std::size_t K = config_->task_count();
  check_round_tags(grads, K, round_, MessageKind::attention_grad);
  std::vector<double> seed(attention_.numel(), 0.0);
  for (const auto& m : grads) {
    const auto g = unpack(m).at(0);
    if (g.shape() != attention_.shape()) {
      throw DimensionError("attention gradient from node " + std::to_string(m.node_id) + " has shape " +
                           g.shape().to_string() + ", expected " + attention_.shape().to_string());
    }
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] += g.values()[i];
  }
  backward(attention_, seed);
  std::vector<RoundMessage> out;
  for (std::size_t k = 0; k < K; ++k) {
    const Tensor h[] = {hidden_[k]};
    out.push_back(pack_grads(round_, Phase::train, Direction::to_node, k, MessageKind::hidden_grad, h));
  }
  return out;
}

void Coordinator::receive_shared_grads(std::span<const RoundMessage> grads) {
  const std::size_t K = config_->task_count();
  check_round_tags(grads, K, round_, MessageKind::shared_param_grads);
  auto params = params_.parameters();
  for (auto& p : params) p.tensor.zero_grad();
  for (const auto& m : grads) {
    const auto g = unpack(m);
    if (g.size() != params.size()) throw ContractError("shared gradient message has the wrong number of tensors");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].tensor.mutable_grad();
      const auto src = g[i].values();
      if (src.size() != dst.size()) throw DimensionError("shared gradient for " + params[i].name + " has wrong size");
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
}

void Coordinator::apply_update() {
  const auto params = params_.parameters();
  if (!params.empty()) adam_.step(params);
}

// --- federation ----------------------------------------------------------------------

Federation::Federation(ModelConfig config, std::vector<TaskSplits> data, const TrainConfig& train, ModelParams params)
    : config_(std::make_shared<const ModelConfig>(std::move(config))),
      train_(train),
      coordinator_(config_, std::move(params.shared), train.adam) {
  config_->validate();
  const std::size_t K = config_->task_count();
  if (data.size() != K) {
    throw ConfigError("federation: " + std::to_string(K) + " tasks configured, " + std::to_string(data.size()) +
                      " datasets given");
  }
  if (params.tasks.size() != K) throw ContractError("federation: parameter count does not match the task count");
  if (train_.batch == 0) throw ConfigError("batch must be positive");
  for (std::size_t k = 0; k < K; ++k) {
    const auto& want = config_->tasks[k];
    for (const TaskDataset* d : {&data[k].train, &data[k].val, &data[k].test}) {
      if (d->size() == 0) continue;
      if (d->features() != want.features || d->labels() != want.labels || d->window != config_->window ||
          d->kind != want.kind) {
        throw DimensionError("task " + std::to_string(k) + ": data has T=" + std::to_string(d->window) +
                             " D=" + std::to_string(d->features()) + " M=" + std::to_string(d->labels()) +
                             ", model expects T=" + std::to_string(config_->window) + " D=" +
                             std::to_string(want.features) + " M=" + std::to_string(want.labels));
      }
    }
    nodes_.emplace_back(k, config_, std::move(params.tasks[k]), std::move(data[k]), train.adam, train.seed);
  }
}

Federation::Federation(ModelConfig config, std::vector<TaskSplits> data, const TrainConfig& train)
    : Federation(config, std::move(data), train, init_params(config, train.seed)) {}

void Federation::run_nodes(const std::function<void(TaskNode&)>& fn) {
  const std::size_t K = nodes_.size();
  const std::size_t W = std::min(train_.workers == 0 ? K : train_.workers, K);
  if (W <= 1) {
    for (auto& n : nodes_) fn(n);
    return;
  }
  std::vector<std::exception_ptr> errors(K);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < W; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t k = w; k < K; k += W) {
        try {
          fn(nodes_[k]);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void Federation::check_round(int split, std::span<const std::size_t> positions) const {
  if (positions.empty()) throw ContractError("round with an empty batch");
  for (const auto& n : nodes_) {
    if (!n.online()) throw StragglerError(n.id(), "node is offline");
    if (n.split(Phase::train, split).size() == 0) throw StragglerError(n.id(), "no windows in the requested split");
  }
}

RoundResult Federation::train_round(std::span<const std::size_t> positions) {
  check_round(0, positions);
  const std::size_t K = nodes_.size();
  const auto round = coordinator_.next_round();
  const bool central = has_central_attention(config_->variant);

  std::vector<std::optional<RoundMessage>> shared(K);
  for (std::size_t k = 0; k < K; ++k) {
    shared[k] = coordinator_.shared_params_for(k, Phase::train);
    if (shared[k]) log_.record(*shared[k]);
  }
  run_nodes([&](TaskNode& n) { n.begin(round, Phase::train, n.data().train, positions, shared[n.id()]); });

  std::vector<RoundMessage> attention;
  if (central) {
    std::vector<RoundMessage> hidden(K);
    run_nodes([&](TaskNode& n) { hidden[n.id()] = *n.send_hidden(); });
    for (const auto& m : hidden) log_.record(m);
    attention = coordinator_.attend(hidden, Phase::train);
    for (const auto& m : attention) log_.record(m);
  }

  std::vector<std::vector<RoundMessage>> replies(K);
  run_nodes([&](TaskNode& n) {
    replies[n.id()] = n.receive_attention(central ? std::optional<RoundMessage>(attention[n.id()]) : std::nullopt);
  });
  std::vector<RoundMessage> attention_grads, shared_grads;
  for (auto& r : replies) {
    for (auto& m : r) {
      log_.record(m);
      (m.kind == MessageKind::attention_grad ? attention_grads : shared_grads).push_back(std::move(m));
    }
  }
  if (central) {
    const auto hidden_grads = coordinator_.receive_attention_grads(attention_grads);
    for (const auto& m : hidden_grads) log_.record(m);
    run_nodes([&](TaskNode& n) { n.receive_hidden_grad(hidden_grads[n.id()]); });
  }
  if (uses_shared_layers(config_->variant)) coordinator_.receive_shared_grads(shared_grads);

  run_nodes([](TaskNode& n) { n.apply_update(); });
  coordinator_.apply_update();

  RoundResult result;
  for (const auto& n : nodes_) result.losses.push_back(n.last_loss());
  return result;
}

EvalResult Federation::evaluate(int split, bool collect_attention) {
  const std::size_t K = nodes_.size();
  const bool central = has_central_attention(config_->variant);
  std::size_t N_max = 0;
  for (const auto& n : nodes_) {
    if (n.split(Phase::eval, split).size() == 0) throw StragglerError(n.id(), "no windows in the requested split");
    N_max = std::max(N_max, n.split(Phase::eval, split).size());
  }
  std::vector<std::vector<Tensor>> preds(K), labels(K);
  EvalResult out;
  if (collect_attention) {
    out.sensor_attention.resize(K);
    out.time_attention.resize(K);
  }
  const std::size_t chunk = std::max<std::size_t>(1, train_.eval_batch);
  for (std::size_t start = 0; start < N_max; start += chunk) {
    std::vector<std::size_t> positions(std::min(chunk, N_max - start));
    std::iota(positions.begin(), positions.end(), start);
    check_round(split, positions);
    const auto round = coordinator_.next_round();
    std::vector<std::optional<RoundMessage>> shared(K);
    for (std::size_t k = 0; k < K; ++k) {
      shared[k] = coordinator_.shared_params_for(k, Phase::eval);
      if (shared[k]) log_.record(*shared[k]);
    }
    run_nodes([&](TaskNode& n) { n.begin(round, Phase::eval, n.split(Phase::eval, split), positions, shared[n.id()]); });
    std::vector<RoundMessage> attention;
    if (central) {
      std::vector<RoundMessage> hidden(K);
      run_nodes([&](TaskNode& n) { hidden[n.id()] = *n.send_hidden(); });
      for (const auto& m : hidden) log_.record(m);
      attention = coordinator_.attend(hidden, Phase::eval);
      for (const auto& m : attention) log_.record(m);
    }
    run_nodes([&](TaskNode& n) {
      n.receive_attention(central ? std::optional<RoundMessage>(attention[n.id()]) : std::nullopt);
    });
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t N = nodes_[k].split(Phase::eval, split).size();
      if (start >= N) continue;
      const std::size_t keep = std::min(positions.size(), N - start);
      preds[k].push_back(rows_prefix(nodes_[k].last_predictions(), keep));
      labels[k].push_back(rows_prefix(nodes_[k].last_labels(), keep));
      if (collect_attention) {
        const auto& s = nodes_[k].last_sensor_attention();
        if (s.defined()) {
          const std::size_t step = s.numel() / s.dim(0);
          out.sensor_attention[k].insert(out.sensor_attention[k].end(), s.values().begin(),
                                         s.values().begin() + static_cast<long>(keep * step));
        }
        if (central) {
          const auto& a = coordinator_.last_attention();
          const std::size_t step = a.numel() / a.dim(0);
          out.time_attention[k].insert(out.time_attention[k].end(), a.values().begin(),
                                       a.values().begin() + static_cast<long>(keep * step));
        }
      }
    }
  }
  NoGradGuard guard;
  for (std::size_t k = 0; k < K; ++k) {
    out.predictions.push_back(concat_rows(preds[k]));
    out.labels.push_back(concat_rows(labels[k]));
    out.losses.push_back(task_loss(config_->tasks[k].kind, out.predictions[k], out.labels[k]).item());
  }
  out.mean_loss = std::accumulate(out.losses.begin(), out.losses.end(), 0.0) / static_cast<double>(K);
  return out;
}

ModelParams Federation::params() const {
  ModelParams p;
  for (const auto& n : nodes_) p.tasks.push_back(n.params().clone());
  p.shared = coordinator_.params().clone();
  return p;
}

void Federation::set_params(const ModelParams& params) {
  if (params.tasks.size() != nodes_.size()) throw ContractError("set_params: task count mismatch");
  for (std::size_t k = 0; k < nodes_.size(); ++k) nodes_[k].set_params(params.tasks[k].clone());
  coordinator_.set_params(params.shared.clone());
}

TrainingReport Federation::fit() {
  const auto started = std::chrono::steady_clock::now();
  const std::size_t K = nodes_.size();
  static const char* names[] = {"train", "val", "test"};
  for (const auto& n : nodes_) {
    for (int s = 0; s < 3; ++s) {
      if (n.split(Phase::train, s).size() == 0) {
        throw ConfigError("task " + std::to_string(n.id()) + ": empty " + names[s] + " split");
      }
    }
  }
  std::size_t N_max = 0;
  for (const auto& n : nodes_) N_max = std::max(N_max, n.data().train.size());

  TrainingReport report;
  report.variant = std::string(to_string(config_->variant));
  Rng order_rng(derive_seed(train_.seed, 5, 0));
  std::vector<std::size_t> order(N_max);
  double best = std::numeric_limits<double>::infinity();
  ModelParams best_params = params();
  std::size_t wait = 0;

  for (std::size_t epoch = 1; epoch <= train_.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < N_max; start += train_.batch) {
      const std::size_t len = std::min(train_.batch, N_max - start);
      const auto r = train_round(std::span<const std::size_t>(order).subspan(start, len));
      train_total += std::accumulate(r.losses.begin(), r.losses.end(), 0.0) / static_cast<double>(K) *
                     static_cast<double>(len);
    }
    const double val = evaluate(1).mean_loss;
    EpochRecord rec{epoch, train_total / static_cast<double>(N_max), val};
    report.history.push_back(rec);
    report.epochs_run = epoch;
    if (train_.on_epoch) train_.on_epoch(rec);
    if (std::isfinite(val) && val < best) {
      best = val;
      report.best_epoch = epoch;
      best_params = params();
      wait = 0;
    } else if (++wait >= train_.patience) {
      report.stopped_early = true;
      break;
    }
  }
  set_params(best_params);
  report.best_val_loss = best;
  std::vector<TaskShape> shapes = config_->tasks;
  report.tasks = task_metrics(evaluate(2), shapes);
  summarize(report);
  report.messages = log_.count();
  report.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::vector<TaskMetrics> task_metrics(const EvalResult& eval, const std::vector<TaskShape>& shapes) {
  std::vector<TaskMetrics> out;
  for (std::size_t k = 0; k < eval.predictions.size(); ++k) {
    TaskMetrics m;
    m.task_id = k;
    m.kind = shapes.at(k).kind;
    m.loss = eval.losses.at(k);
    if (m.kind == TaskKind::classification) {
      m.classification = classification_metrics(eval.predictions[k], eval.labels[k]);
    } else {
      m.smape = smape(eval.predictions[k], eval.labels[k]);
    }
    const auto p = eval.predictions[k].values();
    const auto y = eval.labels[k].values();
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - y[i]);
    m.mae = total / static_cast<double>(p.size());
    out.push_back(std::move(m));
  }
  return out;
}

void summarize(TrainingReport& r) {
  double f1 = 0, precision = 0, recall = 0, ba = 0, sm = 0;
  std::size_t nc = 0, nr = 0;
  for (const auto& t : r.tasks) {
    if (t.classification) {
      f1 += t.classification->f1;
      precision += t.classification->precision;
      recall += t.classification->recall;
      ba += t.classification->balanced_accuracy;
      ++nc;
    }
    if (t.smape) {
      sm += *t.smape;
      ++nr;
    }
  }
  if (nc > 0) {
    const double inv = 1.0 / static_cast<double>(nc);
    r.f1 = f1 * inv;
    r.precision = precision * inv;
    r.recall = recall * inv;
    r.balanced_accuracy = ba * inv;
  }
  if (nr > 0) r.smape = sm / static_cast<double>(nr);
}

std::string report_json(const TrainingReport& r, const std::string& config_echo_json) {
  ojson j;
  if (!config_echo_json.empty()) j["config"] = ojson::parse(config_echo_json);
  j["variant"] = r.variant;
  j["epochs_run"] = r.epochs_run;
  j["best_epoch"] = r.best_epoch;
  j["best_val_loss"] = finite_or_null(r.best_val_loss);
  j["stopped_early"] = r.stopped_early;
  ojson history = ojson::array();
  for (const auto& e : r.history) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", finite_or_null(e.train_loss)},
                       {"val_loss", finite_or_null(e.val_loss)}});
  }
  j["history"] = history;
  ojson tasks = ojson::array();
  for (const auto& t : r.tasks) {
    ojson jt;
    jt["task_id"] = t.task_id;
    jt["kind"] = std::string(to_string(t.kind));
    jt["test_loss"] = finite_or_null(t.loss);
    jt["mae"] = finite_or_null(t.mae);
    if (t.classification) {
      const auto& c = *t.classification;
      jt["f1"] = c.f1;
      jt["precision"] = c.precision;
      jt["recall"] = c.recall;
      jt["balanced_accuracy"] = c.balanced_accuracy;
      ojson labels = ojson::array();
      for (const auto& l : c.per_label) {
        labels.push_back({{"f1", l.f1},
                          {"precision", l.precision},
                          {"recall", l.recall},
                          {"balanced_accuracy", l.balanced_accuracy},
                          {"tp", l.counts.tp},
                          {"fp", l.counts.fp},
                          {"tn", l.counts.tn},
                          {"fn", l.counts.fn}});
      }
      jt["labels"] = labels;
    }
    if (t.smape) jt["smape"] = *t.smape;
    tasks.push_back(jt);
  }
  j["tasks"] = tasks;
  ojson macro;
  if (r.f1) {
    macro["f1"] = *r.f1;
    macro["precision"] = *r.precision;
    macro["recall"] = *r.recall;
    macro["balanced_accuracy"] = *r.balanced_accuracy;
  }
  if (r.smape) macro["smape"] = *r.smape;
  j["macro"] = macro;
  j["messages"] = r.messages;
  j["wall_time_seconds"] = r.wall_time_seconds;
  return j.dump(2) + "\n";
}

// --- monolithic reference --------------------------------------------------------------

MonolithicTrainer::MonolithicTrainer(ModelConfig config, ModelParams params, AdamConfig adam, std::uint64_t seed)
    : config_(std::move(config)), params_(std::move(params)), adam_(adam) {
  for (std::size_t k = 0; k < config_.task_count(); ++k) rngs_.emplace_back(node_stream_seed(seed, k));
}

std::vector<double> MonolithicTrainer::compute_gradients(std::span<const Tensor> inputs, std::span<const Tensor> labels) {
  for (auto& p : params_.parameters()) p.tensor.zero_grad();
  const auto out = forward(config_, params_, inputs, Mode::train, rngs_);
  const double inv = 1.0 / static_cast<double>(config_.task_count());
  std::vector<double> losses;
  Tensor total;
  for (std::size_t k = 0; k < config_.task_count(); ++k) {
    const Tensor l = task_loss(config_.tasks[k].kind, out.predictions[k], labels[k]);
    losses.push_back(l.item());
    const Tensor part = scale(l, inv);
    total = total.defined() ? add(total, part) : part;
  }
  backward(total);
  return losses;
}

std::vector<double> MonolithicTrainer::step(std::span<const Tensor> inputs, std::span<const Tensor> labels) {
  auto losses = compute_gradients(inputs, labels);
  adam_.step(params_.parameters());
  return losses;
}

}  // namespace fathom
