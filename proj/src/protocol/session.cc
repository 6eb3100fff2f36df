// Copyright 2026 The SAP Fine-Tuning Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sap/protocol/session.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <map>
#include <numeric>
#include <thread>

#include "sap/errors.h"
#include "sap/model/forward.h"
#include "sap/numerics/graph.h"
#include "sap/numerics/random.h"

namespace sap::protocol {

using model::BottomModel;
using model::PLM;
using model::TokenBatch;
using model::TopModel;
using numerics::Graph;

void SessionConfig::validate() const {
  if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("batch sizes must be positive");
  privacy.validate();
  for (const auto* o : {&top_optimizer, &bottom_optimizer}) {
    if (!(o->lr >= 0) || !(o->eps > 0)) throw ConfigError("optimizer lr must be >= 0 and eps > 0");
  }
}

SessionId SessionConfig::session_id() const {
  SessionId id{};
  const std::uint64_t a = numerics::derive_seed(lora_seed, {0x73657373, shuffle_seed, privacy.seed});
  const std::uint64_t b = numerics::derive_seed(a, {split, bottom_trainable, epochs, batch_size});
  std::memcpy(id.data(), &a, 8);
  std::memcpy(id.data() + 8, &b, 8);
  return id;
}

void to_json(nlohmann::json& j, const SessionConfig& c) {
  j = {{"split", c.split},
       {"bottom_trainable", c.bottom_trainable},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"eval_batch_size", c.eval_batch_size},
       {"privacy", c.privacy},
       {"top_optimizer", c.top_optimizer},
       {"bottom_optimizer", c.bottom_optimizer},
       {"linear_schedule", c.linear_schedule},
       {"lora_seed", c.lora_seed},
       {"shuffle_seed", c.shuffle_seed}};
}

void from_json(const nlohmann::json& j, SessionConfig& c) {
  SessionConfig d;
  c.split = j.value("split", d.split);
  c.bottom_trainable = j.value("bottom_trainable", d.bottom_trainable);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.eval_batch_size = j.value("eval_batch_size", d.eval_batch_size);
  c.privacy = j.contains("privacy") ? j["privacy"].get<privatizer::PrivacyConfig>() : d.privacy;
  c.top_optimizer = j.contains("top_optimizer") ? j["top_optimizer"].get<model::AdamWConfig>() : d.top_optimizer;
  c.bottom_optimizer =
      j.contains("bottom_optimizer") ? j["bottom_optimizer"].get<model::AdamWConfig>() : d.bottom_optimizer;
  c.linear_schedule = j.value("linear_schedule", d.linear_schedule);
  c.lora_seed = j.value("lora_seed", d.lora_seed);
  c.shuffle_seed = j.value("shuffle_seed", d.shuffle_seed);
  c.validate();
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

std::vector<std::size_t> epoch_order(std::uint64_t shuffle_seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  numerics::Rng rng = numerics::make_rng(shuffle_seed, {0x65706f6368, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// ------------------------------------------------------------------ channel

Channel::Channel(Transport& transport, Party self, SessionId session, Transcript* log)
    : transport_(transport), self_(self), session_(session), log_(log) {}

void Channel::send(Message msg) {
  msg.session = session_;
  msg.seq = next_send_++;
  check_outgoing(msg, self_);
  auto frame = encode_message(msg);
  if (log_) log_->record(self_, frame);
  transport_.send(frame);
}

Message Channel::receive() {
  auto frame = transport_.receive();
  Message m = decode_message(frame);
  if (m.session != session_) throw ProtocolError("message from a foreign session");
  if (m.seq != next_receive_) {
    throw ProtocolError("out-of-order message: expected seq " + std::to_string(next_receive_) + ", got " +
                        std::to_string(m.seq));
  }
  ++next_receive_;
  if (log_) log_->record(self_ == Party::kVendor ? Party::kCustomer : Party::kVendor, frame);
  return m;
}

Message Channel::expect(MessageType type) {
  Message m = receive();
  if (m.type != type) {
    throw ProtocolError("expected " + message_type_name(type) + ", got " + message_type_name(m.type));
  }
  return m;
}

namespace {

nlohmann::json step_meta(std::size_t epoch, std::size_t batch) {
  return {{"epoch", epoch}, {"batch", batch}};
}

void check_step(const Message& m, std::size_t epoch, std::size_t batch) {
  if (m.meta.value("epoch", SIZE_MAX) != epoch || m.meta.value("batch", SIZE_MAX) != batch) {
    throw ProtocolError(message_type_name(m.type) + " for the wrong step");
  }
}

void check_shape(const Tensor& t, const numerics::Shape& want, const std::string& what) {
  if (t.shape() != want) {
    throw ProtocolError(what + " has shape " + numerics::shape_string(t.shape()) + ", expected " +
                        numerics::shape_string(want));
  }
}

double step_lr(const SessionConfig& c, const model::AdamWConfig& opt, std::uint64_t step, std::uint64_t total) {
  return c.linear_schedule ? model::linear_lr(step, total, opt.lr) : opt.lr;
}

Tensor gather_rows(const Tensor& full, std::span<const std::size_t> rows) {
  const std::size_t n = full.dim(1), d = full.dim(2), stride = n * d;
  Tensor out({rows.size(), n, d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(full.data().begin() + static_cast<long>(rows[i] * stride), stride,
                out.data().begin() + static_cast<long>(i * stride));
  }
  return out;
}

std::vector<std::uint8_t> gather_mask(std::span<const std::uint8_t> mask, std::size_t n,
                                      std::span<const std::size_t> rows) {
  std::vector<std::uint8_t> out;
  out.reserve(rows.size() * n);
  for (std::size_t r : rows) out.insert(out.end(), mask.begin() + long(r * n), mask.begin() + long((r + 1) * n));
  return out;
}

TopModel prepare_top(const SessionConfig& config, const PLM& plm, BottomModel* bottom_out) {
  auto [bottom, top] = model::split_model(plm, config.split);
  model::attach_lora(top, config.lora_seed);
  model::set_trainable(top);
  if (bottom_out) *bottom_out = std::move(bottom);
  return std::move(top);
}

}  // namespace

// ------------------------------------------------------------------ vendor

VendorResult run_vendor(const SessionConfig& config, const PLM& plm, Channel& channel) {
  config.validate();
  BottomModel bottom;
  TopModel top = prepare_top(config, plm, &bottom);
  const std::size_t n = plm.config.max_seq_len, d = plm.config.embed_dim, C = plm.config.num_classes;

  {
    Message m;
    m.type = MessageType::kBottomModel;
    nlohmann::json names = nlohmann::json::array();
    for (const auto& p : model::parameters(std::as_const(bottom))) {
      names.push_back(p.name);
      m.tensors.push_back(*p.tensor);
    }
    m.meta = {{"config", plm.config}, {"split", config.split}, {"names", names}};
    channel.send(std::move(m));
  }

  const auto trainables = model::top_trainables(top);
  model::AdamWState state;
  VendorResult result;

  auto train_step = [&](const Tensor& reps, const std::vector<std::uint8_t>& mask,
                        const std::vector<std::uint64_t>& ids, std::size_t epoch, std::size_t batch,
                        std::uint64_t total_steps) {
    Graph g;
    auto x = config.bottom_trainable ? g.variable(reps) : g.constant(reps);
    auto logits = model::forward_top(g, top, x, mask);
    Message out;
    out.type = MessageType::kOutputBatch;
    out.tensors.push_back(g.value(logits));
    out.ids = ids;
    out.meta = step_meta(epoch, batch);
    channel.send(std::move(out));

    Message grad = channel.expect(MessageType::kOutputGrad);
    check_step(grad, epoch, batch);
    check_shape(grad.tensors.at(0), {ids.size(), C}, "OUTPUT_GRAD");
    g.backward(logits, grad.tensors[0]);
    if (config.bottom_trainable) {
      Message ig;
      ig.type = MessageType::kInputGrad;
      ig.tensors.push_back(g.grad(x));
      ig.meta = step_meta(epoch, batch);
      channel.send(std::move(ig));
    }
    model::adamw_step(trainables, state, step_lr(config, config.top_optimizer, result.steps, total_steps),
                      config.top_optimizer);
    model::zero_grads(trainables);
    ++result.steps;
  };

  if (config.epochs > 0 && !config.bottom_trainable) {
    Message full = channel.expect(MessageType::kRepBatchFull);
    if (full.tensors.size() != 1) throw ProtocolError("REP_BATCH_FULL must carry one tensor");
    const Tensor& reps = full.tensors[0];
    const std::size_t N = full.ids.size();
    check_shape(reps, {N, n, d}, "REP_BATCH_FULL");
    const std::size_t per_epoch = batches_per_epoch(N, config.batch_size);
    const std::uint64_t total = per_epoch * config.epochs;
    for (std::size_t e = 0; e < config.epochs; ++e) {
      const auto order = epoch_order(config.shuffle_seed, e, N);
      for (std::size_t k = 0; k < per_epoch; ++k) {
        const std::size_t lo = k * config.batch_size, hi = std::min(N, lo + config.batch_size);
        std::span<const std::size_t> rows(order.data() + lo, hi - lo);
        std::vector<std::uint64_t> ids;
        for (std::size_t r : rows) ids.push_back(full.ids[r]);
        train_step(gather_rows(reps, rows), gather_mask(full.mask, n, rows), ids, e, k, total);
      }
    }
  } else if (config.epochs > 0) {
    std::optional<std::uint64_t> total;
    for (std::size_t e = 0; e < config.epochs; ++e) {
      for (std::size_t k = 0;; ++k) {
        Message rb = channel.receive();
        if (rb.type != MessageType::kRepBatch) throw ProtocolError("expected REP_BATCH, got " + message_type_name(rb.type));
        check_step(rb, e, k);
        const std::size_t b = rb.ids.size();
        check_shape(rb.tensors.at(0), {b, n, d}, "REP_BATCH");
        const std::uint64_t per_epoch = rb.meta.value("batches", std::uint64_t{0});
        if (per_epoch == 0) throw ProtocolError("REP_BATCH lacks the batch count");
        if (!total) total = per_epoch * config.epochs;
        train_step(rb.tensors[0], rb.mask, rb.ids, e, k, *total);
        if (k + 1 == per_epoch) break;
      }
    }
  }

  for (;;) {
    Message m = channel.receive();
    if (m.type == MessageType::kDone) break;
    if (m.type != MessageType::kEvalRequest) {
      throw ProtocolError("expected EVAL_REQUEST or DONE, got " + message_type_name(m.type));
    }
    const std::size_t b = m.ids.size();
    check_shape(m.tensors.at(0), {b, n, d}, "EVAL_REQUEST");
    Message out;
    out.type = MessageType::kEvalResponse;
    out.tensors.push_back(model::top_logits(top, m.tensors[0], m.mask));
    out.ids = m.ids;
    out.meta = {{"request", m.meta.value("request", std::uint64_t{0})}};
    channel.send(std::move(out));
    ++result.eval_requests;
  }
  result.model = model::merge_model(bottom, top);
  return result;
}

// ------------------------------------------------------------------ customer

namespace {

BottomModel receive_bottom(Channel& channel) {
  Message m = channel.expect(MessageType::kBottomModel);
  model::PLMConfig config = m.meta.at("config").get<model::PLMConfig>();
  const std::size_t split = m.meta.at("split").get<std::size_t>();
  BottomModel bottom = model::split_model(model::build_plm(config), split).first;
  auto params = model::parameters(bottom);
  const auto& names = m.meta.at("names");
  if (names.size() != params.size() || m.tensors.size() != params.size()) {
    throw ProtocolError("BOTTOM_MODEL carries " + std::to_string(m.tensors.size()) + " tensors, expected " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (names[i].get<std::string>() != params[i].name) throw ProtocolError("BOTTOM_MODEL tensor order mismatch");
    check_shape(m.tensors[i], params[i].tensor->shape(), params[i].name);
    *params[i].tensor = std::move(m.tensors[i]);
  }
  return bottom;
}

class CustomerPrivatizer {
 public:
  CustomerPrivatizer(const SessionConfig& config, CustomerState& state, bool record)
      : config_(config), state_(state), record_(record) {}

  // Remapped copy of `ids`; identity without privatization.
  std::vector<std::int32_t> apply(const std::vector<std::int32_t>& ids, std::uint64_t pass,
                                  std::uint64_t sample_id, const privatizer::EmbeddingSearch* search) {
    std::vector<std::int32_t> out = ids;
    if (config_.privacy.enabled()) {
      numerics::Rng rng = privatizer::sample_stream(config_.privacy, pass, sample_id);
      auto p = privatizer::privatize_sequence(ids, state_.bottom.token_embedding, config_.privacy,
                                              state_.contributing ? &*state_.contributing : nullptr, rng,
                                              *search);
      state_.perturbed += p.perturbed;
      state_.replaced += p.replaced;
      out = std::move(p.ids);
    }
    if (record_) state_.privatized.push_back({pass, sample_id, out});
    return out;
  }

  std::optional<privatizer::EmbeddingSearch> search() const {
    if (!config_.privacy.enabled()) return std::nullopt;
    return privatizer::EmbeddingSearch(state_.bottom.token_embedding, privatizer::structural_ids());
  }

 private:
  const SessionConfig& config_;
  CustomerState& state_;
  bool record_;
};

TokenBatch make_batch(const std::vector<std::vector<std::int32_t>>& rows) {
  return TokenBatch::from_sequences(rows);
}

}  // namespace

CustomerState run_customer(const SessionConfig& config, Channel& channel, const data::Corpus& train,
                           bool record_privatized) {
  config.validate();
  CustomerState state;
  state.bottom = receive_bottom(channel);
  const std::size_t n = state.bottom.config.max_seq_len, C = state.bottom.config.num_classes;
  if (train.max_seq_len != n) throw ConfigError("corpus sequence length differs from the model's");
  if (train.num_classes > C) throw ConfigError("corpus has more classes than the model head");
  if (config.epochs == 0) return state;
  if (train.samples.empty()) throw DataError("training corpus is empty");

  if (config.privacy.cti_enabled) {
    auto stats = privatizer::token_class_stats(train, config.privacy.smoothing);
    auto ui = privatizer::utility_importance(stats);
    state.contributing = privatizer::select_contributing(ui, stats, config.privacy.cti_budget,
                                                         config.privacy.budget_unit);
  }
  CustomerPrivatizer privatize(config, state, record_privatized);
  std::map<std::uint64_t, std::int32_t> label_of;
  for (const auto& s : train.samples) {
    if (!label_of.emplace(s.id, s.label).second) throw DataError("duplicate sample id " + std::to_string(s.id));
  }
  auto exchange_outputs = [&](std::size_t epoch, std::size_t batch) {
    Message out = channel.expect(MessageType::kOutputBatch);
    check_step(out, epoch, batch);
    std::vector<std::int32_t> labels;
    for (std::uint64_t id : out.ids) {
      auto it = label_of.find(id);
      if (it == label_of.end()) throw ProtocolError("OUTPUT_BATCH names unknown sample " + std::to_string(id));
      labels.push_back(it->second);
    }
    check_shape(out.tensors.at(0), {labels.size(), C}, "OUTPUT_BATCH");
    auto lg = numerics::cross_entropy_with_grad(out.tensors[0], labels);
    state.losses.push_back(lg.loss);
    Message grad;
    grad.type = MessageType::kOutputGrad;
    grad.tensors.push_back(std::move(lg.grad));
    grad.meta = step_meta(epoch, batch);
    channel.send(std::move(grad));
  };

  const std::size_t N = train.samples.size();
  const std::size_t per_epoch = batches_per_epoch(N, config.batch_size);

  if (!config.bottom_trainable) {
    auto search = privatize.search();
    Message full;
    full.type = MessageType::kRepBatchFull;
    full.tensors.emplace_back(numerics::Shape{N, n, state.bottom.config.embed_dim});
    const std::size_t stride = n * state.bottom.config.embed_dim;
    for (std::size_t lo = 0; lo < N; lo += config.eval_batch_size) {
      const std::size_t hi = std::min(N, lo + config.eval_batch_size);
      std::vector<std::vector<std::int32_t>> rows;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& s = train.samples[i];
        rows.push_back(privatize.apply(s.ids, 0, s.id, search ? &*search : nullptr));
      }
      TokenBatch batch = make_batch(rows);
      Tensor reps = model::bottom_representations(state.bottom, batch);
      std::copy(reps.data().begin(), reps.data().end(), full.tensors[0].data().begin() + long(lo * stride));
      full.mask.insert(full.mask.end(), batch.mask.begin(), batch.mask.end());
      for (std::size_t i = lo; i < hi; ++i) full.ids.push_back(train.samples[i].id);
    }
    full.meta = {{"pass", std::uint64_t{0}}};
    channel.send(std::move(full));
    for (std::size_t e = 0; e < config.epochs; ++e) {
      for (std::size_t k = 0; k < per_epoch; ++k) exchange_outputs(e, k);
    }
    return state;
  }

  state.bottom.frozen = false;
  model::set_trainable(state.bottom);
  const auto trainables = model::bottom_trainables(state.bottom);
  model::AdamWState opt;
  const std::uint64_t total = per_epoch * config.epochs;
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto order = epoch_order(config.shuffle_seed, e, N);
    for (std::size_t k = 0; k < per_epoch; ++k) {
      auto search = privatize.search();  // the table moves as the bottom trains
      const std::size_t lo = k * config.batch_size, hi = std::min(N, lo + config.batch_size);
      std::vector<std::vector<std::int32_t>> rows;
      std::vector<std::int32_t> original;
      Message rb;
      rb.type = MessageType::kRepBatch;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& s = train.samples[order[i]];
        rows.push_back(privatize.apply(s.ids, e, s.id, search ? &*search : nullptr));
        original.insert(original.end(), s.ids.begin(), s.ids.end());
        rb.ids.push_back(s.id);
      }
      TokenBatch batch = make_batch(rows);
      Graph g;
      auto reps = model::forward_bottom(g, state.bottom, batch, original);
      rb.tensors.push_back(g.value(reps));
      rb.mask = batch.mask;
      // The batch count lets the vendor follow the lr schedule.
      rb.meta = {{"epoch", e}, {"batch", k}, {"batches", per_epoch}};
      channel.send(std::move(rb));
      exchange_outputs(e, k);
      Message ig = channel.expect(MessageType::kInputGrad);
      check_step(ig, e, k);
      check_shape(ig.tensors.at(0), g.value(reps).shape(), "INPUT_GRAD");
      g.backward(reps, ig.tensors[0]);
      model::adamw_step(trainables, opt, step_lr(config, config.bottom_optimizer, step, total),
                        config.bottom_optimizer);
      model::zero_grads(trainables);
      ++step;
    }
  }
  return state;
}

std::vector<std::int32_t> run_inference(const SessionConfig& config, Channel& channel, CustomerState& state,
                                        std::span<const std::vector<std::int32_t>> sequences,
                                        std::span<const std::uint64_t> sample_ids, bool record_privatized) {
  if (sequences.size() != sample_ids.size()) throw DimensionError("one sample id per sequence required");
  CustomerPrivatizer privatize(config, state, record_privatized);
  auto search = privatize.search();
  std::vector<std::int32_t> predictions;
  for (std::size_t lo = 0, request = 0; lo < sequences.size(); lo += config.eval_batch_size, ++request) {
    const std::size_t hi = std::min(sequences.size(), lo + config.eval_batch_size);
    std::vector<std::vector<std::int32_t>> rows;
    Message req;
    req.type = MessageType::kEvalRequest;
    for (std::size_t i = lo; i < hi; ++i) {
      rows.push_back(privatize.apply(sequences[i], kInferencePass, sample_ids[i], search ? &*search : nullptr));
      req.ids.push_back(sample_ids[i]);
    }
    TokenBatch batch = make_batch(rows);
    model::validate_batch(state.bottom.config, batch);
    req.tensors.push_back(model::bottom_representations(state.bottom, batch));
    req.mask = batch.mask;
    req.meta = {{"request", request}};
    channel.send(std::move(req));
    Message resp = channel.expect(MessageType::kEvalResponse);
    if (resp.ids != std::vector<std::uint64_t>(sample_ids.begin() + long(lo), sample_ids.begin() + long(hi))) {
      throw ProtocolError("EVAL_RESPONSE for the wrong samples");
    }
    check_shape(resp.tensors.at(0), {hi - lo, state.bottom.config.num_classes}, "EVAL_RESPONSE");
    auto p = model::argmax_rows(resp.tensors[0]);
    predictions.insert(predictions.end(), p.begin(), p.end());
  }
  return predictions;
}

void finish(Channel& channel) {
  Message m;
  m.type = MessageType::kDone;
  channel.send(std::move(m));
}

double accuracy(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("one prediction per label required");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return double(hit) / double(labels.size());
}

// ------------------------------------------------------------------ sessions

SessionOutcome run_session(const SessionConfig& config, const PLM& plm, const data::Corpus& train,
                           const data::Corpus& eval, TransportKind transport, Transcript::Options log_options,
                           bool record_privatized) {
  config.validate();
  auto [vendor_end, customer_end] = make_transport_pair(transport);
  SessionOutcome out;
  out.vendor_log = Transcript(std::move(log_options));
  const SessionId sid = config.session_id();
  std::exception_ptr vendor_error, customer_error;

  std::thread vendor([&] {
    try {
      Channel ch(*vendor_end, Party::kVendor, sid, &out.vendor_log);
      out.vendor = run_vendor(config, plm, ch);
    } catch (...) {
      vendor_error = std::current_exception();
      vendor_end->close();
    }
  });
  try {
    Channel ch(*customer_end, Party::kCustomer, sid);
    out.customer = run_customer(config, ch, train, record_privatized);
    std::vector<std::uint64_t> ids;
    for (const auto& s : eval.samples) ids.push_back(s.id);
    const auto seqs = eval.sequences();
    out.predictions = run_inference(config, ch, out.customer, seqs, ids, record_privatized);
    out.eval_accuracy = accuracy(out.predictions, eval.labels());
    finish(ch);
  } catch (...) {
    customer_error = std::current_exception();
    customer_end->close();
  }
  vendor.join();
  // The party that failed first is the interesting one; the other usually
  // sees a closed link.
  auto is_transport = [](std::exception_ptr e) {
    try {
      std::rethrow_exception(e);
    } catch (const TransportError&) {
      return true;
    } catch (...) {
      return false;
    }
  };
  if (vendor_error && customer_error) {
    std::rethrow_exception(is_transport(vendor_error) ? customer_error : vendor_error);
  }
  if (vendor_error) std::rethrow_exception(vendor_error);
  if (customer_error) std::rethrow_exception(customer_error);
  return out;
}

CentralizedOutcome run_centralized(const SessionConfig& config, const PLM& plm, const data::Corpus& train,
                                   const data::Corpus& eval) {
  config.validate();
  BottomModel bottom;
  TopModel top = prepare_top(config, plm, &bottom);
  if (config.bottom_trainable) {
    bottom.frozen = false;
    model::set_trainable(bottom);
  }
  const auto top_params = model::top_trainables(top);
  const auto bottom_params = model::bottom_trainables(bottom);
  model::AdamWState top_state, bottom_state;
  CentralizedOutcome out;
  const std::size_t N = train.samples.size();
  const std::size_t per_epoch = batches_per_epoch(N, config.batch_size);
  const std::uint64_t total = per_epoch * config.epochs;
  std::uint64_t step = 0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto order = epoch_order(config.shuffle_seed, e, N);
    for (std::size_t k = 0; k < per_epoch; ++k) {
      const std::size_t lo = k * config.batch_size, hi = std::min(N, lo + config.batch_size);
      std::vector<std::vector<std::int32_t>> rows;
      std::vector<std::int32_t> labels;
      for (std::size_t i = lo; i < hi; ++i) {
        rows.push_back(train.samples[order[i]].ids);
        labels.push_back(train.samples[order[i]].label);
      }
      TokenBatch batch = make_batch(rows);
      Graph g;
      auto reps = model::forward_bottom(g, bottom, batch);
      auto logits = model::forward_top(g, top, reps, batch.mask);
      auto lg = numerics::cross_entropy_with_grad(g.value(logits), labels);
      out.losses.push_back(lg.loss);
      g.backward(logits, lg.grad);
      model::adamw_step(top_params, top_state, step_lr(config, config.top_optimizer, step, total),
                        config.top_optimizer);
      model::zero_grads(top_params);
      if (config.bottom_trainable) {
        model::adamw_step(bottom_params, bottom_state, step_lr(config, config.bottom_optimizer, step, total),
                          config.bottom_optimizer);
        model::zero_grads(bottom_params);
      }
      ++step;
    }
  }
  for (std::size_t lo = 0; lo < eval.samples.size(); lo += config.eval_batch_size) {
    const std::size_t hi = std::min(eval.samples.size(), lo + config.eval_batch_size);
    std::vector<std::vector<std::int32_t>> rows;
    for (std::size_t i = lo; i < hi; ++i) rows.push_back(eval.samples[i].ids);
    TokenBatch batch = make_batch(rows);
    auto p = model::argmax_rows(model::top_logits(top, model::bottom_representations(bottom, batch), batch.mask));
    out.predictions.insert(out.predictions.end(), p.begin(), p.end());
  }
  out.eval_accuracy = accuracy(out.predictions, eval.labels());
  if (config.bottom_trainable) bottom.frozen = true;
  out.model = model::merge_model(bottom, top);
  return out;
}

}  // namespace sap::protocol
