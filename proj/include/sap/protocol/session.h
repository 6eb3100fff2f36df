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

#ifndef SAP_PROTOCOL_SESSION_H_
#define SAP_PROTOCOL_SESSION_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "sap/data/corpus.h"
#include "sap/model/optim.h"
#include "sap/model/plm.h"
#include "sap/privatizer/privatizer.h"
#include "sap/protocol/message.h"
#include "sap/protocol/transcript.h"
#include "sap/protocol/transport.h"

namespace sap::protocol {

struct SessionConfig {
  std::size_t split = 0;
  bool bottom_trainable = false;
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  std::size_t eval_batch_size = 64;
  privatizer::PrivacyConfig privacy;
  model::AdamWConfig top_optimizer{8e-3, 0.9, 0.999, 1e-8, 0.01};
  model::AdamWConfig bottom_optimizer{1e-4, 0.9, 0.999, 1e-8, 0.0};
  bool linear_schedule = true;
  std::uint64_t lora_seed = 0;
  std::uint64_t shuffle_seed = 0;

  void validate() const;  // ConfigError
  // Derived from the seeds, so reruns produce identical frames.
  SessionId session_id() const;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

// Pass index used for privatizing inference inputs.
inline constexpr std::uint64_t kInferencePass = 1ull << 32;

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);
// Permutation of [0, n) for one epoch; shared by both parties and the
// centralized oracle.
std::vector<std::size_t> epoch_order(std::uint64_t shuffle_seed, std::size_t epoch, std::size_t n);

// One party's end of a session: stamps session id and sequence numbers,
// validates outgoing messages, checks incoming order, logs every frame.
class Channel {
 public:
  Channel(Transport& transport, Party self, SessionId session, Transcript* log = nullptr);

  void send(Message msg);
  // Throws ProtocolError on a foreign session id or out-of-order seq.
  Message receive();
  // receive() plus a type check.
  Message expect(MessageType type);
  Party self() const { return self_; }

 private:
  Transport& transport_;
  Party self_;
  SessionId session_;
  Transcript* log_;
  std::uint64_t next_send_ = 0;
  std::uint64_t next_receive_ = 0;
};

struct VendorResult {
  model::PLM model;  // initial bottom merged with the fine-tuned top
  std::size_t steps = 0;
  std::size_t eval_requests = 0;
};

// Vendor side: splits `plm`, attaches LoRA, sends the bottom, trains the top
// from the customer's representations, then serves inference requests until
// DONE.
VendorResult run_vendor(const SessionConfig& config, const model::PLM& plm, Channel& channel);

struct PrivatizedRecord {
  std::uint64_t pass = 0;
  std::uint64_t sample_id = 0;
  std::vector<std::int32_t> ids;  // post-remap ids, as sent
};

struct CustomerState {
  model::BottomModel bottom;
  std::optional<privatizer::ContributingSet> contributing;
  std::vector<double> losses;  // one per step
  std::size_t perturbed = 0;
  std::size_t replaced = 0;
  std::vector<PrivatizedRecord> privatized;
};

// Customer side of fine-tuning. Returns once training is complete; the
// session stays open for run_inference until finish().
CustomerState run_customer(const SessionConfig& config, Channel& channel, const data::Corpus& train,
                           bool record_privatized = false);

// Customer side of inference: privatizes, sends EVAL_REQUESTs, returns the
// argmax of the vendor's logits per sequence.
std::vector<std::int32_t> run_inference(const SessionConfig& config, Channel& channel,
                                        CustomerState& state,
                                        std::span<const std::vector<std::int32_t>> sequences,
                                        std::span<const std::uint64_t> sample_ids,
                                        bool record_privatized = false);

// Customer ends the session.
void finish(Channel& channel);

double accuracy(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels);

struct SessionOutcome {
  VendorResult vendor;
  CustomerState customer;
  std::vector<std::int32_t> predictions;  // on the eval corpus
  double eval_accuracy = 0.0;
  Transcript vendor_log;
};

// Runs both parties on separate threads over a fresh transport pair:
// fine-tuning on `train`, inference on `eval`, then DONE. The vendor's log
// records every frame in both directions.
SessionOutcome run_session(const SessionConfig& config, const model::PLM& plm,
                           const data::Corpus& train, const data::Corpus& eval, TransportKind transport,
                           Transcript::Options log_options = {}, bool record_privatized = false);

struct CentralizedOutcome {
  model::PLM model;
  std::vector<double> losses;
  std::vector<std::int32_t> predictions;
  double eval_accuracy = 0.0;
};

// Single-process fine-tuning with the same batches, seeds and optimizer,
// without privatization or messaging.
CentralizedOutcome run_centralized(const SessionConfig& config, const model::PLM& plm,
                                   const data::Corpus& train, const data::Corpus& eval);

}  // namespace sap::protocol

#endif  // SAP_PROTOCOL_SESSION_H_
