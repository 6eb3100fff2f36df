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

#ifndef SAP_MODEL_CHECKPOINT_H_
#define SAP_MODEL_CHECKPOINT_H_

#include <filesystem>

#include "json.hpp"
#include "sap/model/plm.h"

namespace sap::model {

// Writes every parameter (adapters included) into a tensor container whose
// meta block holds {"config": ..., "extra": extra}.
void save_checkpoint(const std::filesystem::path& path, const PLM& plm,
                     const nlohmann::json& extra = nlohmann::json::object());
PLM load_checkpoint(const std::filesystem::path& path);

}  // namespace sap::model

#endif  // SAP_MODEL_CHECKPOINT_H_
