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

#ifndef SAP_ERRORS_H_
#define SAP_ERRORS_H_

#include <stdexcept>
#include <string>

namespace sap {

// Root of every error raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SAP_DEFINE_ERROR(Name)        \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  }

SAP_DEFINE_ERROR(DimensionError);
SAP_DEFINE_ERROR(NumericError);
SAP_DEFINE_ERROR(ConfigError);
SAP_DEFINE_ERROR(VocabError);
SAP_DEFINE_ERROR(SplitError);
SAP_DEFINE_ERROR(LabelError);
SAP_DEFINE_ERROR(DataError);
SAP_DEFINE_ERROR(ProtocolError);
SAP_DEFINE_ERROR(DecodeError);
SAP_DEFINE_ERROR(TransportError);
SAP_DEFINE_ERROR(AttackError);

#undef SAP_DEFINE_ERROR

}  // namespace sap

#endif  // SAP_ERRORS_H_
