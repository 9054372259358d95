// Copyright 2026 The ctcslu Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CTCSLU_ERROR_HPP_
#define CTCSLU_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace ctcslu {

// Every failure raised by the library carries one of these kinds. The CLI
// maps them onto process exit codes through category_of().
enum class ErrorKind {
  kUsage,
  kInventoryMismatch,
  kMalformedChunk,
  kEncoding,
  kConfiguration,
  kInfeasibleTarget,
  kOracleTooLarge,
  kShape,
  kTransferMismatch,
  kState,
  kData,
  kParse,
  kSpec,
  kDecodeConfig,
  kDivergence,
  kNumeric,
  kIo,
};

enum class ErrorCategory { kUsage = 1, kData = 2, kNumeric = 3 };

const char* error_kind_name(ErrorKind kind);
ErrorCategory category_of(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  ErrorCategory category() const { return category_of(kind_); }
  int exit_code() const { return static_cast<int>(category_of(kind_)); }

 private:
  ErrorKind kind_;
};

}  // namespace ctcslu

#endif  // CTCSLU_ERROR_HPP_
