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

#include "ctcslu/error.hpp"

namespace ctcslu {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage: return "usage error";
    case ErrorKind::kInventoryMismatch: return "inventory mismatch";
    case ErrorKind::kMalformedChunk: return "malformed chunk";
    case ErrorKind::kEncoding: return "encoding error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kInfeasibleTarget: return "infeasible target";
    case ErrorKind::kOracleTooLarge: return "oracle too large";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kTransferMismatch: return "transfer mismatch";
    case ErrorKind::kState: return "state error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kSpec: return "spec error";
    case ErrorKind::kDecodeConfig: return "decode-config error";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
    case ErrorKind::kConfiguration:
    case ErrorKind::kDecodeConfig:
      return ErrorCategory::kUsage;
    case ErrorKind::kInfeasibleTarget:
    case ErrorKind::kOracleTooLarge:
    case ErrorKind::kDivergence:
    case ErrorKind::kNumeric:
      return ErrorCategory::kNumeric;
    default:
      return ErrorCategory::kData;
  }
}

}  // namespace ctcslu
