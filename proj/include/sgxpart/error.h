/*
 * Copyright 2026 The sgxpart Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SGXPART_ERROR_H_
#define SGXPART_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace sgxpart {

enum class ErrorCode {
  kInvalidArgument,
  kOutOfMemory,
  kOutOfBounds,
  kWrongState,
  kDuplicatePage,
  kOutOfRange,
  kNoSuchPage,
  kEmptyEnclave,
  kNoSuchEnclave,
  kNoSuchEntryPoint,
  kNotInEnclave,
  kSealIntegrityFailure,
  kWrongEnclaveIdentity,
  kAttestationFailure,
  kCrossPlatform,
  kIntegrityFailure,
  kReplayDetected,
  kNotEndpoint,
  kInvalidPlan,
  kHandshakeFailure,
  kDuplicateConnection,
  kConnectionLimit,
  kNoSuchSession,
  kRecordIntegrityFailure,
  kParseError,
};

std::string_view ErrorCodeName(ErrorCode code);

// All simulator failures are reported through this exception; callers branch
// on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sgxpart

#endif  // SGXPART_ERROR_H_
