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

#ifndef SGXPART_CHANNEL_H_
#define SGXPART_CHANNEL_H_

#include <cstdint>
#include <functional>
#include <string>

#include "sgxpart/bytes.h"
#include "sgxpart/sgx.h"

namespace sgxpart {

enum class ChannelState { kPending, kEstablished, kClosed };

struct EstablishOptions {
  // Entry point used to run the attestation steps inside each endpoint.
  std::string entry_point = std::string(kRuntimeEntry);
  // Called on each report while it sits in untrusted memory between the
  // endpoints; lets tests play the man in the middle.
  std::function<void(Report&)> tamper_in_transit;
};

// Authenticated, replay-protected link between two enclaves of one platform.
// Wire format: counter (8 bytes, big-endian) || ciphertext || 16-byte tag.
// send/recv only work while the caller is executing inside the respective
// endpoint enclave.
class TrustedChannel {
 public:
  static constexpr std::size_t kHeaderSize = 8;

  // Mutual local attestation: each side reports over a fresh nonce and
  // verifies the other before deriving the channel key.
  static TrustedChannel establish(Processor& platform_a, EnclaveId a,
                                  Processor& platform_b, EnclaveId b,
                                  const EstablishOptions& options = {});

  Bytes send(Processor& cpu, const ExecutionHandle& from, ByteView plaintext);
  Bytes recv(Processor& cpu, const ExecutionHandle& to, ByteView wire);
  void close() { state_ = ChannelState::kClosed; }

  std::uint64_t id() const { return id_; }
  ChannelState state() const { return state_; }
  EnclaveId endpoint_a() const { return a_; }
  EnclaveId endpoint_b() const { return b_; }
  const Digest& identity_a() const { return identity_a_; }
  const Digest& identity_b() const { return identity_b_; }
  // Messages sent from the given endpoint so far.
  std::uint64_t sent_from(EnclaveId endpoint) const;

 private:
  TrustedChannel() = default;
  // 0 for a->b, 1 for b->a.
  int Direction(EnclaveId sender, const char* op) const;
  Bytes Nonce(int direction, std::uint64_t counter) const;
  Bytes Aad(int direction) const;

  std::uint64_t id_ = 0;
  const Processor* platform_ = nullptr;
  EnclaveId a_;
  EnclaveId b_;
  Digest identity_a_{};
  Digest identity_b_{};
  Key32 key_{};
  std::uint64_t send_counter_[2] = {0, 0};
  std::uint64_t recv_counter_[2] = {0, 0};
  ChannelState state_ = ChannelState::kPending;
};

}  // namespace sgxpart

#endif  // SGXPART_CHANNEL_H_
