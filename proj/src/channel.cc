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

#include "sgxpart/channel.h"

#include <algorithm>

#include "sgxpart/crypto.h"
#include "sgxpart/error.h"

namespace sgxpart {
namespace {

constexpr std::size_t kNonceSize = 32;
constexpr std::uint8_t kHelloTag[4] = {'C', 'H', 'A', 'N'};

std::array<std::uint8_t, 64> ReportData(ByteView nonce, ByteView binding) {
  std::array<std::uint8_t, 64> data{};
  std::copy(std::begin(kHelloTag), std::end(kHelloTag), data.begin());
  std::copy(nonce.begin(), nonce.end(), data.begin() + 4);
  Digest bound = crypto::Sha256(binding);
  std::copy_n(bound.begin(), 28, data.begin() + 4 + kNonceSize);
  return data;
}

Bytes NonceFrom(const Report& r) {
  return Bytes(r.user_data.begin() + 4, r.user_data.begin() + 4 + kNonceSize);
}

bool Binds(const Report& r, ByteView binding) {
  std::array<std::uint8_t, 64> expected = ReportData(NonceFrom(r), binding);
  return std::equal(expected.begin(), expected.end(), r.user_data.begin());
}

Error AttestationFailure(const std::string& why) {
  return Error(ErrorCode::kAttestationFailure, why);
}

}  // namespace

TrustedChannel TrustedChannel::establish(Processor& platform_a, EnclaveId a,
                                         Processor& platform_b, EnclaveId b,
                                         const EstablishOptions& options) {
  if (&platform_a != &platform_b) {
    throw Error(ErrorCode::kCrossPlatform,
                "endpoints live on different platform instances");
  }
  Processor& cpu = platform_a;
  for (EnclaveId id : {a, b}) {
    if (cpu.enclave(id).state != EnclaveState::kInitialized) {
      throw Error(ErrorCode::kWrongState,
                  "channel endpoint " + std::to_string(id.value) + " is not initialized");
    }
  }
  auto transit = [&](const Bytes& wire) {
    Report r = Report::Parse(wire);
    if (options.tamper_in_transit) options.tamper_in_transit(r);
    return r;
  };

  // a -> b: report over nonce_a.
  Bytes report_a_wire;
  {
    EnclaveCall call(cpu, a, options.entry_point);
    Bytes nonce_a = cpu.random_bytes(kNonceSize);
    Report report = cpu.ereport(call.handle(), ReportData(nonce_a, {}));
    report_a_wire = call.Exit(report.Serialize());
  }
  Report report_a = transit(report_a_wire);

  // b verifies, answers with a report bound to a's report, derives its key.
  Bytes report_b_wire;
  Key32 key_b{};
  {
    EnclaveCall call(cpu, b, options.entry_point);
    if (!cpu.verify_report(call.handle(), report_a) || !Binds(report_a, {})) {
      throw AttestationFailure("endpoint b rejected the report of endpoint a");
    }
    Bytes nonce_b = cpu.random_bytes(kNonceSize);
    Report report = cpu.ereport(call.handle(),
                                ReportData(nonce_b, report_a.Serialize()));
    Bytes transcript = NonceFrom(report_a);
    Append(transcript, nonce_b);
    key_b = cpu.derive_pairwise_key(call.handle(), report_a.identity, report.identity,
                                    transcript);
    report_b_wire = call.Exit(report.Serialize());
  }
  Report report_b = transit(report_b_wire);

  // a verifies b and derives the same key.
  Key32 key_a{};
  {
    EnclaveCall call(cpu, a, options.entry_point);
    if (!cpu.verify_report(call.handle(), report_b) ||
        !Binds(report_b, report_a.Serialize())) {
      throw AttestationFailure("endpoint a rejected the report of endpoint b");
    }
    Bytes transcript = NonceFrom(report_a);
    Append(transcript, NonceFrom(report_b));
    key_a = cpu.derive_pairwise_key(call.handle(), report_a.identity, report_b.identity,
                                    transcript);
    call.Exit();
  }
  if (key_a != key_b) throw AttestationFailure("endpoints derived different keys");

  TrustedChannel channel;
  channel.id_ = cpu.next_object_id();
  channel.platform_ = &cpu;
  channel.a_ = a;
  channel.b_ = b;
  channel.identity_a_ = report_a.identity;
  channel.identity_b_ = report_b.identity;
  channel.key_ = key_a;
  channel.state_ = ChannelState::kEstablished;
  cpu.trace().Record("CHAN_EST a=" + std::to_string(a.value) +
                     " b=" + std::to_string(b.value) +
                     " chan=" + std::to_string(channel.id_));
  return channel;
}

int TrustedChannel::Direction(EnclaveId sender, const char* op) const {
  if (sender == a_) return 0;
  if (sender == b_) return 1;
  throw Error(ErrorCode::kNotEndpoint,
              std::string(op) + " by enclave " + std::to_string(sender.value) +
                  " on channel " + std::to_string(id_));
}

Bytes TrustedChannel::Nonce(int direction, std::uint64_t counter) const {
  Bytes nonce{static_cast<std::uint8_t>(direction)};
  AppendU64(nonce, counter);
  return nonce;
}

Bytes TrustedChannel::Aad(int direction) const {
  Bytes aad;
  AppendU64(aad, id_);
  aad.push_back(static_cast<std::uint8_t>(direction));
  return aad;
}

std::uint64_t TrustedChannel::sent_from(EnclaveId endpoint) const {
  return send_counter_[Direction(endpoint, "query")];
}

Bytes TrustedChannel::send(Processor& cpu, const ExecutionHandle& from,
                           ByteView plaintext) {
  if (state_ != ChannelState::kEstablished) {
    throw Error(ErrorCode::kWrongState, "channel is not established");
  }
  if (&cpu != platform_) throw Error(ErrorCode::kCrossPlatform, "foreign platform");
  int dir = Direction(from.enclave, "send");
  if (!cpu.is_executing(from)) {
    throw Error(ErrorCode::kNotInEnclave, "send outside the sending enclave");
  }
  std::uint64_t counter = ++send_counter_[dir];
  Bytes wire;
  AppendU64(wire, counter);
  Append(wire, crypto::AeadSeal(key_, Nonce(dir, counter), Aad(dir), plaintext));
  cpu.trace().Record("CHAN_MSG chan=" + std::to_string(id_) +
                     " ctr=" + std::to_string(counter) +
                     " len=" + std::to_string(plaintext.size()));
  return wire;
}

Bytes TrustedChannel::recv(Processor& cpu, const ExecutionHandle& to, ByteView wire) {
  if (state_ != ChannelState::kEstablished) {
    throw Error(ErrorCode::kWrongState, "channel is not established");
  }
  if (&cpu != platform_) throw Error(ErrorCode::kCrossPlatform, "foreign platform");
  int dir = 1 - Direction(to.enclave, "recv");
  if (!cpu.is_executing(to)) {
    throw Error(ErrorCode::kNotInEnclave, "recv outside the receiving enclave");
  }
  if (wire.size() < kHeaderSize + crypto::kTagSize) {
    throw Error(ErrorCode::kIntegrityFailure, "truncated channel message");
  }
  std::uint64_t counter = ReadU64(wire);
  auto plain = crypto::AeadOpen(key_, Nonce(dir, counter), Aad(dir),
                                wire.subspan(kHeaderSize));
  if (!plain) {
    throw Error(ErrorCode::kIntegrityFailure,
                "channel " + std::to_string(id_) + " message failed to verify");
  }
  if (counter <= recv_counter_[dir]) {
    throw Error(ErrorCode::kReplayDetected,
                "counter " + std::to_string(counter) + " already accepted");
  }
  recv_counter_[dir] = counter;
  return *plain;
}

}  // namespace sgxpart
