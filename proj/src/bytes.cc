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

#include "sgxpart/bytes.h"

#include <algorithm>

#include "sgxpart/error.h"

namespace sgxpart {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kOutOfMemory: return "OutOfMemory";
    case ErrorCode::kOutOfBounds: return "OutOfBounds";
    case ErrorCode::kWrongState: return "WrongState";
    case ErrorCode::kDuplicatePage: return "DuplicatePage";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kNoSuchPage: return "NoSuchPage";
    case ErrorCode::kEmptyEnclave: return "EmptyEnclave";
    case ErrorCode::kNoSuchEnclave: return "NoSuchEnclave";
    case ErrorCode::kNoSuchEntryPoint: return "NoSuchEntryPoint";
    case ErrorCode::kNotInEnclave: return "NotInEnclave";
    case ErrorCode::kSealIntegrityFailure: return "SealIntegrityFailure";
    case ErrorCode::kWrongEnclaveIdentity: return "WrongEnclaveIdentity";
    case ErrorCode::kAttestationFailure: return "AttestationFailure";
    case ErrorCode::kCrossPlatform: return "CrossPlatform";
    case ErrorCode::kIntegrityFailure: return "IntegrityFailure";
    case ErrorCode::kReplayDetected: return "ReplayDetected";
    case ErrorCode::kNotEndpoint: return "NotEndpoint";
    case ErrorCode::kInvalidPlan: return "InvalidPlan";
    case ErrorCode::kHandshakeFailure: return "HandshakeFailure";
    case ErrorCode::kDuplicateConnection: return "DuplicateConnection";
    case ErrorCode::kConnectionLimit: return "ConnectionLimit";
    case ErrorCode::kNoSuchSession: return "NoSuchSession";
    case ErrorCode::kRecordIntegrityFailure: return "RecordIntegrityFailure";
    case ErrorCode::kParseError: return "ParseError";
  }
  return "Unknown";
}

Bytes ToBytes(std::string_view text) { return Bytes(text.begin(), text.end()); }

std::string ToString(ByteView bytes) {
  return std::string(bytes.begin(), bytes.end());
}

std::string ToHex(ByteView bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

namespace {

int HexValue(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

Bytes FromHex(std::string_view hex) {
  if (hex.size() % 2 != 0) {
    throw Error(ErrorCode::kParseError, "odd-length hex string");
  }
  Bytes out;
  out.reserve(hex.size() / 2);
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    int hi = HexValue(hex[i]);
    int lo = HexValue(hex[i + 1]);
    if (hi < 0 || lo < 0) {
      throw Error(ErrorCode::kParseError,
                  "bad hex digit in '" + std::string(hex) + "'");
    }
    out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
  }
  return out;
}

void AppendU64(Bytes& out, std::uint64_t value) {
  for (int shift = 56; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(value >> shift));
  }
}

void AppendU32(Bytes& out, std::uint32_t value) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(value >> shift));
  }
}

std::uint64_t ReadU64(ByteView in) {
  if (in.size() < 8) throw Error(ErrorCode::kParseError, "short u64");
  std::uint64_t value = 0;
  for (int i = 0; i < 8; ++i) value = value << 8 | in[i];
  return value;
}

void Append(Bytes& out, ByteView tail) {
  out.insert(out.end(), tail.begin(), tail.end());
}

std::vector<std::size_t> FindAll(ByteView haystack, ByteView needle) {
  std::vector<std::size_t> hits;
  if (needle.empty() || needle.size() > haystack.size()) return hits;
  auto it = haystack.begin();
  while (true) {
    it = std::search(it, haystack.end(), needle.begin(), needle.end());
    if (it == haystack.end()) break;
    hits.push_back(static_cast<std::size_t>(it - haystack.begin()));
    ++it;
  }
  return hits;
}

bool Contains(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(),
                     needle.end()) != haystack.end();
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

Bytes Rng::NextBytes(std::size_t n) {
  Bytes out;
  out.reserve(n + 8);
  while (out.size() < n) {
    std::uint64_t word = engine_();
    for (int i = 0; i < 8 && out.size() < n; ++i) {
      out.push_back(static_cast<std::uint8_t>(word >> (8 * i)));
    }
  }
  return out;
}

Key32 Rng::NextKey() {
  Key32 key;
  Bytes raw = NextBytes(key.size());
  std::copy(raw.begin(), raw.end(), key.begin());
  return key;
}

}  // namespace sgxpart
