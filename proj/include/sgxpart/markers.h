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

#ifndef SGXPART_MARKERS_H_
#define SGXPART_MARKERS_H_

#include <array>
#include <cstdint>
#include <set>
#include <vector>

#include "sgxpart/bytes.h"
#include "sgxpart/partition.h"

// Test instrumentation: every secret the server stores is prefixed by an
// 8-byte marker unique to its class and instance, so a leak is detected by an
// exact byte scan.
namespace sgxpart {

inline constexpr std::size_t kMarkerSize = 8;
using Marker = std::array<std::uint8_t, kMarkerSize>;

// 0x7F 'M' 'K' <class letter> <instance, 4 bytes big-endian>.
Marker MakeMarker(SecretClass kind, std::uint32_t instance);

struct MarkerHit {
  std::size_t offset = 0;
  SecretClass kind = SecretClass::kPrivateKey;
  std::uint32_t instance = 0;
};

// Known markers of one server run. Only exact matches of registered markers
// count, so random ciphertext cannot produce false hits by prefix alone.
class MarkerRegistry {
 public:
  void Add(const Marker& marker);
  bool Known(ByteView candidate) const;
  std::vector<MarkerHit> Scan(ByteView data) const;

 private:
  std::set<Marker> markers_;
};

}  // namespace sgxpart

#endif  // SGXPART_MARKERS_H_
