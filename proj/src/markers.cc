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

#include "sgxpart/markers.h"

#include <algorithm>

namespace sgxpart {
namespace {

constexpr std::uint8_t kPrefix[3] = {0x7F, 'M', 'K'};

char ClassLetter(SecretClass kind) {
  switch (kind) {
    case SecretClass::kPrivateKey: return 'P';
    case SecretClass::kSessionKey: return 'S';
    case SecretClass::kCredentials: return 'C';
  }
  return '?';
}

}  // namespace

Marker MakeMarker(SecretClass kind, std::uint32_t instance) {
  return Marker{kPrefix[0],
                kPrefix[1],
                kPrefix[2],
                static_cast<std::uint8_t>(ClassLetter(kind)),
                static_cast<std::uint8_t>(instance >> 24),
                static_cast<std::uint8_t>(instance >> 16),
                static_cast<std::uint8_t>(instance >> 8),
                static_cast<std::uint8_t>(instance)};
}

void MarkerRegistry::Add(const Marker& marker) { markers_.insert(marker); }

bool MarkerRegistry::Known(ByteView candidate) const {
  if (candidate.size() != kMarkerSize) return false;
  Marker m;
  std::copy(candidate.begin(), candidate.end(), m.begin());
  return markers_.contains(m);
}

std::vector<MarkerHit> MarkerRegistry::Scan(ByteView data) const {
  std::vector<MarkerHit> hits;
  if (data.size() < kMarkerSize) return hits;
  auto it = data.begin();
  auto last = data.end() - (kMarkerSize - 1);
  while (true) {
    it = std::search(it, data.end(), std::begin(kPrefix), std::end(kPrefix));
    if (it == data.end() || it >= last) break;
    std::size_t offset = static_cast<std::size_t>(it - data.begin());
    ByteView candidate = data.subspan(offset, kMarkerSize);
    if (Known(candidate)) {
      MarkerHit hit;
      hit.offset = offset;
      switch (candidate[3]) {
        case 'P': hit.kind = SecretClass::kPrivateKey; break;
        case 'S': hit.kind = SecretClass::kSessionKey; break;
        default: hit.kind = SecretClass::kCredentials; break;
      }
      hit.instance = static_cast<std::uint32_t>(candidate[4]) << 24 |
                     static_cast<std::uint32_t>(candidate[5]) << 16 |
                     static_cast<std::uint32_t>(candidate[6]) << 8 | candidate[7];
      hits.push_back(hit);
    }
    ++it;
  }
  return hits;
}

}  // namespace sgxpart
