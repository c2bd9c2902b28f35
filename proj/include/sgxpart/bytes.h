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

#ifndef SGXPART_BYTES_H_
#define SGXPART_BYTES_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sgxpart {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;
using Key32 = std::array<std::uint8_t, 32>;

Bytes ToBytes(std::string_view text);
std::string ToString(ByteView bytes);
std::string ToHex(ByteView bytes);
// Throws Error(kParseError) on odd length or non-hex characters.
Bytes FromHex(std::string_view hex);

void AppendU64(Bytes& out, std::uint64_t value);  // big-endian
void AppendU32(Bytes& out, std::uint32_t value);  // big-endian
std::uint64_t ReadU64(ByteView in);
void Append(Bytes& out, ByteView tail);

// Offsets of every occurrence of `needle` in `haystack` (overlaps included).
std::vector<std::size_t> FindAll(ByteView haystack, ByteView needle);
bool Contains(ByteView haystack, ByteView needle);

// Deterministic byte source. Independent streams are derived from one seed so
// that consumers do not perturb each other's sequences.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream);

  Bytes NextBytes(std::size_t n);
  Key32 NextKey();
  std::uint64_t NextU64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sgxpart

#endif  // SGXPART_BYTES_H_
