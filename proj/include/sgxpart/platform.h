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

#ifndef SGXPART_PLATFORM_H_
#define SGXPART_PLATFORM_H_

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sgxpart/bytes.h"

namespace sgxpart {

using Address = std::uint64_t;

struct EnclaveId {
  std::uint32_t value = 0;
  friend auto operator<=>(const EnclaveId&, const EnclaveId&) = default;
};

// Owner tag of a page and identity of an execution context.
class Domain {
 public:
  static constexpr Domain Untrusted() { return Domain(0); }
  static Domain Enclave(EnclaveId id);

  bool is_untrusted() const { return raw_ == 0; }
  bool is_enclave() const { return raw_ != 0; }
  EnclaveId enclave_id() const { return EnclaveId{raw_}; }
  std::string ToString() const;

  friend bool operator==(const Domain&, const Domain&) = default;

 private:
  explicit constexpr Domain(std::uint32_t raw) : raw_(raw) {}
  std::uint32_t raw_;
};

struct Region {
  Address base = 0;
  std::size_t length = 0;
  Domain owner = Domain::Untrusted();

  Address end() const { return base + length; }
  bool contains(Address addr) const { return addr >= base && addr < end(); }
  bool overlaps(Address other_base, std::size_t other_len) const {
    return other_base < end() && base < other_base + other_len;
  }
};

// Append-only event log, one `key=value` record per line.
class Trace {
 public:
  void Record(std::string line) { lines_.push_back(std::move(line)); }
  const std::vector<std::string>& lines() const { return lines_; }
  std::size_t Count(std::string_view prefix) const;
  std::string Text() const;
  void Clear() { lines_.clear(); }

 private:
  std::vector<std::string> lines_;
};

std::string HexAddress(Address addr);

struct PlatformOptions {
  std::size_t pages = 1024;
  std::uint64_t seed = 1;
};

// Flat physical memory with per-page ownership. Reads of a page owned by a
// different enclave return the abort byte instead of faulting; such writes
// are dropped and logged as AccessViolation. Unallocated pages behave as
// untrusted memory.
class PlatformMemory {
 public:
  static constexpr std::size_t kPageSize = 4096;
  static constexpr std::uint8_t kAbortByte = 0xFF;

  explicit PlatformMemory(PlatformOptions options = {});

  // Lowest-address first-fit; the returned pages are zero-filled.
  Region alloc(Domain owner, std::size_t pages);
  // Zeroes and returns the pages of a region previously returned by alloc.
  void release(const Region& region);

  Bytes mem_read(Domain ctx, Address addr, std::size_t len);
  void mem_write(Domain ctx, Address addr, ByteView bytes);
  // OS-level malware: same view as any untrusted context.
  Bytes adversary_read(Address addr, std::size_t len);

  // nullopt for free pages.
  std::optional<Domain> page_owner(std::size_t page_index) const;
  Domain effective_owner(Address addr) const;
  std::vector<Region> allocations() const;

  std::size_t size() const { return bytes_.size(); }
  std::size_t page_count() const { return owners_.size(); }
  std::size_t free_pages() const;
  std::uint64_t seed() const { return seed_; }
  std::size_t access_violations() const { return access_violations_; }

  Trace& trace() { return trace_; }
  const Trace& trace() const { return trace_; }

 private:
  friend class Processor;

  static constexpr std::uint32_t kFree = 0xFFFFFFFF;

  void CheckBounds(Address addr, std::size_t len) const;
  bool MayRead(Domain ctx, std::size_t page) const;
  bool MayWrite(Domain ctx, std::size_t page) const;
  void Log(std::string_view event, Domain ctx, Address addr, std::size_t len);
  const Key32& platform_secret() const { return platform_secret_; }

  std::uint64_t seed_;
  Key32 platform_secret_;
  Bytes bytes_;
  // Raw domain value per page, or kFree.
  std::vector<std::uint32_t> owners_;
  std::map<Address, Region> regions_;
  std::size_t access_violations_ = 0;
  Trace trace_;
};

}  // namespace sgxpart

#endif  // SGXPART_PLATFORM_H_
