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

#include "sgxpart/platform.h"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "sgxpart/crypto.h"
#include "sgxpart/error.h"

namespace sgxpart {

Domain Domain::Enclave(EnclaveId id) {
  if (id.value == 0) {
    throw Error(ErrorCode::kInvalidArgument, "enclave ids start at 1");
  }
  return Domain(id.value);
}

std::string Domain::ToString() const {
  if (is_untrusted()) return "untrusted";
  return "enclave:" + std::to_string(raw_);
}

std::size_t Trace::Count(std::string_view prefix) const {
  return static_cast<std::size_t>(
      std::count_if(lines_.begin(), lines_.end(), [&](const std::string& l) {
        return l.compare(0, prefix.size(), prefix) == 0;
      }));
}

std::string Trace::Text() const {
  std::string out;
  for (const auto& line : lines_) {
    out += line;
    out += '\n';
  }
  return out;
}

std::string HexAddress(Address addr) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "0x%llx",
                static_cast<unsigned long long>(addr));
  return buf;
}

PlatformMemory::PlatformMemory(PlatformOptions options)
    : seed_(options.seed),
      bytes_(options.pages * kPageSize, 0),
      owners_(options.pages, kFree) {
  if (options.pages == 0) {
    throw Error(ErrorCode::kInvalidArgument, "memory needs at least one page");
  }
  Bytes seed_bytes;
  AppendU64(seed_bytes, options.seed);
  platform_secret_ = crypto::DeriveKey(ToBytes("sgxpart platform fuse"),
                                       "platform-secret", seed_bytes);
}

Region PlatformMemory::alloc(Domain owner, std::size_t pages) {
  if (pages == 0) {
    throw Error(ErrorCode::kInvalidArgument, "zero-page allocation");
  }
  std::size_t run = 0;
  for (std::size_t page = 0; page < owners_.size(); ++page) {
    run = owners_[page] == kFree ? run + 1 : 0;
    if (run == pages) {
      std::size_t first = page + 1 - pages;
      std::uint32_t tag = owner.is_untrusted() ? 0 : owner.enclave_id().value;
      std::fill(owners_.begin() + first, owners_.begin() + page + 1, tag);
      Region region{first * kPageSize, pages * kPageSize, owner};
      regions_[region.base] = region;
      Log("Alloc", owner, region.base, region.length);
      return region;
    }
  }
  throw Error(ErrorCode::kOutOfMemory,
              "no run of " + std::to_string(pages) + " free pages");
}

void PlatformMemory::release(const Region& region) {
  auto it = regions_.find(region.base);
  if (it == regions_.end() || it->second.length != region.length ||
      !(it->second.owner == region.owner)) {
    throw Error(ErrorCode::kInvalidArgument,
                "release of unknown region at " + HexAddress(region.base));
  }
  std::fill(bytes_.begin() + region.base, bytes_.begin() + region.end(), 0);
  std::size_t first = region.base / kPageSize;
  std::fill(owners_.begin() + first,
            owners_.begin() + first + region.length / kPageSize, kFree);
  regions_.erase(it);
  Log("Free", region.owner, region.base, region.length);
}

void PlatformMemory::CheckBounds(Address addr, std::size_t len) const {
  if (addr > bytes_.size() || len > bytes_.size() - addr) {
    throw Error(ErrorCode::kOutOfBounds,
                "access [" + HexAddress(addr) + ", +" + std::to_string(len) +
                    ") outside " + std::to_string(bytes_.size()) + " bytes");
  }
}

bool PlatformMemory::MayRead(Domain ctx, std::size_t page) const {
  std::uint32_t tag = owners_[page];
  if (tag == kFree || tag == 0) return true;
  return ctx.is_enclave() && ctx.enclave_id().value == tag;
}

bool PlatformMemory::MayWrite(Domain ctx, std::size_t page) const {
  std::uint32_t tag = owners_[page];
  if (tag == kFree || tag == 0) return ctx.is_untrusted();
  return ctx.is_enclave() && ctx.enclave_id().value == tag;
}

void PlatformMemory::Log(std::string_view event, Domain ctx, Address addr,
                         std::size_t len) {
  trace_.Record("event=" + std::string(event) + " ctx=" + ctx.ToString() +
                " addr=" + HexAddress(addr) + " len=" + std::to_string(len));
}

Bytes PlatformMemory::mem_read(Domain ctx, Address addr, std::size_t len) {
  CheckBounds(addr, len);
  Bytes out(bytes_.begin() + addr, bytes_.begin() + addr + len);
  std::size_t masked = 0;
  Address cursor = addr;
  while (cursor < addr + len) {
    std::size_t page = cursor / kPageSize;
    Address page_end = std::min<Address>((page + 1) * kPageSize, addr + len);
    if (!MayRead(ctx, page)) {
      std::fill(out.begin() + (cursor - addr), out.begin() + (page_end - addr),
                kAbortByte);
      masked += page_end - cursor;
    }
    cursor = page_end;
  }
  if (masked > 0) Log("AbortRead", ctx, addr, masked);
  return out;
}

void PlatformMemory::mem_write(Domain ctx, Address addr, ByteView bytes) {
  CheckBounds(addr, bytes.size());
  Address end = addr + bytes.size();
  Address cursor = addr;
  while (cursor < end) {
    std::size_t page = cursor / kPageSize;
    Address page_end = std::min<Address>((page + 1) * kPageSize, end);
    if (MayWrite(ctx, page)) {
      std::copy(bytes.begin() + (cursor - addr), bytes.begin() + (page_end - addr),
                bytes_.begin() + cursor);
    } else {
      ++access_violations_;
      Log("AccessViolation", ctx, cursor, page_end - cursor);
    }
    cursor = page_end;
  }
}

Bytes PlatformMemory::adversary_read(Address addr, std::size_t len) {
  Log("AdversaryRead", Domain::Untrusted(), addr, len);
  return mem_read(Domain::Untrusted(), addr, len);
}

std::optional<Domain> PlatformMemory::page_owner(std::size_t page_index) const {
  if (page_index >= owners_.size()) {
    throw Error(ErrorCode::kOutOfBounds, "page " + std::to_string(page_index));
  }
  std::uint32_t tag = owners_[page_index];
  if (tag == kFree) return std::nullopt;
  if (tag == 0) return Domain::Untrusted();
  return Domain::Enclave(EnclaveId{tag});
}

Domain PlatformMemory::effective_owner(Address addr) const {
  return page_owner(addr / kPageSize).value_or(Domain::Untrusted());
}

std::vector<Region> PlatformMemory::allocations() const {
  std::vector<Region> out;
  out.reserve(regions_.size());
  for (const auto& [base, region] : regions_) out.push_back(region);
  return out;
}

std::size_t PlatformMemory::free_pages() const {
  return static_cast<std::size_t>(
      std::count(owners_.begin(), owners_.end(), kFree));
}

}  // namespace sgxpart
