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

#include "sgxpart/sgx.h"

#include <algorithm>

#include "sgxpart/crypto.h"
#include "sgxpart/error.h"

namespace sgxpart {
namespace {

constexpr std::size_t kPage = PlatformMemory::kPageSize;
constexpr std::uint64_t kPlatformRngStream = 0x5347585F524E47;  // "SGX_RNG"

Error WrongState(const Enclave& e, std::string_view op) {
  return Error(ErrorCode::kWrongState,
               std::string(op) + " on enclave " + std::to_string(e.id.value) +
                   " in state " + std::string(ToString(e.state)));
}

}  // namespace

std::string_view ToString(EnclaveState state) {
  switch (state) {
    case EnclaveState::kCreated: return "Created";
    case EnclaveState::kInitialized: return "Initialized";
    case EnclaveState::kExecuting: return "Executing";
    case EnclaveState::kInterrupted: return "Interrupted";
    case EnclaveState::kRemoved: return "Removed";
  }
  return "?";
}

void Measurement::Append(const MeasurementRecord& record) {
  log_.push_back(record);
  stale_ = true;
}

const Digest& Measurement::digest() const {
  if (stale_) {
    digest_ = Compute(log_);
    stale_ = false;
  }
  return digest_;
}

Bytes Measurement::Serialize(std::span<const MeasurementRecord> log) {
  Bytes out;
  out.reserve(8 + log.size() * kRecordSize);
  AppendU64(out, log.size());
  for (const auto& r : log) {
    out.push_back(static_cast<std::uint8_t>(r.op));
    AppendU64(out, r.offset);
    sgxpart::Append(out, r.digest);
  }
  return out;
}

Digest Measurement::Compute(std::span<const MeasurementRecord> log) {
  return crypto::Sha256(Serialize(log));
}

Bytes RegisterFile::Serialize() const {
  Bytes out;
  for (std::uint64_t r : gpr) AppendU64(out, r);
  AppendU64(out, rip);
  return out;
}

bool RegisterFile::IsZero() const {
  return rip == 0 &&
         std::all_of(gpr.begin(), gpr.end(), [](std::uint64_t r) { return r == 0; });
}

void AddressCache::Insert(Domain ctx, Address base, std::size_t length) {
  for (const auto& e : entries_) {
    if (e.ctx == ctx && e.base == base && e.length == length) return;
  }
  entries_.push_back({ctx, base, length});
}

void AddressCache::Flush(Address base, std::size_t length) {
  std::erase_if(entries_, [&](const CacheEntry& e) {
    return e.base < base + length && base < e.base + e.length;
  });
}

bool AddressCache::AnyOverlap(Address base, std::size_t length) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const CacheEntry& e) {
    return e.base < base + length && base < e.base + e.length;
  });
}

Bytes Report::Serialize() const {
  Bytes out;
  Append(out, identity);
  Append(out, user_data);
  Append(out, mac);
  return out;
}

Report Report::Parse(ByteView bytes) {
  if (bytes.size() != 32 + 64 + 32) {
    throw Error(ErrorCode::kParseError, "report must be 128 bytes");
  }
  Report r;
  std::copy_n(bytes.begin(), 32, r.identity.begin());
  std::copy_n(bytes.begin() + 32, 64, r.user_data.begin());
  std::copy_n(bytes.begin() + 96, 32, r.mac.begin());
  return r;
}

const EpcmEntry* Enclave::FindPage(std::size_t page_index) const {
  Address addr = range.base + page_index * kPage;
  for (const auto& entry : pages) {
    if (entry.valid && entry.page_addr == addr) return &entry;
  }
  return nullptr;
}

Processor::Processor(PlatformOptions options)
    : memory_(options), rng_(options.seed, kPlatformRngStream) {}

Enclave& Processor::Lookup(EnclaveId id) {
  auto it = enclaves_.find(id);
  if (it == enclaves_.end()) {
    throw Error(ErrorCode::kNoSuchEnclave, "enclave " + std::to_string(id.value));
  }
  return it->second;
}

const Enclave& Processor::enclave(EnclaveId id) const {
  auto it = enclaves_.find(id);
  if (it == enclaves_.end()) {
    throw Error(ErrorCode::kNoSuchEnclave, "enclave " + std::to_string(id.value));
  }
  return it->second;
}

std::vector<EnclaveId> Processor::enclave_ids() const {
  std::vector<EnclaveId> ids;
  for (const auto& [id, e] : enclaves_) ids.push_back(id);
  return ids;
}

std::size_t Processor::live_enclave_count() const {
  return static_cast<std::size_t>(
      std::count_if(enclaves_.begin(), enclaves_.end(), [](const auto& kv) {
        return kv.second.state != EnclaveState::kRemoved;
      }));
}

std::uint64_t Processor::total_entries() const {
  std::uint64_t total = 0;
  for (const auto& [id, e] : enclaves_) total += e.entry_count;
  return total;
}

bool Processor::is_executing(const ExecutionHandle& handle) const {
  return current_ && current_->enclave == handle.enclave &&
         current_->epoch == handle.epoch;
}

Enclave& Processor::Executing(const ExecutionHandle& handle, ErrorCode code) {
  if (!is_executing(handle)) {
    throw Error(code, "no live execution of enclave " +
                          std::to_string(handle.enclave.value));
  }
  return Lookup(handle.enclave);
}

void Processor::SgxEvent(std::string_view name, const Enclave& e,
                         std::string extra) {
  std::string line = std::string(name) + " id=" + std::to_string(e.id.value);
  if (!extra.empty()) line += " " + extra;
  trace().Record(std::move(line));
}

void Processor::RecordTranslation(Domain ctx, Address addr, std::size_t len) {
  if (len == 0) return;
  Address first = addr / kPage * kPage;
  Address last = (addr + len + kPage - 1) / kPage * kPage;
  cache_.Insert(ctx, first, last - first);
}

Address Processor::EnsureMailbox(std::size_t len) {
  std::size_t pages = std::max<std::size_t>(1, (len + kPage - 1) / kPage);
  if (!mailbox_ || mailbox_->length < pages * kPage) {
    if (mailbox_) memory_.release(*mailbox_);
    mailbox_ = memory_.alloc(Domain::Untrusted(), pages);
  }
  return mailbox_->base;
}

ExecutionHandle Processor::eenter(EnclaveId id, std::string_view entry_fn,
                                  ByteView args) {
  Enclave& e = Lookup(id);
  if (e.state != EnclaveState::kInitialized) throw WrongState(e, "EENTER");
  if (current_) {
    throw Error(ErrorCode::kWrongState,
                "EENTER while enclave " +
                    std::to_string(current_->enclave.value) + " is executing");
  }
  const EpcmEntry* target = nullptr;
  for (const auto& page : e.pages) {
    if (page.valid && page.kind == PageKind::kCode &&
        std::find(page.entry_points.begin(), page.entry_points.end(),
                  entry_fn) != page.entry_points.end()) {
      target = &page;
      break;
    }
  }
  if (target == nullptr) {
    throw Error(ErrorCode::kNoSuchEntryPoint,
                "'" + std::string(entry_fn) + "' in enclave " +
                    std::to_string(id.value));
  }
  cache_.Flush(e.range.base, e.range.length);
  e.state = EnclaveState::kExecuting;
  e.entry_args.assign(args.begin(), args.end());
  e.entry_point = std::string(entry_fn);
  ++e.entry_count;
  registers_.rip = target->page_addr;
  current_ = ExecutionHandle{id, ++epoch_};
  SgxEvent("EENTER", e, "entry=" + e.entry_point);
  return *current_;
}

Bytes Processor::eexit(const ExecutionHandle& handle, ByteView retval) {
  if (!is_executing(handle)) {
    throw Error(ErrorCode::kWrongState,
                "EEXIT without a live entry into enclave " +
                    std::to_string(handle.enclave.value));
  }
  Enclave& e = Lookup(handle.enclave);
  Address box = EnsureMailbox(retval.size());
  registers_ = RegisterFile{};
  cache_.Flush(e.range.base, e.range.length);
  e.state = EnclaveState::kInitialized;
  e.entry_args.clear();
  ++e.exit_count;
  current_.reset();
  SgxEvent("EEXIT", e, "len=" + std::to_string(retval.size()));
  // Back in untrusted mode: marshal the return value through untrusted memory.
  memory_.mem_write(Domain::Untrusted(), box, retval);
  return memory_.mem_read(Domain::Untrusted(), box, retval.size());
}

void Processor::aex(const ExecutionHandle& handle, InterruptKind event) {
  if (!is_executing(handle)) {
    throw Error(ErrorCode::kWrongState,
                "AEX without a live entry into enclave " +
                    std::to_string(handle.enclave.value));
  }
  Enclave& e = Lookup(handle.enclave);
  e.ssa = registers_;
  registers_ = RegisterFile{};
  cache_.Flush(e.range.base, e.range.length);
  e.state = EnclaveState::kInterrupted;
  ++e.aex_count;
  current_.reset();
  SgxEvent("AEX", e, "event=" + std::to_string(static_cast<int>(event)) +
                         " rip=" + HexAddress(e.ssa.rip));
}

ExecutionHandle Processor::eresume(EnclaveId id) {
  Enclave& e = Lookup(id);
  if (e.state != EnclaveState::kInterrupted) throw WrongState(e, "ERESUME");
  if (current_) {
    throw Error(ErrorCode::kWrongState,
                "ERESUME while enclave " +
                    std::to_string(current_->enclave.value) + " is executing");
  }
  cache_.Flush(e.range.base, e.range.length);
  registers_ = e.ssa;
  e.state = EnclaveState::kExecuting;
  current_ = ExecutionHandle{id, ++epoch_};
  SgxEvent("ERESUME", e, "rip=" + HexAddress(registers_.rip));
  return *current_;
}

Key32 Processor::egetkey(const ExecutionHandle& handle, KeyPolicy policy) {
  Enclave& e = Executing(handle, ErrorCode::kNotInEnclave);
  Bytes context(e.identity->begin(), e.identity->end());
  context.push_back(static_cast<std::uint8_t>(policy));
  return crypto::DeriveKey(memory_.platform_secret(), "EGETKEY", context);
}

SealedBlob Processor::seal(const ExecutionHandle& handle, ByteView plaintext) {
  Key32 key = egetkey(handle);
  const Enclave& e = Lookup(handle.enclave);
  SealedBlob blob;
  blob.identity = *e.identity;
  Bytes nonce = random_bytes(blob.nonce.size());
  std::copy(nonce.begin(), nonce.end(), blob.nonce.begin());
  blob.sealed = crypto::AeadSeal(key, blob.nonce, blob.identity, plaintext);
  return blob;
}

Bytes Processor::unseal(const ExecutionHandle& handle, const SealedBlob& blob) {
  Key32 key = egetkey(handle);
  const Enclave& e = Lookup(handle.enclave);
  if (blob.identity != *e.identity) {
    throw Error(ErrorCode::kWrongEnclaveIdentity,
                "blob sealed to a different enclave identity");
  }
  auto plain = crypto::AeadOpen(key, blob.nonce, blob.identity, blob.sealed);
  if (!plain) {
    throw Error(ErrorCode::kSealIntegrityFailure, "sealed blob failed to verify");
  }
  return *plain;
}

namespace {

Digest ReportMac(const Key32& platform_secret, const Report& r) {
  Key32 report_key = crypto::DeriveKey(platform_secret, "REPORT");
  Bytes body(r.identity.begin(), r.identity.end());
  Append(body, r.user_data);
  return crypto::HmacSha256(report_key, body);
}

}  // namespace

Report Processor::ereport(const ExecutionHandle& handle,
                          std::span<const std::uint8_t, 64> user_data) {
  Enclave& e = Executing(handle, ErrorCode::kNotInEnclave);
  Report r;
  r.identity = *e.identity;
  std::copy(user_data.begin(), user_data.end(), r.user_data.begin());
  r.mac = ReportMac(memory_.platform_secret(), r);
  SgxEvent("EREPORT", e);
  return r;
}

bool Processor::verify_report(const ExecutionHandle& handle, const Report& report) {
  Executing(handle, ErrorCode::kNotInEnclave);
  Digest expected = ReportMac(memory_.platform_secret(), report);
  return crypto::ConstantTimeEqual(expected, report.mac);
}

Key32 Processor::derive_pairwise_key(const ExecutionHandle& handle,
                                     const Digest& identity_a,
                                     const Digest& identity_b,
                                     ByteView transcript) {
  Enclave& e = Executing(handle, ErrorCode::kNotInEnclave);
  if (*e.identity != identity_a && *e.identity != identity_b) {
    throw Error(ErrorCode::kNotEndpoint,
                "caller identity matches neither channel endpoint");
  }
  Bytes context(identity_a.begin(), identity_a.end());
  Append(context, identity_b);
  Append(context, transcript);
  return crypto::DeriveKey(memory_.platform_secret(), "CHANNEL", context);
}

Bytes Processor::read(const ExecutionHandle& handle, Address addr, std::size_t len) {
  Enclave& e = Executing(handle, ErrorCode::kNotInEnclave);
  Domain ctx = Domain::Enclave(e.id);
  Bytes out = memory_.mem_read(ctx, addr, len);
  RecordTranslation(ctx, addr, len);
  return out;
}

void Processor::write(const ExecutionHandle& handle, Address addr, ByteView bytes) {
  Enclave& e = Executing(handle, ErrorCode::kNotInEnclave);
  Domain ctx = Domain::Enclave(e.id);
  memory_.CheckBounds(addr, bytes.size());
  Address end = addr + bytes.size();
  Address cursor = addr;
  while (cursor < end) {
    Address page_base = cursor / kPage * kPage;
    Address page_end = std::min<Address>(page_base + kPage, end);
    ByteView chunk = bytes.subspan(cursor - addr, page_end - cursor);
    if (e.range.contains(page_base)) {
      const EpcmEntry* entry = e.FindPage((page_base - e.range.base) / kPage);
      if (entry == nullptr || !entry->perms.write) {
        ++memory_.access_violations_;
        memory_.Log("AccessViolation", ctx, cursor, chunk.size());
        cursor = page_end;
        continue;
      }
    }
    memory_.mem_write(ctx, cursor, chunk);
    cursor = page_end;
  }
  RecordTranslation(ctx, addr, bytes.size());
}

RegisterFile& Processor::registers(const ExecutionHandle& handle) {
  Executing(handle, ErrorCode::kNotInEnclave);
  return registers_;
}

const Bytes& Processor::entry_args(const ExecutionHandle& handle) {
  return Executing(handle, ErrorCode::kNotInEnclave).entry_args;
}

Bytes Processor::untrusted_read(Address addr, std::size_t len) {
  Bytes out = memory_.mem_read(Domain::Untrusted(), addr, len);
  RecordTranslation(Domain::Untrusted(), addr, len);
  return out;
}

void Processor::untrusted_write(Address addr, ByteView bytes) {
  memory_.mem_write(Domain::Untrusted(), addr, bytes);
  RecordTranslation(Domain::Untrusted(), addr, bytes.size());
}

void Processor::set_untrusted_registers(const RegisterFile& regs) {
  if (current_) {
    throw Error(ErrorCode::kWrongState, "processor is in enclave mode");
  }
  registers_ = regs;
}

EnclaveId Driver::ecreate(std::size_t pages) {
  if (pages == 0) {
    throw Error(ErrorCode::kInvalidArgument, "ECREATE with zero pages");
  }
  EnclaveId id{cpu_.next_id_};
  Region range = cpu_.memory_.alloc(Domain::Enclave(id), pages);
  ++cpu_.next_id_;
  Enclave e;
  e.id = id;
  e.range = range;
  e.measurement.Append({MeasurementOp::kCreate, pages, Digest{}});
  auto [it, inserted] = cpu_.enclaves_.emplace(id, std::move(e));
  cpu_.SgxEvent("ECREATE", it->second,
                "base=" + HexAddress(range.base) + " pages=" + std::to_string(pages));
  return id;
}

void Driver::eadd(EnclaveId id, std::size_t page_index, ByteView content,
                  const EaddOptions& options) {
  Enclave& e = cpu_.Lookup(id);
  if (e.state != EnclaveState::kCreated) throw WrongState(e, "EADD");
  if (page_index >= e.page_count()) {
    throw Error(ErrorCode::kOutOfRange,
                "page " + std::to_string(page_index) + " outside enclave range of " +
                    std::to_string(e.page_count()));
  }
  if (content.size() != kPage) {
    throw Error(ErrorCode::kInvalidArgument, "EADD content must be one page");
  }
  if (e.FindPage(page_index) != nullptr) {
    throw Error(ErrorCode::kDuplicatePage, "page " + std::to_string(page_index));
  }
  if (options.kind != PageKind::kCode && !options.entry_points.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "entry points on a data page");
  }
  Address addr = e.range.base + page_index * kPage;
  cpu_.memory_.mem_write(Domain::Enclave(id), addr, content);

  EpcmEntry entry;
  entry.page_addr = addr;
  entry.perms = options.perms;
  entry.valid = true;
  entry.kind = options.kind;
  entry.entry_points = options.entry_points;
  e.pages.push_back(entry);

  Bytes attrs{options.perms.bits(), static_cast<std::uint8_t>(options.kind)};
  for (const auto& name : options.entry_points) {
    AppendU64(attrs, name.size());
    Append(attrs, ToBytes(name));
  }
  e.measurement.Append({MeasurementOp::kAdd, page_index, crypto::Sha256(attrs)});
  cpu_.SgxEvent("EADD", e, "page=" + std::to_string(page_index));
}

void Driver::eextend(EnclaveId id, std::size_t page_index) {
  Enclave& e = cpu_.Lookup(id);
  if (e.state != EnclaveState::kCreated) throw WrongState(e, "EEXTEND");
  auto it = std::find_if(e.pages.begin(), e.pages.end(), [&](const EpcmEntry& p) {
    return p.valid && p.page_addr == e.range.base + page_index * kPage;
  });
  if (it == e.pages.end()) {
    throw Error(ErrorCode::kNoSuchPage, "page " + std::to_string(page_index));
  }
  Bytes content = cpu_.memory_.mem_read(Domain::Enclave(id), it->page_addr, kPage);
  e.measurement.Append({MeasurementOp::kExtend, page_index, crypto::Sha256(content)});
  it->extended = true;
  cpu_.SgxEvent("EEXTEND", e, "page=" + std::to_string(page_index));
}

Digest Driver::einit(EnclaveId id) {
  Enclave& e = cpu_.Lookup(id);
  if (e.state != EnclaveState::kCreated) throw WrongState(e, "EINIT");
  bool has_code = std::any_of(e.pages.begin(), e.pages.end(), [](const EpcmEntry& p) {
    return p.valid && p.kind == PageKind::kCode && p.extended;
  });
  if (!has_code) {
    throw Error(ErrorCode::kEmptyEnclave,
                "enclave " + std::to_string(id.value) + " has no measured code page");
  }
  auto unextended = std::count_if(e.pages.begin(), e.pages.end(),
                                  [](const EpcmEntry& p) { return !p.extended; });
  if (unextended > 0) {
    cpu_.SgxEvent("EINIT_WARN", e, "unextended=" + std::to_string(unextended));
  }
  e.identity = e.measurement.digest();
  e.state = EnclaveState::kInitialized;
  cpu_.SgxEvent("EINIT", e, "mrenclave=" + ToHex(*e.identity).substr(0, 16));
  return *e.identity;
}

void Driver::eremove(EnclaveId id) {
  Enclave& e = cpu_.Lookup(id);
  if (e.state != EnclaveState::kCreated && e.state != EnclaveState::kInitialized) {
    throw WrongState(e, "EREMOVE");
  }
  cpu_.memory_.release(e.range);
  cpu_.cache_.Flush(e.range.base, e.range.length);
  for (auto& page : e.pages) page.valid = false;
  e.ssa = RegisterFile{};
  e.state = EnclaveState::kRemoved;
  cpu_.SgxEvent("EREMOVE", e);
}

EnclaveCall::EnclaveCall(Processor& cpu, EnclaveId id, std::string_view entry_fn,
                         ByteView args)
    : cpu_(cpu), handle_(cpu.eenter(id, entry_fn, args)) {}

EnclaveCall::~EnclaveCall() {
  if (open_ && cpu_.is_executing(handle_)) {
    try {
      cpu_.eexit(handle_, {});
    } catch (...) {
    }
  }
}

Bytes EnclaveCall::Exit(ByteView retval) {
  open_ = false;
  return cpu_.eexit(handle_, retval);
}

}  // namespace sgxpart
