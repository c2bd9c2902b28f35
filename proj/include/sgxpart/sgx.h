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

#ifndef SGXPART_SGX_H_
#define SGXPART_SGX_H_

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgxpart/bytes.h"
#include "sgxpart/error.h"
#include "sgxpart/platform.h"

namespace sgxpart {

// Entry point every enclave built by the loader exposes for runtime plumbing
// (secret provisioning, attestation handshakes, session teardown).
inline constexpr std::string_view kRuntimeEntry = "enclave_runtime";

enum class EnclaveState { kCreated, kInitialized, kExecuting, kInterrupted, kRemoved };
std::string_view ToString(EnclaveState state);

enum class PageKind : std::uint8_t { kCode = 1, kData = 2 };

struct PagePerms {
  bool read = true;
  bool write = false;
  bool execute = false;

  std::uint8_t bits() const {
    return static_cast<std::uint8_t>((read ? 1 : 0) | (write ? 2 : 0) |
                                     (execute ? 4 : 0));
  }
  static PagePerms ReadExecute() { return {true, false, true}; }
  static PagePerms ReadWrite() { return {true, true, false}; }
};

struct EpcmEntry {
  Address page_addr = 0;
  PagePerms perms;
  bool valid = false;
  PageKind kind = PageKind::kData;
  // Code units that EENTER may target on this page.
  std::vector<std::string> entry_points;
  bool extended = false;
};

enum class MeasurementOp : std::uint8_t { kCreate = 1, kAdd = 2, kExtend = 3 };

struct MeasurementRecord {
  MeasurementOp op;
  std::uint64_t offset;  // page index; range size in pages for kCreate
  Digest digest{};

  friend bool operator==(const MeasurementRecord&, const MeasurementRecord&) = default;
};

// Enclave measurement: SHA-256 over the serialized build log. Each record is
// op (1 byte) || offset (8 bytes, big-endian) || digest (32 bytes), preceded
// by the record count.
class Measurement {
 public:
  static constexpr std::size_t kRecordSize = 41;

  void Append(const MeasurementRecord& record);
  const Digest& digest() const;
  const std::vector<MeasurementRecord>& log() const { return log_; }

  static Bytes Serialize(std::span<const MeasurementRecord> log);
  static Digest Compute(std::span<const MeasurementRecord> log);

 private:
  std::vector<MeasurementRecord> log_;
  // Recomputed on demand after the log grows.
  mutable Digest digest_ = Compute({});
  mutable bool stale_ = false;
};

struct RegisterFile {
  std::array<std::uint64_t, 16> gpr{};
  std::uint64_t rip = 0;  // resume ("faulting") address

  Bytes Serialize() const;
  bool IsZero() const;
  friend bool operator==(const RegisterFile&, const RegisterFile&) = default;
};

struct CacheEntry {
  Domain ctx;
  Address base;
  std::size_t length;
};

// Cached address translations. Flushed over an enclave's range whenever that
// enclave is entered or exited.
class AddressCache {
 public:
  void Insert(Domain ctx, Address base, std::size_t length);
  void Flush(Address base, std::size_t length);
  bool AnyOverlap(Address base, std::size_t length) const;
  const std::vector<CacheEntry>& entries() const { return entries_; }

 private:
  std::vector<CacheEntry> entries_;
};

struct Report {
  Digest identity{};
  std::array<std::uint8_t, 64> user_data{};
  Digest mac{};

  Bytes Serialize() const;
  static Report Parse(ByteView bytes);
};

struct SealedBlob {
  Digest identity{};
  std::array<std::uint8_t, 16> nonce{};
  Bytes sealed;  // ciphertext || tag
};

enum class KeyPolicy : std::uint8_t { kByIdentity = 1 };
enum class InterruptKind { kTimer, kPageFault, kException };

struct ExecutionHandle {
  EnclaveId enclave;
  std::uint64_t epoch = 0;
};

struct Enclave {
  EnclaveId id;
  Region range;
  EnclaveState state = EnclaveState::kCreated;
  Measurement measurement;
  std::optional<Digest> identity;  // fixed by EINIT
  std::vector<EpcmEntry> pages;
  RegisterFile ssa;
  Bytes entry_args;
  std::string entry_point;
  std::uint64_t entry_count = 0;
  std::uint64_t exit_count = 0;
  std::uint64_t aex_count = 0;

  const EpcmEntry* FindPage(std::size_t page_index) const;
  std::size_t page_count() const { return range.length / PlatformMemory::kPageSize; }
};

// One logical processor plus its EPC. Exposes the ring-3 instructions; the
// ring-0 build instructions live on Driver. At most one enclave executes at a
// time and EENTER is only possible from untrusted mode.
class Processor {
 public:
  explicit Processor(PlatformOptions options = {});

  Processor(const Processor&) = delete;
  Processor& operator=(const Processor&) = delete;

  PlatformMemory& memory() { return memory_; }
  const PlatformMemory& memory() const { return memory_; }
  Trace& trace() { return memory_.trace(); }

  ExecutionHandle eenter(EnclaveId id, std::string_view entry_fn,
                         ByteView args = {});
  // Copies retval into the untrusted exit mailbox and returns what untrusted
  // code reads back from it.
  Bytes eexit(const ExecutionHandle& handle, ByteView retval);
  void aex(const ExecutionHandle& handle, InterruptKind event);
  ExecutionHandle eresume(EnclaveId id);

  Key32 egetkey(const ExecutionHandle& handle,
                KeyPolicy policy = KeyPolicy::kByIdentity);
  SealedBlob seal(const ExecutionHandle& handle, ByteView plaintext);
  Bytes unseal(const ExecutionHandle& handle, const SealedBlob& blob);
  Report ereport(const ExecutionHandle& handle,
                 std::span<const std::uint8_t, 64> user_data);
  bool verify_report(const ExecutionHandle& handle, const Report& report);
  // Key shared by two enclaves of this platform, bound to both identities and
  // the handshake transcript. The caller must be one of the two identities.
  Key32 derive_pairwise_key(const ExecutionHandle& handle,
                            const Digest& identity_a, const Digest& identity_b,
                            ByteView transcript);

  // Memory access from inside the enclave named by the handle. Writes to own
  // pages additionally require the EPCM write permission.
  Bytes read(const ExecutionHandle& handle, Address addr, std::size_t len);
  void write(const ExecutionHandle& handle, Address addr, ByteView bytes);
  RegisterFile& registers(const ExecutionHandle& handle);
  const Bytes& entry_args(const ExecutionHandle& handle);

  Bytes untrusted_read(Address addr, std::size_t len);
  void untrusted_write(Address addr, ByteView bytes);
  // What untrusted software observes in the register file right now.
  RegisterFile visible_registers() const { return registers_; }
  void set_untrusted_registers(const RegisterFile& regs);

  // Platform entropy (RDRAND stand-in), deterministic from the seed.
  Bytes random_bytes(std::size_t n) { return rng_.NextBytes(n); }
  std::uint64_t next_object_id() { return ++object_ids_; }

  const Enclave& enclave(EnclaveId id) const;
  std::vector<EnclaveId> enclave_ids() const;
  std::size_t live_enclave_count() const;
  std::uint64_t total_entries() const;
  const AddressCache& address_cache() const { return cache_; }
  std::optional<ExecutionHandle> current() const { return current_; }
  bool is_executing(const ExecutionHandle& handle) const;

 private:
  friend class Driver;

  Enclave& Lookup(EnclaveId id);
  // The enclave behind a live handle; throws `code` otherwise.
  Enclave& Executing(const ExecutionHandle& handle, ErrorCode code);
  void SgxEvent(std::string_view name, const Enclave& e, std::string extra = {});
  void RecordTranslation(Domain ctx, Address addr, std::size_t len);
  Address EnsureMailbox(std::size_t len);

  PlatformMemory memory_;
  std::map<EnclaveId, Enclave> enclaves_;
  std::uint32_t next_id_ = 1;
  RegisterFile registers_;
  AddressCache cache_;
  std::optional<ExecutionHandle> current_;
  std::uint64_t epoch_ = 0;
  std::optional<Region> mailbox_;
  Rng rng_;
  std::uint64_t object_ids_ = 0;
};

struct EaddOptions {
  PageKind kind = PageKind::kData;
  PagePerms perms = PagePerms::ReadWrite();
  std::vector<std::string> entry_points;
};

// Ring-0 facade used by the privileged loader.
class Driver {
 public:
  explicit Driver(Processor& cpu) : cpu_(cpu) {}

  EnclaveId ecreate(std::size_t pages);
  void eadd(EnclaveId id, std::size_t page_index, ByteView content,
            const EaddOptions& options);
  void eextend(EnclaveId id, std::size_t page_index);
  Digest einit(EnclaveId id);
  void eremove(EnclaveId id);

 private:
  Processor& cpu_;
};

// Scoped EENTER/EEXIT pair. Exits on destruction unless Exit() ran first or
// the enclave is no longer executing under this handle.
class EnclaveCall {
 public:
  EnclaveCall(Processor& cpu, EnclaveId id, std::string_view entry_fn,
              ByteView args = {});
  ~EnclaveCall();
  EnclaveCall(const EnclaveCall&) = delete;
  EnclaveCall& operator=(const EnclaveCall&) = delete;

  const ExecutionHandle& handle() const { return handle_; }
  Bytes Exit(ByteView retval = {});

 private:
  Processor& cpu_;
  ExecutionHandle handle_;
  bool open_ = true;
};

}  // namespace sgxpart

#endif  // SGXPART_SGX_H_
