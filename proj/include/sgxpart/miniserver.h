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

#ifndef SGXPART_MINISERVER_H_
#define SGXPART_MINISERVER_H_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "sgxpart/bytes.h"
#include "sgxpart/channel.h"
#include "sgxpart/markers.h"
#include "sgxpart/partition.h"
#include "sgxpart/sgx.h"

namespace sgxpart {

using ConnectionId = std::uint32_t;

// Record content types on the simulated wire.
inline constexpr std::uint8_t kRecordHandshake = 0x16;
inline constexpr std::uint8_t kRecordApplication = 0x17;
inline constexpr std::uint8_t kRecordHeartbeat = 0x18;

struct Credential {
  std::string username;
  std::string password;
};

struct ServerConfig {
  PartitionPlan plan;
  bool vulnerable_heartbeat = true;
  std::uint64_t seed = 1;
  // Held in untrusted memory under every scheme.
  std::vector<Credential> credentials;
  Key32 server_private_key{};
  std::size_t memory_pages = 1024;
};

// Plan for `scheme`, three seeded credentials and a seeded private key.
ServerConfig default_config(Scheme scheme, int connections, std::uint64_t seed);

struct HeartbeatRequest {
  Bytes payload;
  std::uint16_t claimed_length = 0;
};

struct SessionContext {
  ConnectionId connection_id = 0;
  Key32 session_key{};
  Bytes handshake_transcript;
  bool established = false;
};

struct ClientOptions {
  bool corrupt_key_share = false;
};

// In-process TLS-like peer. Its state is host-side (a remote machine), so
// nothing it holds is visible in platform memory.
class SimClient {
 public:
  SimClient(ConnectionId id, std::uint64_t seed);

  Bytes hello();
  // Ephemeral X25519 public key || pre-master wrapped to the server key.
  Bytes key_share(ByteView server_nonce, const Key32& server_public);
  bool finish(ByteView server_finished);
  Bytes seal_record(ByteView plaintext);
  // Throws Error(kRecordIntegrityFailure).
  Bytes open_record(ByteView wire);

  ConnectionId id() const { return id_; }
  const Key32& session_key() const { return session_key_; }
  const Key32& pre_master() const { return pre_master_; }
  const Bytes& transcript() const { return transcript_; }
  bool established() const { return established_; }

 private:
  ConnectionId id_;
  Rng rng_;
  Bytes client_nonce_;
  Bytes transcript_;
  Key32 pre_master_{};
  Key32 session_key_{};
  bool established_ = false;
  std::uint64_t send_seq_ = 0;
  std::uint64_t recv_seq_ = 0;
};

struct ServerCounters {
  std::uint64_t enclaves_created = 0;
  std::uint64_t channels_established = 0;
  std::uint64_t epc_pages = 0;
  std::vector<std::uint64_t> entries_per_handshake;
};

// TLS-like server whose code units run in the domains chosen by a partition
// plan. Secrets move between enclaves only over trusted channels; public data
// crosses the enclave boundary through untrusted memory.
class MiniServer {
 public:
  explicit MiniServer(ServerConfig config);
  ~MiniServer();
  MiniServer(const MiniServer&) = delete;
  MiniServer& operator=(const MiniServer&) = delete;

  static std::unique_ptr<MiniServer> start(ServerConfig config);

  SessionContext handshake(ConnectionId id, const ClientOptions& options = {});
  // Application record in, response record out.
  Bytes exchange(ConnectionId id, ByteView record);
  Bytes heartbeat(ConnectionId id, const HeartbeatRequest& request);
  void close(ConnectionId id);
  // Removes every enclave and releases untrusted buffers. Idempotent.
  void shutdown();

  // Seals through the client, exchanges, opens the response.
  Bytes send_app_data(ConnectionId id, ByteView plaintext);
  SimClient& client(ConnectionId id);

  Processor& cpu() { return *cpu_; }
  const PartitionPlan& plan() const { return config_.plan; }
  const ServerConfig& config() const { return config_; }
  const MarkerRegistry& markers() const { return markers_; }
  const ServerCounters& counters() const { return counters_; }
  const Key32& server_public_key() const { return server_public_; }

  // Domain that executes `unit` for connection slot `slot`.
  Domain domain_of(std::string_view unit, int slot) const;
  std::optional<EnclaveId> enclave_for(std::string_view role, int slot) const;
  std::vector<EnclaveId> enclave_ids() const;
  std::size_t channel_count() const { return links_.size(); }
  const Region& credential_region() const { return credentials_; }
  const Region& untrusted_heartbeat_buffer() const { return heartbeat_buffer_; }
  // Page that receives heartbeat payloads in the domain hosting heartbeat.
  Address heartbeat_buffer_for(int slot) const;

 private:
  struct Instance {
    const EnclaveSpec* spec = nullptr;
    EnclaveId id;
    Address secret_base = 0;
    std::optional<Address> heartbeat_page;
    std::vector<int> served;
  };
  struct Link {
    std::string a_role;
    std::string b_role;
    int slot = -1;  // -1 for a shared channel
    TrustedChannel channel;
  };
  struct Session {
    int slot = 0;
    bool established = false;
    std::unique_ptr<SimClient> client;
    Bytes client_nonce;
    Bytes server_nonce;
    Bytes key_share;
    std::uint64_t recv_seq = 0;
    std::uint64_t send_seq = 0;
  };
  enum class Slot { kPrivateKey, kSessionKey, kPreMaster };
  class Exec;

  void BuildEnclave(const EnclaveSpec& spec);
  void ProvisionPrivateKey(Instance& inst);
  void EstablishChannels();

  Instance* SiteOf(std::string_view unit, int slot);
  const Instance* SiteOf(std::string_view unit, int slot) const;
  Address SlotAddress(const Instance& inst, Slot kind, int slot) const;
  Link& FindLink(const std::string& from_role, const std::string& to_role, int slot);

  template <typename Body>
  Bytes Run(std::string_view unit, int slot, ByteView args, Body&& body);
  Bytes Transmit(ByteView message);
  std::uint8_t Dispatch(int slot, ByteView record);
  void Transfer(Instance& from, std::string_view from_unit, Instance& to,
                std::string_view to_unit, Slot kind, int slot, bool wipe_source);
  Instance* FindHost(SecretClass kind, int slot);
  Session& Lookup(ConnectionId id);

  ServerConfig config_;
  std::unique_ptr<Processor> cpu_;
  std::unique_ptr<Driver> driver_;
  Key32 server_public_{};
  Bytes certificate_;
  Region heartbeat_buffer_;
  Region credentials_;
  Region socket_;
  Region channel_buffer_;
  std::vector<Instance> instances_;
  std::vector<Link> links_;
  std::map<ConnectionId, Session> sessions_;
  std::set<ConnectionId> used_ids_;
  std::vector<bool> slot_busy_;
  MarkerRegistry markers_;
  ServerCounters counters_;
  Rng protocol_rng_;
  bool running_ = false;
};

// Client script: one command per line, `#` starts a comment.
//   connect <id> | send <id> <hex> | heartbeat <id> <payload-hex> <claimed-len> | close <id>
// A payload of `-` is empty.
struct ScriptCommand {
  enum class Kind { kConnect, kSend, kHeartbeat, kClose };
  Kind kind = Kind::kConnect;
  ConnectionId id = 0;
  Bytes data;
  std::uint16_t claimed_length = 0;
};

// Throws Error(kParseError) with the offending line number.
std::vector<ScriptCommand> parse_script(std::string_view text);
// Client-visible transcript, one line per command. Command failures are
// reported in-line rather than thrown.
std::vector<std::string> run_script(MiniServer& server,
                                    const std::vector<ScriptCommand>& script);

}  // namespace sgxpart

#endif  // SGXPART_MINISERVER_H_
