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

#include "sgxpart/miniserver.h"

#include <algorithm>
#include <sstream>
#include <utility>

#include "sgxpart/crypto.h"
#include "sgxpart/error.h"

namespace sgxpart {
namespace {

constexpr std::size_t kPage = PlatformMemory::kPageSize;
constexpr std::size_t kSlotSize = 64;
// Slot layout: 8-byte marker (or zero header) followed by a 32-byte value.
constexpr std::size_t kSlotPayload = kMarkerSize + 32;
constexpr std::size_t kQuarter = kPage / kWeightPerCodePage;
constexpr std::size_t kSocketPages = 17;  // one maximal record plus header
constexpr std::size_t kCredentialEntry = 64;

constexpr std::uint64_t kClientStream = 0x434C49454E540000ULL;
constexpr std::uint64_t kProtocolStream = 0x50524F544F434F4CULL;
constexpr std::uint64_t kConfigStream = 0x434F4E4649470000ULL;

enum Op : std::uint8_t { kHello = 1, kFinish = 2, kUnwrap = 3, kDerive = 4 };

Key32 ToKey(ByteView b) {
  Key32 k{};
  std::copy_n(b.begin(), k.size(), k.begin());
  return k;
}

Bytes Concat(std::initializer_list<ByteView> parts) {
  Bytes out;
  for (ByteView p : parts) Append(out, p);
  return out;
}

// Deterministic stand-in for a unit's machine code.
Bytes CodePage(const std::vector<std::pair<std::string, int>>& quarters) {
  Bytes page(kPage, 0);
  for (std::size_t q = 0; q < quarters.size(); ++q) {
    const auto& [name, part] = quarters[q];
    Bytes text = ToBytes("unit:" + name + "#" + std::to_string(part) + ";");
    for (std::size_t i = 0; i < kQuarter; ++i) page[q * kQuarter + i] = text[i % text.size()];
  }
  return page;
}

Bytes ServerFinished(const Key32& session_key, ByteView transcript) {
  Bytes msg = ToBytes("server finished");
  Append(msg, transcript);
  Digest mac = crypto::HmacSha256(session_key, msg);
  return Bytes(mac.begin(), mac.end());
}

Bytes RecordAad(std::string_view dir) { return ToBytes(std::string("app-") + std::string(dir)); }

Bytes SealRecord(const Key32& session_key, std::string_view dir, std::uint64_t seq,
                 ByteView plaintext) {
  Key32 k = crypto::DeriveKey(session_key, dir);
  Bytes nonce;
  AppendU64(nonce, seq);
  Bytes wire = nonce;
  Append(wire, crypto::AeadSeal(k, nonce, RecordAad(dir), plaintext));
  return wire;
}

std::optional<Bytes> OpenRecord(const Key32& session_key, std::string_view dir,
                                ByteView wire, std::uint64_t* seq) {
  if (wire.size() < 8 + crypto::kTagSize) return std::nullopt;
  Key32 k = crypto::DeriveKey(session_key, dir);
  *seq = ReadU64(wire);
  return crypto::AeadOpen(k, wire.first(8), RecordAad(dir), wire.subspan(8));
}

}  // namespace

ServerConfig default_config(Scheme scheme, int connections, std::uint64_t seed) {
  ServerConfig c;
  c.plan = plan(scheme, connections);
  c.seed = seed;
  Rng rng(seed, kConfigStream);
  c.server_private_key = rng.NextKey();
  for (const char* user : {"alice", "bob", "carol"}) {
    c.credentials.push_back({user, ToHex(rng.NextBytes(6))});
  }
  return c;
}

// ---------------------------------------------------------------- SimClient

SimClient::SimClient(ConnectionId id, std::uint64_t seed)
    : id_(id), rng_(seed, kClientStream + id) {}

Bytes SimClient::hello() {
  client_nonce_ = rng_.NextBytes(32);
  transcript_ = client_nonce_;
  return client_nonce_;
}

Bytes SimClient::key_share(ByteView server_nonce, const Key32& server_public) {
  Append(transcript_, server_nonce);
  pre_master_ = rng_.NextKey();
  Key32 eph = rng_.NextKey();
  Key32 eph_pub = crypto::X25519PublicKey(eph);
  Key32 shared = crypto::X25519Shared(eph, server_public);
  Key32 wrap = crypto::DeriveKey(shared, "key-share", Concat({eph_pub, server_public}));
  Bytes nonces = Concat({client_nonce_, server_nonce});
  Bytes share(eph_pub.begin(), eph_pub.end());
  Append(share, crypto::AeadSeal(wrap, ByteView(client_nonce_).first(16), nonces, pre_master_));
  session_key_ = crypto::DeriveKey(pre_master_, "session key", nonces);
  Append(transcript_, share);
  return share;
}

bool SimClient::finish(ByteView server_finished) {
  established_ = crypto::ConstantTimeEqual(server_finished,
                                           ServerFinished(session_key_, transcript_));
  return established_;
}

Bytes SimClient::seal_record(ByteView plaintext) {
  return SealRecord(session_key_, "c2s", ++send_seq_, plaintext);
}

Bytes SimClient::open_record(ByteView wire) {
  std::uint64_t seq = 0;
  auto pt = OpenRecord(session_key_, "s2c", wire, &seq);
  if (!pt || seq <= recv_seq_) {
    throw Error(ErrorCode::kRecordIntegrityFailure, "client rejected server record");
  }
  recv_seq_ = seq;
  return *pt;
}

// ---------------------------------------------------------------- Exec

// Memory view of the code unit currently running.
class MiniServer::Exec {
 public:
  Exec(Processor& cpu, const Instance* site, std::optional<ExecutionHandle> handle)
      : cpu_(cpu), site_(site), handle_(handle) {}

  Bytes read(Address addr, std::size_t len) {
    return handle_ ? cpu_.read(*handle_, addr, len) : cpu_.untrusted_read(addr, len);
  }
  void write(Address addr, ByteView bytes) {
    if (handle_) {
      cpu_.write(*handle_, addr, bytes);
    } else {
      cpu_.untrusted_write(addr, bytes);
    }
  }
  const Instance* site() const { return site_; }
  const ExecutionHandle& handle() const { return *handle_; }

 private:
  Processor& cpu_;
  const Instance* site_;
  std::optional<ExecutionHandle> handle_;
};

namespace {

template <typename Exec, typename Body>
Bytes RunIn(Processor& cpu, const auto* site, std::string_view unit, ByteView args,
            Body&& body) {
  if (site == nullptr) {
    Exec x(cpu, nullptr, std::nullopt);
    return body(x, args);
  }
  EnclaveCall call(cpu, site->id, unit, args);
  Exec x(cpu, site, call.handle());
  Bytes in = cpu.entry_args(call.handle());
  Bytes out = body(x, ByteView(in));
  return call.Exit(out);
}

}  // namespace

template <typename Body>
Bytes MiniServer::Run(std::string_view unit, int slot, ByteView args, Body&& body) {
  return RunIn<Exec>(*cpu_, SiteOf(unit, slot), unit, args, std::forward<Body>(body));
}

// ---------------------------------------------------------------- setup

MiniServer::MiniServer(ServerConfig config)
    : config_(std::move(config)), protocol_rng_(config_.seed, kProtocolStream) {
  validate(config_.plan);
  cpu_ = std::make_unique<Processor>(
      PlatformOptions{config_.memory_pages, config_.seed});
  driver_ = std::make_unique<Driver>(*cpu_);
  server_public_ = crypto::X25519PublicKey(config_.server_private_key);
  certificate_ = ToBytes("CERT");
  Append(certificate_, server_public_);
  Digest check = crypto::Sha256(certificate_);
  certificate_.insert(certificate_.end(), check.begin(), check.begin() + 8);

  // Fixed untrusted layout: the heartbeat buffer sits directly below the
  // credential store.
  PlatformMemory& mem = cpu_->memory();
  heartbeat_buffer_ = mem.alloc(Domain::Untrusted(), 1);
  credentials_ = mem.alloc(Domain::Untrusted(), 1);
  socket_ = mem.alloc(Domain::Untrusted(), kSocketPages);
  channel_buffer_ = mem.alloc(Domain::Untrusted(), 1);

  if (config_.credentials.size() * kCredentialEntry > kPage) {
    throw Error(ErrorCode::kInvalidArgument, "credential store exceeds one page");
  }
  for (std::size_t i = 0; i < config_.credentials.size(); ++i) {
    const Credential& c = config_.credentials[i];
    Marker m = MakeMarker(SecretClass::kCredentials, static_cast<std::uint32_t>(i + 1));
    markers_.Add(m);
    Bytes entry(m.begin(), m.end());
    Append(entry, ToBytes(c.username));
    entry.push_back(0);
    Append(entry, ToBytes(c.password));
    entry.push_back(0);
    if (entry.size() > kCredentialEntry) {
      throw Error(ErrorCode::kInvalidArgument, "credential too long: " + c.username);
    }
    cpu_->untrusted_write(credentials_.base + i * kCredentialEntry, entry);
  }

  slot_busy_.assign(static_cast<std::size_t>(config_.plan.connections), false);
  instances_.reserve(config_.plan.enclaves.size());
  for (const EnclaveSpec& spec : config_.plan.enclaves) BuildEnclave(spec);
  markers_.Add(MakeMarker(SecretClass::kPrivateKey, 1));
  for (Instance& inst : instances_) {
    if (inst.spec->hosts(SecretClass::kPrivateKey)) ProvisionPrivateKey(inst);
  }
  EstablishChannels();
  running_ = true;
}

std::unique_ptr<MiniServer> MiniServer::start(ServerConfig config) {
  return std::make_unique<MiniServer>(std::move(config));
}

MiniServer::~MiniServer() {
  try {
    shutdown();
  } catch (...) {
  }
}

void MiniServer::BuildEnclave(const EnclaveSpec& spec) {
  Instance inst;
  inst.spec = &spec;
  if (spec.connection) {
    inst.served = {*spec.connection};
  } else {
    for (int s = 0; s < config_.plan.connections; ++s) inst.served.push_back(s);
  }

  // Units are packed a quarter page per weight point; a unit's entry point
  // lives on the page where its code starts.
  std::vector<std::vector<std::pair<std::string, int>>> code(1);
  std::vector<std::vector<std::string>> entries(1);
  entries[0].push_back(std::string(kRuntimeEntry));
  for (const std::string& name : spec.units) {
    int weight = config_.plan.unit(name).weight;
    for (int part = 0; part < weight; ++part) {
      if (code.back().size() == static_cast<std::size_t>(kWeightPerCodePage)) {
        code.emplace_back();
        entries.emplace_back();
      }
      if (part == 0) entries.back().push_back(name);
      code.back().emplace_back(name, part);
    }
  }
  std::size_t code_pages = code.size();
  bool hosts_heartbeat = spec.runs("heartbeat");
  std::size_t slots = 1 + 2 * inst.served.size();
  std::size_t secret_pages = (slots * kSlotSize + kPage - 1) / kPage;
  std::size_t total = code_pages + (hosts_heartbeat ? 1 : 0) + secret_pages;

  inst.id = driver_->ecreate(total);
  Address base = cpu_->enclave(inst.id).range.base;
  for (std::size_t i = 0; i < code_pages; ++i) {
    driver_->eadd(inst.id, i, CodePage(code[i]),
                  {PageKind::kCode, PagePerms::ReadExecute(), entries[i]});
  }
  Bytes zero(kPage, 0);
  std::size_t next = code_pages;
  if (hosts_heartbeat) {
    inst.heartbeat_page = base + next * kPage;
    driver_->eadd(inst.id, next++, zero, {});
  }
  inst.secret_base = base + next * kPage;
  for (std::size_t i = 0; i < secret_pages; ++i) driver_->eadd(inst.id, next++, zero, {});
  for (std::size_t i = 0; i < total; ++i) driver_->eextend(inst.id, i);
  driver_->einit(inst.id);

  counters_.enclaves_created++;
  counters_.epc_pages += total;
  instances_.push_back(std::move(inst));
}

void MiniServer::ProvisionPrivateKey(Instance& inst) {
  Marker m = MakeMarker(SecretClass::kPrivateKey, 1);
  Bytes slot(m.begin(), m.end());
  Append(slot, config_.server_private_key);
  EnclaveCall call(*cpu_, inst.id, kRuntimeEntry);
  cpu_->write(call.handle(), SlotAddress(inst, Slot::kPrivateKey, 0), slot);
  call.Exit();
}

void MiniServer::EstablishChannels() {
  auto connect = [&](const ChannelSpec& c, int slot) {
    Instance* a = nullptr;
    Instance* b = nullptr;
    for (Instance& inst : instances_) {
      bool serves = !inst.spec->connection || *inst.spec->connection == slot;
      if (!serves) continue;
      if (inst.spec->role == c.a && !a) a = &inst;
      if (inst.spec->role == c.b && !b) b = &inst;
    }
    if (!a || !b) {
      throw Error(ErrorCode::kInvalidPlan, "channel " + c.a + "<->" + c.b + " has no endpoint");
    }
    links_.push_back(Link{c.a, c.b, c.per_connection ? slot : -1,
                          TrustedChannel::establish(*cpu_, a->id, *cpu_, b->id)});
    counters_.channels_established++;
  };
  for (const ChannelSpec& c : config_.plan.channels) {
    if (c.per_connection) {
      for (int s = 0; s < config_.plan.connections; ++s) connect(c, s);
    } else {
      connect(c, 0);
    }
  }
}

// ---------------------------------------------------------------- lookup

MiniServer::Instance* MiniServer::SiteOf(std::string_view unit, int slot) {
  return const_cast<Instance*>(std::as_const(*this).SiteOf(unit, slot));
}

const MiniServer::Instance* MiniServer::SiteOf(std::string_view unit, int slot) const {
  auto it = config_.plan.placement.find(std::string(unit));
  if (it == config_.plan.placement.end()) {
    throw Error(ErrorCode::kInvalidPlan, "unknown code unit " + std::string(unit));
  }
  if (!it->second) return nullptr;
  for (const Instance& inst : instances_) {
    if (inst.spec->role == *it->second &&
        (!inst.spec->connection || *inst.spec->connection == slot)) {
      return &inst;
    }
  }
  throw Error(ErrorCode::kInvalidPlan,
              "no instance of " + *it->second + " for slot " + std::to_string(slot));
}

Address MiniServer::SlotAddress(const Instance& inst, Slot kind, int slot) const {
  if (kind == Slot::kPrivateKey) return inst.secret_base;
  auto it = std::find(inst.served.begin(), inst.served.end(), slot);
  if (it == inst.served.end()) {
    throw Error(ErrorCode::kInvalidPlan, "enclave " + inst.spec->role +
                                             " does not serve slot " + std::to_string(slot));
  }
  std::size_t k = static_cast<std::size_t>(it - inst.served.begin());
  return inst.secret_base + kSlotSize * (1 + 2 * k + (kind == Slot::kPreMaster ? 1 : 0));
}

MiniServer::Link& MiniServer::FindLink(const std::string& from, const std::string& to,
                                       int slot) {
  auto usable = [&](const Link& l) { return l.slot == -1 || l.slot == slot; };
  for (Link& l : links_) {
    if (usable(l) && l.a_role == from && l.b_role == to) return l;
  }
  for (Link& l : links_) {
    if (usable(l) && l.a_role == to && l.b_role == from) return l;
  }
  throw Error(ErrorCode::kInvalidPlan, "no trusted channel " + from + "->" + to);
}

Domain MiniServer::domain_of(std::string_view unit, int slot) const {
  const Instance* site = SiteOf(unit, slot);
  return site ? Domain::Enclave(site->id) : Domain::Untrusted();
}

std::optional<EnclaveId> MiniServer::enclave_for(std::string_view role, int slot) const {
  for (const Instance& inst : instances_) {
    if (inst.spec->role == role && (!inst.spec->connection || *inst.spec->connection == slot)) {
      return inst.id;
    }
  }
  return std::nullopt;
}

std::vector<EnclaveId> MiniServer::enclave_ids() const {
  std::vector<EnclaveId> ids;
  for (const Instance& inst : instances_) ids.push_back(inst.id);
  return ids;
}

Address MiniServer::heartbeat_buffer_for(int slot) const {
  const Instance* site = SiteOf("heartbeat", slot);
  return site ? *site->heartbeat_page : heartbeat_buffer_.base;
}

MiniServer::Session& MiniServer::Lookup(ConnectionId id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end() || !it->second.established) {
    throw Error(ErrorCode::kNoSuchSession, "connection " + std::to_string(id));
  }
  return it->second;
}

SimClient& MiniServer::client(ConnectionId id) { return *Lookup(id).client; }

// ---------------------------------------------------------------- plumbing

Bytes MiniServer::Transmit(ByteView message) {
  if (message.size() > socket_.length) {
    throw Error(ErrorCode::kInvalidArgument, "message exceeds socket buffer");
  }
  cpu_->untrusted_write(socket_.base, message);
  return cpu_->untrusted_read(socket_.base, message.size());
}

std::uint8_t MiniServer::Dispatch(int slot, ByteView record) {
  Bytes wire = Transmit(record);
  Bytes header(wire.begin(), wire.begin() + std::min<std::size_t>(wire.size(), 3));
  Bytes type = Run("io_dispatch", slot, header, [](Exec&, ByteView h) {
    return h.empty() ? Bytes{0} : Bytes{h[0]};
  });
  return type.empty() ? 0 : type[0];
}

void MiniServer::Transfer(Instance& from, std::string_view from_unit, Instance& to,
                          std::string_view to_unit, Slot kind, int slot, bool wipe_source) {
  Link& link = FindLink(from.spec->role, to.spec->role, slot);
  Address src = SlotAddress(from, kind, slot);
  Address dst = SlotAddress(to, kind, slot);
  Bytes wire = RunIn<Exec>(*cpu_, &from, from_unit, {}, [&](Exec& x, ByteView) {
    Bytes value = x.read(src, kSlotPayload);
    if (wipe_source) x.write(src, Bytes(kSlotSize, 0));
    return link.channel.send(*cpu_, x.handle(), value);
  });
  cpu_->untrusted_write(channel_buffer_.base, wire);
  Bytes in = cpu_->untrusted_read(channel_buffer_.base, wire.size());
  RunIn<Exec>(*cpu_, &to, to_unit, in, [&](Exec& x, ByteView args) {
    x.write(dst, link.channel.recv(*cpu_, x.handle(), args));
    return Bytes{};
  });
}

// ---------------------------------------------------------------- protocol

SessionContext MiniServer::handshake(ConnectionId id, const ClientOptions& options) {
  if (!running_) throw Error(ErrorCode::kWrongState, "server is shut down");
  if (used_ids_.contains(id)) {
    throw Error(ErrorCode::kDuplicateConnection, "connection " + std::to_string(id));
  }
  auto free_slot = std::find(slot_busy_.begin(), slot_busy_.end(), false);
  if (free_slot == slot_busy_.end()) {
    throw Error(ErrorCode::kConnectionLimit,
                "all " + std::to_string(slot_busy_.size()) + " slots in use");
  }
  const int slot = static_cast<int>(free_slot - slot_busy_.begin());
  used_ids_.insert(id);
  *free_slot = true;
  markers_.Add(MakeMarker(SecretClass::kSessionKey, id));

  Session& s = sessions_[id];
  s.slot = slot;
  s.client = std::make_unique<SimClient>(id, config_.seed);
  const std::uint64_t entries_before = cpu_->total_entries();
  auto fail = [&](const std::string& why) {
    *free_slot = false;
    sessions_.erase(id);
    throw Error(ErrorCode::kHandshakeFailure, why);
  };

  // ClientHello.
  s.client_nonce = s.client->hello();
  Dispatch(slot, Concat({Bytes{kRecordHandshake}, s.client_nonce}));

  // ServerHello: fresh nonce plus the certificate.
  Bytes hello_args{kHello};
  Append(hello_args, s.client_nonce);
  s.server_nonce = Run("handshake_fsm", slot, hello_args, [&](Exec&, ByteView) {
    return protocol_rng_.NextBytes(32);
  });
  Bytes server_hello = Concat({Bytes{kRecordHandshake}, s.server_nonce, certificate_});
  Bytes seen = Transmit(server_hello);
  Bytes cert(seen.begin() + 1 + 32, seen.end());
  Bytes parsed = Run("cert_parse", slot, cert, [](Exec&, ByteView c) {
    if (c.size() != 4 + 32 + 8) return Bytes{};
    Digest check = crypto::Sha256(c.first(36));
    if (!std::equal(check.begin(), check.begin() + 8, c.begin() + 36)) return Bytes{};
    return Bytes(c.begin() + 4, c.begin() + 36);
  });
  if (parsed.size() != 32) fail("certificate rejected");

  // Client key share, wrapped to the server's public key.
  s.key_share = s.client->key_share(s.server_nonce, ToKey(parsed));
  if (options.corrupt_key_share) s.key_share.back() ^= 0x01;
  Dispatch(slot, Concat({Bytes{kRecordHandshake}, s.key_share}));
  const Bytes nonces = Concat({s.client_nonce, s.server_nonce});

  // The private key reaches the unwrapping site over a trusted channel when
  // that site does not hold it permanently.
  Instance* pk_site = SiteOf("private_key_ops", slot);
  if (!pk_site) throw Error(ErrorCode::kInvalidPlan, "private_key_ops must be trusted");
  const bool pk_resident = pk_site->spec->hosts(SecretClass::kPrivateKey);
  if (!pk_resident) {
    Instance* holder = SiteOf("handshake_fsm", slot);
    if (!holder || !holder->spec->hosts(SecretClass::kPrivateKey)) {
      throw Error(ErrorCode::kInvalidPlan, "no enclave can supply the private key");
    }
    Transfer(*holder, "handshake_fsm", *pk_site, "private_key_ops", Slot::kPrivateKey, slot,
             false);
  }
  Bytes unwrap_args = Concat({Bytes{kUnwrap}, nonces, s.key_share});
  Bytes status = Run("private_key_ops", slot, unwrap_args, [&](Exec& x, ByteView args) {
    const Instance& me = *x.site();
    Address pk_addr = SlotAddress(me, Slot::kPrivateKey, slot);
    Bytes pk_slot = x.read(pk_addr, kSlotPayload);
    if (!pk_resident) x.write(pk_addr, Bytes(kSlotSize, 0));
    ByteView n = args.subspan(1, 64);
    ByteView share = args.subspan(65);
    if (share.size() != 32 + 32 + crypto::kTagSize) return Bytes{0};
    Key32 pk = ToKey(ByteView(pk_slot).subspan(kMarkerSize));
    Key32 eph_pub = ToKey(share.first(32));
    Key32 shared;
    try {
      shared = crypto::X25519Shared(pk, eph_pub);
    } catch (const Error&) {
      return Bytes{0};
    }
    Key32 wrap = crypto::DeriveKey(shared, "key-share", Concat({eph_pub, server_public_}));
    auto pms = crypto::AeadOpen(wrap, n.first(16), n, share.subspan(32));
    if (!pms || pms->size() != 32) return Bytes{0};
    Bytes pms_slot(kMarkerSize, 0);
    Append(pms_slot, *pms);
    x.write(SlotAddress(me, Slot::kPreMaster, slot), pms_slot);
    return Bytes{1};
  });
  if (status != Bytes{1}) fail("key share did not unwrap");

  Instance* kg_site = SiteOf("key_generation", slot);
  if (!kg_site) throw Error(ErrorCode::kInvalidPlan, "key_generation must be trusted");
  if (kg_site != pk_site) {
    Transfer(*pk_site, "private_key_ops", *kg_site, "key_generation", Slot::kPreMaster, slot,
             true);
  }
  Bytes derive_args{kDerive};
  AppendU32(derive_args, id);
  Append(derive_args, nonces);
  Run("key_generation", slot, derive_args, [&](Exec& x, ByteView args) {
    const Instance& me = *x.site();
    Address pms_addr = SlotAddress(me, Slot::kPreMaster, slot);
    Bytes pms_slot = x.read(pms_addr, kSlotPayload);
    x.write(pms_addr, Bytes(kSlotSize, 0));
    Key32 sk = crypto::DeriveKey(ByteView(pms_slot).subspan(kMarkerSize), "session key",
                                 args.subspan(5, 64));
    Marker m = MakeMarker(SecretClass::kSessionKey, id);
    Bytes sk_slot(m.begin(), m.end());
    Append(sk_slot, sk);
    x.write(SlotAddress(me, Slot::kSessionKey, slot), sk_slot);
    return Bytes{};
  });

  // Session key hand-off to every trusted site that needs it.
  auto deliver = [&](std::string_view to_unit) {
    Instance* to = SiteOf(to_unit, slot);
    if (!to) throw Error(ErrorCode::kInvalidPlan, std::string(to_unit) + " must be trusted");
    if (to != kg_site) {
      Transfer(*kg_site, "key_generation", *to, to_unit, Slot::kSessionKey, slot, false);
    }
  };
  deliver("handshake_fsm");

  Bytes transcript = Concat({nonces, s.key_share});
  Bytes finish_args{kFinish};
  Append(finish_args, transcript);
  Bytes finished = Run("handshake_fsm", slot, finish_args, [&](Exec& x, ByteView args) {
    Bytes sk_slot = x.read(SlotAddress(*x.site(), Slot::kSessionKey, slot), kSlotPayload);
    return ServerFinished(ToKey(ByteView(sk_slot).subspan(kMarkerSize)), args.subspan(1));
  });
  Bytes finished_wire = Transmit(Concat({Bytes{kRecordHandshake}, finished}));
  if (!s.client->finish(ByteView(finished_wire).subspan(1))) fail("Finished mismatch");

  if (SiteOf("record_decrypt", slot) != SiteOf("handshake_fsm", slot)) deliver("record_decrypt");
  if (SiteOf("record_encrypt", slot) != SiteOf("record_decrypt", slot) &&
      SiteOf("record_encrypt", slot) != kg_site) {
    deliver("record_encrypt");
  }
  Bytes reg;
  AppendU32(reg, id);
  Run("session_mgmt", slot, reg, [](Exec&, ByteView) { return Bytes{}; });

  s.established = true;
  counters_.entries_per_handshake.push_back(cpu_->total_entries() - entries_before);
  SessionContext ctx;
  ctx.connection_id = id;
  ctx.session_key = s.client->session_key();
  ctx.handshake_transcript = s.client->transcript();
  ctx.established = true;
  return ctx;
}

Bytes MiniServer::exchange(ConnectionId id, ByteView record) {
  Session& s = Lookup(id);
  const int slot = s.slot;
  Bytes wire = Transmit(Concat({Bytes{kRecordApplication}, record}));
  Dispatch(slot, wire);
  Bytes opened = Run("record_decrypt", slot, ByteView(wire).subspan(1),
                     [&](Exec& x, ByteView args) {
    Bytes sk_slot = x.read(SlotAddress(*x.site(), Slot::kSessionKey, slot), kSlotPayload);
    std::uint64_t seq = 0;
    auto pt = OpenRecord(ToKey(ByteView(sk_slot).subspan(kMarkerSize)), "c2s", args, &seq);
    if (!pt) return Bytes{0};
    Bytes out{1};
    AppendU64(out, seq);
    Append(out, *pt);
    return out;
  });
  if (opened.empty() || opened[0] != 1) {
    throw Error(ErrorCode::kRecordIntegrityFailure, "record failed authentication");
  }
  std::uint64_t seq = ReadU64(ByteView(opened).subspan(1));
  if (seq <= s.recv_seq) throw Error(ErrorCode::kRecordIntegrityFailure, "replayed record");
  s.recv_seq = seq;
  Bytes plaintext(opened.begin() + 9, opened.end());

  Bytes response;
  const std::string text = ToString(plaintext);
  if (text.rfind("AUTH ", 0) == 0) {
    Bytes ok = Run("credential_check", slot, ToBytes(text.substr(5)), [&](Exec& x, ByteView a) {
      std::istringstream in(ToString(a));
      std::string user, pass;
      in >> user >> pass;
      Bytes store = x.read(credentials_.base, credentials_.length);
      for (std::size_t off = 0; off + kCredentialEntry <= store.size(); off += kCredentialEntry) {
        if (!markers_.Known(ByteView(store).subspan(off, kMarkerSize))) continue;
        std::string entry = ToString(ByteView(store).subspan(off + kMarkerSize,
                                                             kCredentialEntry - kMarkerSize));
        std::size_t sep = entry.find('\0');
        std::string u = entry.substr(0, sep);
        std::string p = entry.substr(sep + 1, entry.find('\0', sep + 1) - sep - 1);
        if (u == user && p == pass) return Bytes{1};
      }
      return Bytes{0};
    });
    response = ToBytes(ok == Bytes{1} ? "AUTH OK" : "AUTH FAIL");
  } else {
    response = Run("session_mgmt", slot, plaintext, [](Exec&, ByteView a) {
      return Bytes(a.begin(), a.end());
    });
  }

  Bytes enc_args;
  AppendU64(enc_args, ++s.send_seq);
  Append(enc_args, response);
  Bytes out = Run("record_encrypt", slot, enc_args, [&](Exec& x, ByteView args) {
    Bytes sk_slot = x.read(SlotAddress(*x.site(), Slot::kSessionKey, slot), kSlotPayload);
    return SealRecord(ToKey(ByteView(sk_slot).subspan(kMarkerSize)), "s2c", ReadU64(args),
                      args.subspan(8));
  });
  Bytes sent = Transmit(Concat({Bytes{kRecordApplication}, out}));
  return Bytes(sent.begin() + 1, sent.end());
}

Bytes MiniServer::send_app_data(ConnectionId id, ByteView plaintext) {
  SimClient& c = client(id);
  return c.open_record(exchange(id, c.seal_record(plaintext)));
}

Bytes MiniServer::heartbeat(ConnectionId id, const HeartbeatRequest& request) {
  Session& s = Lookup(id);
  const int slot = s.slot;
  if (request.payload.size() > kPage) {
    throw Error(ErrorCode::kInvalidArgument, "heartbeat payload exceeds one page");
  }
  Bytes record{kRecordHeartbeat, static_cast<std::uint8_t>(request.claimed_length >> 8),
               static_cast<std::uint8_t>(request.claimed_length & 0xFF)};
  Append(record, request.payload);
  Dispatch(slot, record);
  const Address page = heartbeat_buffer_for(slot);
  const std::size_t memory_size = cpu_->memory().size();
  Bytes response = Run("heartbeat", slot, ByteView(record).subspan(1),
                       [&](Exec& x, ByteView args) {
    std::size_t claimed = (std::size_t{args[0]} << 8) | args[1];
    ByteView payload = args.subspan(2);
    Address at = page + kPage - payload.size();
    x.write(at, payload);
    if (!config_.vulnerable_heartbeat && claimed > payload.size()) return Bytes{};
    // The missing bounds check: copy what the peer claims it sent.
    return x.read(at, std::min<std::size_t>(claimed, memory_size - at));
  });
  Bytes sent = Transmit(Concat({Bytes{kRecordHeartbeat}, response}));
  return Bytes(sent.begin() + 1, sent.end());
}

void MiniServer::close(ConnectionId id) {
  Session& s = Lookup(id);
  const int slot = s.slot;
  for (Instance& inst : instances_) {
    if (std::find(inst.served.begin(), inst.served.end(), slot) == inst.served.end()) continue;
    EnclaveCall call(*cpu_, inst.id, kRuntimeEntry);
    Bytes zero(kSlotSize, 0);
    cpu_->write(call.handle(), SlotAddress(inst, Slot::kSessionKey, slot), zero);
    cpu_->write(call.handle(), SlotAddress(inst, Slot::kPreMaster, slot), zero);
    call.Exit();
  }
  slot_busy_[static_cast<std::size_t>(slot)] = false;
  sessions_.erase(id);
}

void MiniServer::shutdown() {
  if (!running_) return;
  running_ = false;
  sessions_.clear();
  for (Link& l : links_) l.channel.close();
  for (const Instance& inst : instances_) driver_->eremove(inst.id);
  PlatformMemory& mem = cpu_->memory();
  for (const Region* r : {&heartbeat_buffer_, &credentials_, &socket_, &channel_buffer_}) {
    mem.release(*r);
  }
}

// ---------------------------------------------------------------- scripts

std::vector<ScriptCommand> parse_script(std::string_view text) {
  std::vector<ScriptCommand> out;
  std::istringstream lines{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(lines, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream in(line);
    std::string verb;
    if (!(in >> verb)) continue;
    auto bad = [&](const std::string& why) {
      return Error(ErrorCode::kParseError, "line " + std::to_string(number) + ": " + why);
    };
    ScriptCommand cmd;
    long long id = -1;
    if (!(in >> id) || id < 0 || id > 0xFFFFFFFFLL) throw bad("expected a connection id");
    cmd.id = static_cast<ConnectionId>(id);
    auto hex_of = [&](const std::string& hex) {
      try {
        return FromHex(hex == "-" ? "" : hex);
      } catch (const Error& e) {
        throw bad(e.what());
      }
    };
    if (verb == "connect") {
      cmd.kind = ScriptCommand::Kind::kConnect;
    } else if (verb == "close") {
      cmd.kind = ScriptCommand::Kind::kClose;
    } else if (verb == "send") {
      std::string hex;
      if (!(in >> hex)) throw bad("send needs a hex payload");
      cmd.kind = ScriptCommand::Kind::kSend;
      cmd.data = hex_of(hex);
    } else if (verb == "heartbeat") {
      std::string hex;
      long claimed = -1;
      if (!(in >> hex >> claimed) || claimed < 0 || claimed > 0xFFFF) {
        throw bad("heartbeat needs <payload-hex> <claimed-len 0..65535>");
      }
      cmd.kind = ScriptCommand::Kind::kHeartbeat;
      cmd.data = hex_of(hex);
      cmd.claimed_length = static_cast<std::uint16_t>(claimed);
    } else {
      throw bad("unknown command '" + verb + "'");
    }
    std::string extra;
    if (in >> extra) throw bad("trailing token '" + extra + "'");
    out.push_back(std::move(cmd));
  }
  return out;
}

std::vector<std::string> run_script(MiniServer& server,
                                    const std::vector<ScriptCommand>& script) {
  std::vector<std::string> transcript;
  for (const ScriptCommand& cmd : script) {
    std::string head;
    switch (cmd.kind) {
      case ScriptCommand::Kind::kConnect: head = "connect"; break;
      case ScriptCommand::Kind::kSend: head = "send"; break;
      case ScriptCommand::Kind::kHeartbeat: head = "heartbeat"; break;
      case ScriptCommand::Kind::kClose: head = "close"; break;
    }
    head += " " + std::to_string(cmd.id) + " ";
    try {
      switch (cmd.kind) {
        case ScriptCommand::Kind::kConnect:
          server.handshake(cmd.id);
          transcript.push_back(head + "ok");
          break;
        case ScriptCommand::Kind::kSend:
          transcript.push_back(head + ToHex(server.send_app_data(cmd.id, cmd.data)));
          break;
        case ScriptCommand::Kind::kHeartbeat: {
          Bytes r = server.heartbeat(cmd.id, {cmd.data, cmd.claimed_length});
          transcript.push_back(head + "len=" + std::to_string(r.size()) + " " + ToHex(r));
          break;
        }
        case ScriptCommand::Kind::kClose:
          server.close(cmd.id);
          transcript.push_back(head + "ok");
          break;
      }
    } catch (const Error& e) {
      transcript.push_back(head + "error " + std::string(ErrorCodeName(e.code())));
    }
  }
  return transcript;
}

}  // namespace sgxpart
