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

#include <gtest/gtest.h>

#include "sgxpart/miniserver.h"
#include "test_support.h"

namespace sgxpart {
namespace {

using testing::CodeOf;
using testing::kPage;

struct Located {
  Domain owner;
  MarkerHit hit;
};

// Reads every page through its owner's eyes (ground truth) and reports
// where each registered marker lives.
std::vector<Located> TrueMarkerLocations(MiniServer& s) {
  PlatformMemory& mem = s.cpu().memory();
  std::vector<Located> out;
  for (std::size_t p = 0; p < mem.page_count(); ++p) {
    Domain owner = mem.effective_owner(p * kPage);
    Bytes page = mem.mem_read(owner, p * kPage, kPage);
    for (MarkerHit h : s.markers().Scan(page)) {
      h.offset += p * kPage;
      out.push_back({owner, h});
    }
  }
  return out;
}

const EnclaveSpec* SpecOf(const MiniServer& s, EnclaveId id) {
  for (const EnclaveSpec& e : s.plan().enclaves) {
    int slot = e.connection.value_or(0);
    if (s.enclave_for(e.role, slot) == id) return &e;
  }
  return nullptr;
}

std::unique_ptr<MiniServer> Start(Scheme scheme, int n, std::uint64_t seed = 1,
                                  bool vulnerable = true) {
  ServerConfig c = default_config(scheme, n, seed);
  c.vulnerable_heartbeat = vulnerable;
  return MiniServer::start(std::move(c));
}

class PerScheme : public ::testing::TestWithParam<Scheme> {};
INSTANTIATE_TEST_SUITE_P(All, PerScheme, ::testing::ValuesIn(kAllSchemes),
                         [](const auto& info) { return std::string(ToString(info.param)); });

TEST_P(PerScheme, StartRealizesPlan) {
  auto s = Start(GetParam(), 10);
  PlanMetrics m = metrics(s->plan());
  EXPECT_EQ(s->counters().enclaves_created, static_cast<std::uint64_t>(m.enclave_count));
  EXPECT_EQ(s->channel_count(), static_cast<std::size_t>(m.total_channels));
  for (EnclaveId id : s->enclave_ids()) {
    EXPECT_EQ(s->cpu().enclave(id).state, EnclaveState::kInitialized);
  }
  EXPECT_EQ(s->cpu().memory().effective_owner(s->credential_region().base), Domain::Untrusted());
}

TEST_P(PerScheme, HandshakeAndEchoAndAuth) {
  auto s = Start(GetParam(), 3);
  SessionContext a = s->handshake(1);
  SessionContext b = s->handshake(2);
  EXPECT_TRUE(a.established);
  EXPECT_NE(a.session_key, b.session_key);
  EXPECT_EQ(a.session_key, s->client(1).session_key());
  EXPECT_EQ(ToString(s->send_app_data(1, ToBytes("ping"))), "ping");
  const Credential& cred = s->config().credentials[1];
  EXPECT_EQ(ToString(s->send_app_data(2, ToBytes("AUTH " + cred.username + " " + cred.password))),
            "AUTH OK");
  EXPECT_EQ(ToString(s->send_app_data(2, ToBytes("AUTH " + cred.username + " wrong"))),
            "AUTH FAIL");
}

TEST_P(PerScheme, KeyStepsRunInAssignedEnclaves) {
  auto s = Start(GetParam(), 2);
  s->handshake(7);
  for (const char* unit : {"private_key_ops", "key_generation", "handshake_fsm"}) {
    Domain d = s->domain_of(unit, 0);
    ASSERT_TRUE(d.is_enclave()) << unit;
    std::string ev = "EENTER id=" + std::to_string(d.enclave_id().value) + " entry=" + unit;
    EXPECT_GE(s->cpu().trace().Count(ev), 1u) << ev;
  }
  EXPECT_TRUE(s->domain_of("credential_check", 0).is_untrusted());
}

TEST_P(PerScheme, SecretsLiveOnlyWhereThePlanPutsThem) {
  auto s = Start(GetParam(), 10);
  for (ConnectionId c = 1; c <= 10; ++c) s->handshake(c);
  auto located = TrueMarkerLocations(*s);
  int pk = 0, sk = 0, cred = 0;
  for (const Located& l : located) {
    if (l.hit.kind == SecretClass::kCredentials) {
      ++cred;
      EXPECT_TRUE(l.owner.is_untrusted());
      continue;
    }
    ASSERT_TRUE(l.owner.is_enclave()) << ToString(l.hit.kind) << " at " << l.hit.offset;
    const EnclaveSpec* spec = SpecOf(*s, l.owner.enclave_id());
    ASSERT_NE(spec, nullptr);
    EXPECT_TRUE(spec->hosts(l.hit.kind)) << spec->role << " holds " << ToString(l.hit.kind);
    (l.hit.kind == SecretClass::kPrivateKey ? pk : sk)++;
  }
  EXPECT_EQ(cred, 3);
  EXPECT_GE(pk, 1);
  EXPECT_GE(sk, 10);
  // The untrusted view holds none of the key markers.
  Bytes dump = s->cpu().memory().adversary_read(0, s->cpu().memory().size());
  for (const MarkerHit& h : s->markers().Scan(dump)) {
    EXPECT_EQ(h.kind, SecretClass::kCredentials);
  }
}

TEST_P(PerScheme, HeartbeatBufferSitsBelowSecrets) {
  auto s = Start(GetParam(), 2);
  Address buf = s->heartbeat_buffer_for(0);
  if (GetParam() == Scheme::kWholeApplication) {
    Domain owner = s->cpu().memory().effective_owner(buf);
    EXPECT_TRUE(owner.is_enclave());
    Bytes above = s->cpu().memory().mem_read(owner, buf + kPage, 8);
    EXPECT_TRUE(s->markers().Known(above));
  } else {
    EXPECT_EQ(buf + kPage, s->credential_region().base);
  }
}

TEST_P(PerScheme, HeartbeatEchoAndPatchedDiscard) {
  auto vuln = Start(GetParam(), 1);
  vuln->handshake(1);
  EXPECT_EQ(ToString(vuln->heartbeat(1, {ToBytes("hello"), 5})), "hello");
  EXPECT_EQ(ToString(vuln->heartbeat(1, {ToBytes("hello"), 3})), "hel");
  EXPECT_EQ(vuln->heartbeat(1, {ToBytes("hello"), 4096}).size(), 4096u);

  auto patched = Start(GetParam(), 1, 1, false);
  patched->handshake(1);
  EXPECT_EQ(ToString(patched->heartbeat(1, {ToBytes("hello"), 5})), "hello");
  EXPECT_TRUE(patched->heartbeat(1, {ToBytes("hello"), 4096}).empty());
}

TEST_P(PerScheme, EntriesPerHandshakeDeterministic) {
  auto a = Start(GetParam(), 4, 9);
  auto b = Start(GetParam(), 4, 9);
  for (ConnectionId c = 1; c <= 4; ++c) {
    a->handshake(c);
    b->handshake(c);
  }
  EXPECT_EQ(a->counters().entries_per_handshake, b->counters().entries_per_handshake);
  ASSERT_EQ(a->counters().entries_per_handshake.size(), 4u);
  EXPECT_GT(a->counters().entries_per_handshake[0], 0u);
}

TEST_P(PerScheme, CloseWipesSessionKey) {
  auto s = Start(GetParam(), 2);
  s->handshake(1);
  s->handshake(2);
  s->close(1);
  for (const Located& l : TrueMarkerLocations(*s)) {
    if (l.hit.kind == SecretClass::kSessionKey) {
      EXPECT_NE(l.hit.instance, 1u);
    }
  }
  EXPECT_EQ(CodeOf([&] { s->exchange(1, Bytes(30, 0)); }), ErrorCode::kNoSuchSession);
  // The slot is reusable by a fresh connection id.
  EXPECT_TRUE(s->handshake(3).established);
  EXPECT_EQ(ToString(s->send_app_data(3, ToBytes("again"))), "again");
}

TEST_P(PerScheme, ShutdownRemovesEverything) {
  auto s = Start(GetParam(), 3);
  s->handshake(1);
  s->shutdown();
  EXPECT_EQ(s->cpu().live_enclave_count(), 0u);
  s->shutdown();  // idempotent
  EXPECT_EQ(CodeOf([&] { s->handshake(2); }), ErrorCode::kWrongState);
}

TEST(MiniServer, ConnectionErrors) {
  auto s = Start(Scheme::kAllSecrets, 2);
  s->handshake(1);
  EXPECT_EQ(CodeOf([&] { s->handshake(1); }), ErrorCode::kDuplicateConnection);
  s->handshake(2);
  EXPECT_EQ(CodeOf([&] { s->handshake(3); }), ErrorCode::kConnectionLimit);
  EXPECT_EQ(CodeOf([&] { s->exchange(9, Bytes(30, 0)); }), ErrorCode::kNoSuchSession);
  EXPECT_EQ(CodeOf([&] { s->heartbeat(9, {}); }), ErrorCode::kNoSuchSession);
  EXPECT_EQ(CodeOf([&] { s->close(9); }), ErrorCode::kNoSuchSession);
}

TEST(MiniServer, BadKeyShareFailsHandshake) {
  auto s = Start(Scheme::kHybrid, 1);
  ClientOptions bad;
  bad.corrupt_key_share = true;
  EXPECT_EQ(CodeOf([&] { s->handshake(1, bad); }), ErrorCode::kHandshakeFailure);
  EXPECT_FALSE(s->cpu().current().has_value());
  EXPECT_TRUE(s->handshake(2).established);
}

TEST(MiniServer, TamperedAndReplayedRecordsRejected) {
  auto s = Start(Scheme::kSeparateSecret, 1);
  s->handshake(1);
  Bytes rec = s->client(1).seal_record(ToBytes("data"));
  Bytes bad = rec;
  bad[10] ^= 1;
  EXPECT_EQ(CodeOf([&] { s->exchange(1, bad); }), ErrorCode::kRecordIntegrityFailure);
  s->exchange(1, rec);
  EXPECT_EQ(CodeOf([&] { s->exchange(1, rec); }), ErrorCode::kRecordIntegrityFailure);
}

TEST(MiniServer, SchemeOneOverReadLeaksBothKeys) {
  auto s = Start(Scheme::kWholeApplication, 1);
  s->handshake(1);
  Bytes r = s->heartbeat(1, {ToBytes("hello"), 4096});
  std::set<SecretClass> kinds;
  for (const MarkerHit& h : s->markers().Scan(r)) kinds.insert(h.kind);
  EXPECT_EQ(kinds, (std::set<SecretClass>{SecretClass::kPrivateKey, SecretClass::kSessionKey}));
}

TEST(MiniServer, SchemeTwoOverReadLeaksCredentialsOnly) {
  auto s = Start(Scheme::kAllSecrets, 1);
  s->handshake(1);
  Bytes r = s->heartbeat(1, {ToBytes("hello"), 4096});
  std::set<SecretClass> kinds;
  for (const MarkerHit& h : s->markers().Scan(r)) kinds.insert(h.kind);
  EXPECT_EQ(kinds, (std::set<SecretClass>{SecretClass::kCredentials}));
}

TEST(MiniServer, StartRejectsBrokenPlan) {
  ServerConfig c = default_config(Scheme::kSeparateSecret, 2, 1);
  c.plan.channels.push_back({"handshake", "ghost", true, "x"});
  EXPECT_EQ(CodeOf([&] { MiniServer s(std::move(c)); }), ErrorCode::kInvalidPlan);
}

TEST(MiniServer, OversizedHeartbeatPayloadRejected) {
  auto s = Start(Scheme::kAllSecrets, 1);
  s->handshake(1);
  EXPECT_EQ(CodeOf([&] { s->heartbeat(1, {Bytes(kPage + 1, 1), 1}); }),
            ErrorCode::kInvalidArgument);
}

TEST(Script, ParseAndRun) {
  auto cmds = parse_script("# comment\nconnect 1\nsend 1 6869\nheartbeat 1 - 0\n\nclose 1\n");
  ASSERT_EQ(cmds.size(), 4u);
  EXPECT_EQ(cmds[1].kind, ScriptCommand::Kind::kSend);
  EXPECT_EQ(ToString(cmds[1].data), "hi");
  EXPECT_TRUE(cmds[2].data.empty());
  auto s = Start(Scheme::kHybrid, 2);
  auto out = run_script(*s, cmds);
  EXPECT_EQ(out, (std::vector<std::string>{"connect 1 ok", "send 1 6869", "heartbeat 1 len=0 ",
                                           "close 1 ok"}));
}

TEST(Script, ErrorsAreReportedInline) {
  auto s = Start(Scheme::kHybrid, 1);
  auto out = run_script(*s, parse_script("send 4 00\nconnect 1\nconnect 1\n"));
  EXPECT_EQ(out[0], "send 4 error NoSuchSession");
  EXPECT_EQ(out[2], "connect 1 error DuplicateConnection");
}

TEST(Script, ParseErrors) {
  for (const char* bad : {"connect", "connect x", "send 1", "send 1 zz", "heartbeat 1 00",
                          "heartbeat 1 00 70000", "jump 1", "close 1 extra"}) {
    EXPECT_EQ(CodeOf([&] { parse_script(bad); }), ErrorCode::kParseError) << bad;
  }
}

TEST(Script, TranscriptIdenticalAcrossSchemes) {
  std::string text;
  for (int c = 1; c <= 10; ++c) text += "connect " + std::to_string(c) + "\n";
  for (int c = 1; c <= 10; ++c) {
    text += "send " + std::to_string(c) + " " + ToHex(ToBytes("msg" + std::to_string(c))) + "\n";
  }
  text += "heartbeat 3 616263 3\nclose 4\n";
  auto cmds = parse_script(text);
  std::vector<std::string> reference;
  for (Scheme scheme : kAllSchemes) {
    auto s = Start(scheme, 10, 5);
    auto out = run_script(*s, cmds);
    if (reference.empty()) {
      reference = out;
    } else {
      EXPECT_EQ(out, reference) << ToString(scheme);
    }
  }
  EXPECT_EQ(reference.size(), cmds.size());
}

}  // namespace
}  // namespace sgxpart
