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

// Acceptance suite: one PASS/FAIL line per criterion. Every tolerance is a
// named constant below.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "json.hpp"
#include "lifecycle_model.h"
#include "sgxpart/crypto.h"
#include "sgxpart/harness.h"
#include "sgxpart/markers.h"
#include "sgxpart/miniserver.h"

namespace sgxpart {
namespace {

constexpr double kTable1MaxSeconds = 5.0;
constexpr double kSweepMaxSeconds = 10.0;
constexpr int kSweepSeeds = 100;
constexpr int kSweepConnections = 10;
constexpr int kTableConnections = 10;
constexpr int kLifecycleSequences = 1000;
constexpr int kLifecycleSteps = 60;
constexpr int kReplayedLogs = 100;
constexpr int kBitFlips = 256;
constexpr int kHygieneMarkers = 100;
constexpr int kInterruptCases = 100;
constexpr int kComputationSteps = 100;
constexpr int kSecrecyHandshakes = 10;
constexpr int kScriptConnections = 10;
constexpr std::size_t kPage = PlatformMemory::kPageSize;

struct Result {
  bool pass = false;
  std::string detail;
};

double Seconds(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

std::string Fixed(double v) {
  std::ostringstream o;
  o.precision(3);
  o << std::fixed << v;
  return o.str();
}

// ---------------------------------------------------------------- AC1

Result Table1Reproduction() {
  auto t0 = std::chrono::steady_clock::now();
  std::string cmd = std::string(SGXPART_CLI_PATH) + " table1 --seed 1 --format json";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {false, "cannot launch " + cmd};
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  int rc = pclose(pipe);
  double secs = Seconds(t0);
  if (rc != 0) return {false, "exit status " + std::to_string(rc)};

  auto j = nlohmann::json::parse(out);
  const int enclaves[] = {1, 2, 21, 11};
  const int channels[] = {0, 0, 3, 2};
  const bool dup[] = {false, false, true, true};
  const char* tcb[] = {"L", "S", "S", "S"};
  std::ostringstream got;
  bool ok = j["rows"].size() == 4;
  for (std::size_t i = 0; ok && i < 4; ++i) {
    const auto& m = j["rows"][i]["metrics"];
    ok = ok && j["rows"][i]["connections"] == kTableConnections &&
         m["enclave_count"] == enclaves[i] &&
         m["trusted_channels_per_connection"] == channels[i] && m["duplication"] == dup[i] &&
         m["tcb_class"] == tcb[i];
    got << (i ? " | " : "") << m["enclave_count"] << "," << m["trusted_channels_per_connection"]
        << "," << (m["duplication"].get<bool>() ? "Yes" : "No") << ","
        << m["tcb_class"].get<std::string>();
  }
  ok = ok && secs < kTable1MaxSeconds;
  return {ok, "enclaves,channels/conn,dup,TCB = " + got.str() + "; " + Fixed(secs) + " s (limit " +
                  Fixed(kTable1MaxSeconds) + " s)"};
}

// ---------------------------------------------------------------- AC2

Result VerdictMatrix() {
  auto t0 = std::chrono::steady_clock::now();
  int runs = 0, bad = 0;
  std::string first;
  for (int seed = 1; seed <= kSweepSeeds; ++seed) {
    for (Scheme s : kAllSchemes) {
      for (bool patched : {false, true}) {
        AttackReport r = run_attack({s, kSweepConnections, static_cast<std::uint64_t>(seed),
                                     patched});
        ++runs;
        bool pk = r.leaked[SecretClass::kPrivateKey];
        bool sk = r.leaked[SecretClass::kSessionKey];
        bool cred = r.leaked[SecretClass::kCredentials];
        bool ok;
        if (patched) {
          ok = !pk && !sk && !cred;
        } else if (s == Scheme::kWholeApplication) {
          ok = pk && sk;
        } else {
          ok = !pk && !sk && (s != Scheme::kAllSecrets || cred);
        }
        if (!ok && bad++ == 0) {
          first = "seed " + std::to_string(seed) + " scheme " +
                  std::to_string(static_cast<int>(s)) + (patched ? " patched" : "");
        }
      }
    }
  }
  double secs = Seconds(t0);
  bool ok = bad == 0 && secs < kSweepMaxSeconds;
  std::string detail = std::to_string(runs - bad) + "/" + std::to_string(runs) +
                       " runs match; " + Fixed(secs) + " s (limit " + Fixed(kSweepMaxSeconds) +
                       " s)";
  if (bad) detail += "; first mismatch: " + first;
  return {ok, detail};
}

// ---------------------------------------------------------------- AC3

Result CapacityOrdering() {
  int whole = metrics(plan(Scheme::kWholeApplication, kTableConnections)).capacity_pages;
  int all = metrics(plan(Scheme::kAllSecrets, kTableConnections)).capacity_pages;
  int sep = metrics(plan(Scheme::kSeparateSecret, kTableConnections)).capacity_pages;
  int hyb = metrics(plan(Scheme::kHybrid, kTableConnections)).capacity_pages;
  bool ok = all < whole && whole <= hyb && hyb <= sep;
  return {ok, "AllSecrets " + std::to_string(all) + " < WholeApplication " +
                  std::to_string(whole) + " <= Hybrid " + std::to_string(hyb) +
                  " <= SeparateSecret " + std::to_string(sep)};
}

// ---------------------------------------------------------------- AC4

Result LifecycleSuite() {
  auto stats = testing::RunLifecycleSuite(kLifecycleSequences, kLifecycleSteps, 20260101);
  bool ok = stats.violations == 0 && stats.sequences >= kLifecycleSequences &&
            stats.early_eenter_attempts > 0;
  std::string detail = std::to_string(stats.sequences) + " sequences, " +
                       std::to_string(stats.operations) + " ops, " +
                       std::to_string(stats.rejected) + " illegal ops rejected, " +
                       std::to_string(stats.early_eenter_attempts) +
                       " EENTER-before-EINIT attempts, " + std::to_string(stats.violations) +
                       " violations";
  if (!stats.first_failures.empty()) detail += "; first: " + stats.first_failures[0];
  return {ok, detail};
}

// ---------------------------------------------------------------- AC5

struct BuildRecipe {
  std::vector<Bytes> pages;
  std::vector<bool> code;
};

BuildRecipe RandomRecipe(std::mt19937_64& rng) {
  BuildRecipe r;
  std::size_t n = 2 + rng() % 3;
  for (std::size_t i = 0; i < n; ++i) {
    Bytes page(kPage);
    for (auto& b : page) b = static_cast<std::uint8_t>(rng());
    r.pages.push_back(std::move(page));
    r.code.push_back(i == 0 || rng() % 2 == 0);
  }
  return r;
}

Digest Build(const BuildRecipe& r, std::uint64_t platform_seed) {
  Processor cpu({32, platform_seed});
  Driver d(cpu);
  d.ecreate(1);  // displace the base address so placement is exercised
  EnclaveId id = d.ecreate(r.pages.size());
  for (std::size_t i = 0; i < r.pages.size(); ++i) {
    EaddOptions opt;
    if (r.code[i]) opt = {PageKind::kCode, PagePerms::ReadExecute(), {"main"}};
    d.eadd(id, i, r.pages[i], opt);
  }
  for (std::size_t i = 0; i < r.pages.size(); ++i) d.eextend(id, i);
  return d.einit(id);
}

Result MeasurementSuite() {
  std::mt19937_64 rng(5);
  int deterministic = 0;
  for (int i = 0; i < kReplayedLogs; ++i) {
    BuildRecipe r = RandomRecipe(rng);
    Digest a = Build(r, 1);
    Digest b = Build(r, 1000 + i);
    // Replaying the recorded log alone must give the same digest.
    Processor cpu({32, 1});
    Driver d(cpu);
    EnclaveId id = d.ecreate(r.pages.size());
    for (std::size_t p = 0; p < r.pages.size(); ++p) {
      EaddOptions opt;
      if (r.code[p]) opt = {PageKind::kCode, PagePerms::ReadExecute(), {"main"}};
      d.eadd(id, p, r.pages[p], opt);
      d.eextend(id, p);
    }
    Measurement replay;
    for (const auto& rec : cpu.enclave(id).measurement.log()) replay.Append(rec);
    Digest c = Measurement::Compute(cpu.enclave(id).measurement.log());
    if (a == b && replay.digest() == c && replay.digest() == cpu.enclave(id).measurement.digest()) {
      ++deterministic;
    }
  }
  int sensitive = 0;
  for (int i = 0; i < kBitFlips; ++i) {
    BuildRecipe r = RandomRecipe(rng);
    Digest base = Build(r, 1);
    std::size_t page = rng() % r.pages.size();
    std::size_t bit = rng() % (kPage * 8);
    r.pages[page][bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    if (Build(r, 1) != base) ++sensitive;
  }
  bool ok = deterministic == kReplayedLogs && sensitive == kBitFlips;
  return {ok, std::to_string(deterministic) + "/" + std::to_string(kReplayedLogs) +
                  " replays bit-exact; " + std::to_string(sensitive) + "/" +
                  std::to_string(kBitFlips) + " single-bit flips change the digest"};
}

// ---------------------------------------------------------------- AC6

EnclaveId SimpleEnclave(Driver& d) {
  EnclaveId id = d.ecreate(2);
  d.eadd(id, 0, Bytes(kPage, 0x90), {PageKind::kCode, PagePerms::ReadExecute(), {"main"}});
  d.eadd(id, 1, Bytes(kPage, 0), {});
  d.eextend(id, 0);
  d.eextend(id, 1);
  d.einit(id);
  return id;
}

Result RegisterCacheHygiene() {
  Processor cpu({32, 6});
  Driver d(cpu);
  EnclaveId id = SimpleEnclave(d);
  const Region range = cpu.enclave(id).range;
  std::mt19937_64 rng(6);
  int clean = 0;
  for (int i = 0; i < kHygieneMarkers; ++i) {
    Marker m = MakeMarker(static_cast<SecretClass>(i % 3), static_cast<std::uint32_t>(rng()));
    std::uint64_t as_word = ReadU64(m);
    auto dirty = [&] {
      Bytes regs = cpu.visible_registers().Serialize();
      return Contains(regs, m) || cpu.address_cache().AnyOverlap(range.base, range.length);
    };
    ExecutionHandle h = cpu.eenter(id, "main");
    for (auto& g : cpu.registers(h).gpr) g = as_word;
    cpu.write(h, range.base + kPage, m);
    cpu.read(h, range.base + kPage, m.size());
    cpu.aex(h, InterruptKind::kTimer);
    bool after_aex = !dirty();
    ExecutionHandle h2 = cpu.eresume(id);
    bool restored = cpu.registers(h2).gpr[0] == as_word;
    cpu.read(h2, range.base + kPage, m.size());
    cpu.eexit(h2, {});
    bool after_exit = !dirty();
    if (after_aex && restored && after_exit) ++clean;
  }
  return {clean == kHygieneMarkers,
          std::to_string(clean) + "/" + std::to_string(kHygieneMarkers) +
              " markers absent from post-AEX and post-EEXIT registers and address cache"};
}

// ---------------------------------------------------------------- AC7

// One step of a register-and-memory computation inside the enclave.
void ComputeStep(Processor& cpu, const ExecutionHandle& h, Address data, int step) {
  RegisterFile& r = cpu.registers(h);
  r.gpr[0] = r.gpr[0] * 6364136223846793005ULL + 1442695040888963407ULL + step;
  r.gpr[1] ^= r.gpr[0] >> 17;
  r.gpr[2] += r.gpr[1] * 31;
  r.rip += 4;
  Bytes acc = cpu.read(h, data, 8);
  std::uint64_t v = ReadU64(acc) + r.gpr[2];
  Bytes out;
  AppendU64(out, v);
  cpu.write(h, data, out);
}

Bytes RunComputation(std::uint64_t seed, bool interrupt_every_step) {
  Processor cpu({16, seed});
  Driver d(cpu);
  EnclaveId id = SimpleEnclave(d);
  Address data = cpu.enclave(id).range.base + kPage;
  ExecutionHandle h = cpu.eenter(id, "main");
  cpu.registers(h).gpr[0] = seed;
  for (int step = 0; step < kComputationSteps; ++step) {
    ComputeStep(cpu, h, data, step);
    if (interrupt_every_step) {
      cpu.aex(h, InterruptKind::kTimer);
      h = cpu.eresume(id);
    }
  }
  RegisterFile final_regs = cpu.registers(h);
  Bytes result = final_regs.Serialize();
  Append(result, cpu.read(h, data, 8));
  cpu.eexit(h, {});
  return result;
}

Result InterruptTransparency() {
  int same = 0;
  for (int c = 0; c < kInterruptCases; ++c) {
    std::uint64_t seed = 100 + static_cast<std::uint64_t>(c);
    if (RunComputation(seed, false) == RunComputation(seed, true)) ++same;
  }
  return {same == kInterruptCases,
          std::to_string(same) + "/" + std::to_string(kInterruptCases) + " cases of " +
              std::to_string(kComputationSteps) +
              " steps identical with an AEX/ERESUME after every step"};
}

// ---------------------------------------------------------------- AC8

Result SecrecyScan() {
  std::ostringstream detail;
  bool ok = true;
  for (Scheme s : {Scheme::kAllSecrets, Scheme::kSeparateSecret, Scheme::kHybrid}) {
    MiniServer server(default_config(s, kSecrecyHandshakes, 1));
    for (int c = 1; c <= kSecrecyHandshakes; ++c) server.handshake(static_cast<ConnectionId>(c));
    PlatformMemory& mem = server.cpu().memory();
    Bytes dump = mem.adversary_read(0, mem.size());
    int key_hits = 0;
    for (const MarkerHit& h : server.markers().Scan(dump)) {
      if (h.kind != SecretClass::kCredentials && mem.effective_owner(h.offset).is_untrusted()) {
        ++key_hits;
      }
    }
    // Ground truth: the keys do exist, inside enclave pages.
    int inside = 0;
    for (std::size_t p = 0; p < mem.page_count(); ++p) {
      Domain owner = mem.effective_owner(p * kPage);
      if (!owner.is_enclave()) continue;
      for (const MarkerHit& h : server.markers().Scan(mem.mem_read(owner, p * kPage, kPage))) {
        if (h.kind != SecretClass::kCredentials) ++inside;
      }
    }
    ok = ok && key_hits == 0 && inside > kSecrecyHandshakes;
    detail << (s == Scheme::kAllSecrets ? "" : "; ") << "scheme " << static_cast<int>(s) << ": "
           << key_hits << " key markers outside enclaves (" << inside << " inside)";
  }
  return {ok, detail.str()};
}

// ---------------------------------------------------------------- AC9

Result FunctionalEquivalence() {
  std::string text;
  for (int c = 1; c <= kScriptConnections; ++c) text += "connect " + std::to_string(c) + "\n";
  for (int c = 1; c <= kScriptConnections; ++c) {
    std::string msg = "message from client " + std::to_string(c);
    text += "send " + std::to_string(c) + " " + ToHex(ToBytes(msg)) + "\n";
  }
  text += "send 2 " + ToHex(ToBytes("AUTH alice guess")) + "\n";
  text += "heartbeat 5 " + ToHex(ToBytes("keepalive")) + " 9\n";
  for (int c = 1; c <= kScriptConnections; ++c) text += "close " + std::to_string(c) + "\n";
  auto script = parse_script(text);

  std::string reference;
  int identical = 0;
  for (Scheme s : kAllSchemes) {
    MiniServer server(default_config(s, kScriptConnections, 1));
    std::string transcript;
    for (const auto& line : run_script(server, script)) transcript += line + "\n";
    if (reference.empty()) reference = transcript;
    if (transcript == reference) ++identical;
  }
  bool no_errors = reference.find(" error ") == std::string::npos;
  return {identical == 4 && no_errors,
          std::to_string(identical) + "/4 schemes produce the reference transcript (" +
              std::to_string(reference.size()) + " bytes, " + std::to_string(script.size()) +
              " commands)"};
}

}  // namespace
}  // namespace sgxpart

int main() {
  using sgxpart::Result;
  struct Criterion {
    const char* id;
    const char* name;
    std::function<Result()> run;
  };
  const Criterion criteria[] = {
      {"AC1", "comparison table reproduction", sgxpart::Table1Reproduction},
      {"AC2", "heartbeat over-read verdict matrix", sgxpart::VerdictMatrix},
      {"AC3", "capacity ordering", sgxpart::CapacityOrdering},
      {"AC4", "enclave lifecycle property suite", sgxpart::LifecycleSuite},
      {"AC5", "measurement determinism and sensitivity", sgxpart::MeasurementSuite},
      {"AC6", "register and address cache hygiene", sgxpart::RegisterCacheHygiene},
      {"AC7", "interrupt transparency", sgxpart::InterruptTransparency},
      {"AC8", "secrecy scan of untrusted memory", sgxpart::SecrecyScan},
      {"AC9", "functional equivalence across schemes", sgxpart::FunctionalEquivalence},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    Result r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    if (!r.pass) ++failed;
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << ": " << r.detail
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
