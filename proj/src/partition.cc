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

#include "sgxpart/partition.h"

#include <algorithm>
#include <cctype>

#include "sgxpart/error.h"

namespace sgxpart {
namespace {

using Secrets = std::vector<SecretClass>;

struct RoleDef {
  std::string role;
  std::vector<std::string> units;
  Secrets secrets;
  bool per_connection;
};

PartitionPlan Build(Scheme scheme, int connections, const std::vector<RoleDef>& roles,
                    std::vector<ChannelSpec> channels) {
  PartitionPlan p;
  p.scheme = scheme;
  p.connections = connections;
  p.inventory = default_inventory();
  p.channels = std::move(channels);
  for (const auto& unit : p.inventory) p.placement[unit.name] = std::nullopt;
  for (const auto& role : roles) {
    for (const auto& unit : role.units) p.placement[unit] = role.role;
    if (role.per_connection) {
      p.duplication = true;
      for (int c = 0; c < connections; ++c) {
        p.enclaves.push_back({role.role, role.units, role.secrets, c});
      }
    } else {
      p.enclaves.push_back({role.role, role.units, role.secrets, std::nullopt});
    }
  }
  return p;
}

}  // namespace

std::string_view ToString(SecretClass c) {
  switch (c) {
    case SecretClass::kPrivateKey: return "PrivateKey";
    case SecretClass::kSessionKey: return "SessionKey";
    case SecretClass::kCredentials: return "Credentials";
  }
  return "?";
}

std::string_view ToString(Scheme s) {
  switch (s) {
    case Scheme::kWholeApplication: return "WholeApplication";
    case Scheme::kAllSecrets: return "AllSecrets";
    case Scheme::kSeparateSecret: return "SeparateSecret";
    case Scheme::kHybrid: return "Hybrid";
  }
  return "?";
}

std::string_view ToString(SizeClass c) {
  switch (c) {
    case SizeClass::kS: return "S";
    case SizeClass::kM: return "M";
    case SizeClass::kL: return "L";
    case SizeClass::kML: return "M-L";
  }
  return "?";
}

Scheme ParseScheme(std::string_view text) {
  for (Scheme s : kAllSchemes) {
    if (text == std::to_string(static_cast<int>(s))) return s;
    std::string name(ToString(s));
    if (text.size() == name.size() &&
        std::equal(text.begin(), text.end(), name.begin(), [](char a, char b) {
          return std::tolower(static_cast<unsigned char>(a)) ==
                 std::tolower(static_cast<unsigned char>(b));
        })) {
      return s;
    }
  }
  throw Error(ErrorCode::kParseError, "unknown scheme '" + std::string(text) + "'");
}

bool EnclaveSpec::hosts(SecretClass c) const {
  return std::find(secrets.begin(), secrets.end(), c) != secrets.end();
}

bool EnclaveSpec::runs(std::string_view unit) const {
  return std::find(units.begin(), units.end(), unit) != units.end();
}

const CodeUnit& PartitionPlan::unit(std::string_view name) const {
  for (const auto& u : inventory) {
    if (u.name == name) return u;
  }
  throw Error(ErrorCode::kInvalidPlan, "unknown code unit " + std::string(name));
}

bool PartitionPlan::role_is_per_connection(std::string_view role) const {
  for (const auto& e : enclaves) {
    if (e.role == role) return e.connection.has_value();
  }
  return false;
}

const EnclaveSpec* PartitionPlan::instance(std::string_view role, int slot) const {
  for (const auto& e : enclaves) {
    if (e.role == role && (!e.connection || *e.connection == slot)) return &e;
  }
  return nullptr;
}

int PartitionPlan::role_weight(std::string_view role) const {
  for (const auto& e : enclaves) {
    if (e.role != role) continue;
    int total = 0;
    for (const auto& u : e.units) total += unit(u).weight;
    return total;
  }
  return 0;
}

std::vector<CodeUnit> default_inventory() {
  using enum SecretClass;
  using enum Frequency;
  return {
      {"handshake_fsm", {kPrivateKey, kSessionKey}, kHigh, 8},
      {"key_generation", {kSessionKey}, kHigh, 4},
      {"private_key_ops", {kPrivateKey}, kHigh, 4},
      {"record_encrypt", {kSessionKey}, kHigh, 3},
      {"record_decrypt", {kSessionKey}, kHigh, 3},
      {"heartbeat", {}, kLow, 2},
      {"cert_parse", {}, kLow, 6},
      {"io_dispatch", {}, kLow, 5},
      {"session_mgmt", {}, kLow, 4},
      {"credential_check", {kCredentials}, kLow, 3},
  };
}

PartitionPlan plan(Scheme scheme, int connections) {
  if (connections < 0) {
    throw Error(ErrorCode::kInvalidArgument, "negative connection count");
  }
  using enum SecretClass;
  switch (scheme) {
    case Scheme::kWholeApplication:
      // The library enclave; the application's credential check stays outside.
      return Build(scheme, connections,
                   {{"application",
                     {"handshake_fsm", "key_generation", "private_key_ops",
                      "record_encrypt", "record_decrypt", "heartbeat", "cert_parse",
                      "io_dispatch", "session_mgmt"},
                     {kPrivateKey, kSessionKey},
                     false}},
                   {});
    case Scheme::kAllSecrets:
      return Build(scheme, connections,
                   {{"secrets",
                     {"handshake_fsm", "key_generation", "private_key_ops"},
                     {kPrivateKey, kSessionKey},
                     false},
                    {"records", {"record_encrypt", "record_decrypt"}, {kSessionKey}, false}},
                   {{"secrets", "records", false, "session-key hand-off"}});
    case Scheme::kSeparateSecret:
      return Build(scheme, connections,
                   {{"handshake", {"handshake_fsm", "key_generation"}, {kSessionKey}, true},
                    {"data_exchange", {"record_encrypt", "record_decrypt"}, {kSessionKey}, true},
                    {"private_key", {"private_key_ops"}, {kPrivateKey}, false}},
                   {{"handshake", "private_key", true, "key-share unwrap"},
                    {"handshake", "data_exchange", true, "session-key hand-off"},
                    {"data_exchange", "private_key", true, "renegotiation"}});
    case Scheme::kHybrid:
      return Build(scheme, connections,
                   {{"session",
                     {"handshake_fsm", "key_generation", "record_encrypt", "record_decrypt"},
                     {kPrivateKey, kSessionKey},
                     true},
                    {"service", {"private_key_ops"}, {}, false}},
                   {{"session", "service", true, "request"},
                    {"service", "session", true, "response"}});
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown scheme");
}

SizeClass tcb_class_for_weight(int weight) {
  if (weight <= kTcbSmallMax) return SizeClass::kS;
  if (weight <= kTcbMediumMax) return SizeClass::kM;
  return SizeClass::kL;
}

SizeClass capacity_class_for_pages(int pages) {
  // Within 20% of the M/L boundary the class straddles.
  if (pages * 5 >= kCapacityMediumMax * 4 && pages * 5 <= kCapacityMediumMax * 6) {
    return SizeClass::kML;
  }
  if (pages <= kCapacitySmallMax) return SizeClass::kS;
  if (pages <= kCapacityMediumMax) return SizeClass::kM;
  return SizeClass::kL;
}

int enclave_pages(const PartitionPlan& p, const EnclaveSpec& e) {
  int weight = 0;
  for (const auto& u : e.units) weight += p.unit(u).weight;
  int code_pages = (weight + kWeightPerCodePage - 1) / kWeightPerCodePage;
  return code_pages + static_cast<int>(e.secrets.size());
}

PlanMetrics metrics(const PartitionPlan& p) {
  PlanMetrics m;
  m.enclave_count = static_cast<int>(p.enclaves.size());
  for (const auto& c : p.channels) {
    if (c.per_connection) ++m.trusted_channels_per_connection;
    m.total_channels += c.per_connection ? p.connections : 1;
  }
  for (const auto& e : p.enclaves) {
    m.max_enclave_weight = std::max(m.max_enclave_weight, p.role_weight(e.role));
    m.capacity_pages += enclave_pages(p, e);
  }
  m.tcb_class = tcb_class_for_weight(m.max_enclave_weight);
  m.duplication = p.duplication;
  m.capacity_class = capacity_class_for_pages(m.capacity_pages);
  return m;
}

void validate(const PartitionPlan& p) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::kInvalidPlan, why); };
  std::set<std::string> names;
  for (const auto& u : p.inventory) {
    if (u.weight <= 0) fail("unit " + u.name + " has non-positive weight");
    if (!names.insert(u.name).second) fail("duplicate unit " + u.name);
    if (!p.placement.contains(u.name)) fail("unit " + u.name + " is not placed");
  }
  auto role_exists = [&](const std::string& role) {
    return std::any_of(p.enclaves.begin(), p.enclaves.end(),
                       [&](const EnclaveSpec& e) { return e.role == role; });
  };
  for (const auto& [unit, role] : p.placement) {
    if (!names.contains(unit)) fail("placement names unknown unit " + unit);
    // Per-connection roles have no instances when there are no connections.
    if (role && p.connections > 0 && !role_exists(*role)) {
      fail("unit " + unit + " placed in missing role " + *role);
    }
    if (role && std::any_of(p.enclaves.begin(), p.enclaves.end(), [&](const EnclaveSpec& e) {
          return e.role == *role && !e.runs(unit);
        })) {
      fail("unit " + unit + " is placed in " + *role + " but not listed there");
    }
  }
  std::map<std::string, int> instances;
  for (const auto& e : p.enclaves) {
    ++instances[e.role];
    for (const auto& u : e.units) {
      if (!names.contains(u)) fail("enclave " + e.role + " runs unknown unit " + u);
      auto it = p.placement.find(u);
      if (it == p.placement.end() || it->second != e.role) {
        fail("unit " + u + " is listed in " + e.role + " but placed elsewhere");
      }
    }
  }
  for (const auto& [role, count] : instances) {
    int expected = p.role_is_per_connection(role) ? p.connections : 1;
    if (count != expected) fail("role " + role + " has the wrong instance count");
  }
  for (const auto& c : p.channels) {
    if (p.connections == 0 && c.per_connection) continue;
    if (!role_exists(c.a) || !role_exists(c.b)) {
      fail("channel " + c.a + "<->" + c.b + " references a missing role");
    }
  }
  for (SecretClass k : {SecretClass::kPrivateKey, SecretClass::kSessionKey}) {
    bool hosted = p.enclaves.empty() || p.connections == 0 ||
                  std::any_of(p.enclaves.begin(), p.enclaves.end(),
                              [&](const EnclaveSpec& e) { return e.hosts(k); });
    if (!hosted) fail(std::string(ToString(k)) + " is not hosted by any enclave");
  }
}

nlohmann::json plan_to_json(const PartitionPlan& p) {
  nlohmann::json j;
  j["scheme"] = ToString(p.scheme);
  j["scheme_number"] = static_cast<int>(p.scheme);
  j["connections"] = p.connections;
  j["enclaves"] = nlohmann::json::array();
  for (const auto& e : p.enclaves) {
    nlohmann::json secrets = nlohmann::json::array();
    for (SecretClass s : e.secrets) secrets.push_back(ToString(s));
    nlohmann::json entry{{"role", e.role}, {"units", e.units}, {"secrets", secrets}};
    if (e.connection) {
      entry["connection"] = *e.connection;
    } else {
      entry["connection"] = "shared";
    }
    j["enclaves"].push_back(std::move(entry));
  }
  j["channels"] = nlohmann::json::array();
  for (const auto& c : p.channels) {
    j["channels"].push_back(
        {{"a", c.a}, {"b", c.b}, {"per_connection", c.per_connection}, {"purpose", c.purpose}});
  }
  PlanMetrics m = metrics(p);
  j["metrics"] = {{"enclave_count", m.enclave_count},
                  {"trusted_channels_per_connection", m.trusted_channels_per_connection},
                  {"total_channels", m.total_channels},
                  {"max_enclave_weight", m.max_enclave_weight},
                  {"tcb_class", ToString(m.tcb_class)},
                  {"duplication", m.duplication},
                  {"capacity_pages", m.capacity_pages},
                  {"capacity_class", ToString(m.capacity_class)}};
  return j;
}

}  // namespace sgxpart
