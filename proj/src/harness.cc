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

#include "sgxpart/harness.h"

#include <iomanip>
#include <numeric>
#include <sstream>

#include "sgxpart/error.h"
#include "sgxpart/markers.h"

namespace sgxpart {
namespace {

constexpr SecretClass kClasses[] = {SecretClass::kPrivateKey, SecretClass::kSessionKey,
                                    SecretClass::kCredentials};
constexpr std::size_t kSecretValueSize = 32;

std::string YesNo(bool b) { return b ? "Yes" : "No"; }

}  // namespace

AttackReport run_attack(const AttackOptions& options) {
  if (options.connections < 1) {
    throw Error(ErrorCode::kInvalidArgument, "an attack needs at least one connection");
  }
  ServerConfig config = default_config(options.scheme, options.connections, options.seed);
  config.vulnerable_heartbeat = !options.patched;
  MiniServer server(std::move(config));
  for (int c = 1; c <= options.connections; ++c) {
    server.handshake(static_cast<ConnectionId>(c));
  }
  Bytes response = server.heartbeat(1, {options.payload, options.claimed_length});

  AttackReport report;
  report.scheme = options.scheme;
  report.connections = options.connections;
  report.seed = options.seed;
  report.patched = options.patched;
  report.response_length = response.size();
  for (SecretClass k : kClasses) report.leaked[k] = false;
  for (const MarkerHit& hit : server.markers().Scan(response)) {
    std::size_t len = std::min(kMarkerSize + kSecretValueSize, response.size() - hit.offset);
    report.leaked_spans.push_back({hit.offset, len, hit.kind, hit.instance});
    report.leaked[hit.kind] = true;
  }
  report.counters = server.counters();
  server.shutdown();
  report.live_enclaves_after_shutdown = server.cpu().live_enclave_count();
  return report;
}

LeakMap expected_leaks(Scheme scheme, bool patched) {
  LeakMap m;
  for (SecretClass k : kClasses) m[k] = false;
  if (patched) return m;
  if (scheme == Scheme::kWholeApplication) {
    m[SecretClass::kPrivateKey] = true;
    m[SecretClass::kSessionKey] = true;
  } else {
    m[SecretClass::kCredentials] = true;
  }
  return m;
}

bool verdict_matches(const AttackReport& report) {
  return report.leaked == expected_leaks(report.scheme, report.patched);
}

std::vector<ComparisonRow> table1(int connections, std::uint64_t seed) {
  std::vector<ComparisonRow> rows;
  for (Scheme s : kAllSchemes) {
    ComparisonRow row;
    row.scheme = s;
    row.plan = plan(s, connections);
    row.metrics = metrics(row.plan);
    row.attack = run_attack({s, connections, seed});
    const auto& e = row.attack.counters.entries_per_handshake;
    if (!e.empty()) {
      row.entries_per_handshake = std::accumulate(e.begin(), e.end(), std::uint64_t{0}) / e.size();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Format ParseFormat(std::string_view text) {
  if (text == "table") return Format::kTable;
  if (text == "json") return Format::kJson;
  throw Error(ErrorCode::kInvalidArgument, "unknown format " + std::string(text));
}

nlohmann::json to_json(const AttackReport& r) {
  nlohmann::json leaked;
  for (const auto& [k, v] : r.leaked) leaked[std::string(ToString(k))] = v;
  nlohmann::json spans = nlohmann::json::array();
  for (const LeakSpan& s : r.leaked_spans) {
    spans.push_back({{"offset", s.offset},
                     {"length", s.length},
                     {"classification", ToString(s.classification)},
                     {"instance", s.instance}});
  }
  return {{"scheme", ToString(r.scheme)},
          {"scheme_number", static_cast<int>(r.scheme)},
          {"connections", r.connections},
          {"seed", r.seed},
          {"patched", r.patched},
          {"claimed_length", kAttackClaimedLength},
          {"leaked", leaked},
          {"leaked_spans", spans},
          {"response_length", r.response_length},
          {"verdict_matches_expected", verdict_matches(r)},
          {"counters",
           {{"enclaves_created", r.counters.enclaves_created},
            {"channels_established", r.counters.channels_established},
            {"epc_pages", r.counters.epc_pages},
            {"entries_per_handshake", r.counters.entries_per_handshake},
            {"live_enclaves_after_shutdown", r.live_enclaves_after_shutdown}}}};
}

nlohmann::json to_json(const ComparisonRow& row) {
  nlohmann::json j = plan_to_json(row.plan);
  nlohmann::json attack = to_json(row.attack);
  j["counters"] = attack["counters"];
  j["counters"]["mean_entries_per_handshake"] = row.entries_per_handshake;
  attack.erase("counters");
  j["attack"] = attack;
  return j;
}

std::string emit(const std::vector<ComparisonRow>& rows, Format format) {
  if (format == Format::kJson) {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const ComparisonRow& r : rows) j["rows"].push_back(to_json(r));
    return j.dump(2) + "\n";
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    static constexpr int kWidths[] = {20, 10, 15, 5, 13, 10, 12, 9, 9};
    for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
      out << std::left << std::setw(kWidths[i]) << cells[i];
    }
    out << cells.back();
    out << "\n";
  };
  line({"scheme", "enclaves", "channels/conn", "TCB", "duplication", "capacity", "entries/hs",
        "leak:PK", "leak:SK", "leak:creds"});
  for (const ComparisonRow& r : rows) {
    const PlanMetrics& m = r.metrics;
    line({std::to_string(static_cast<int>(r.scheme)) + " " + std::string(ToString(r.scheme)),
          std::to_string(m.enclave_count), std::to_string(m.trusted_channels_per_connection),
          std::string(ToString(m.tcb_class)), YesNo(m.duplication),
          std::string(ToString(m.capacity_class)) + "(" + std::to_string(m.capacity_pages) + ")",
          std::to_string(r.entries_per_handshake),
          YesNo(r.attack.leaked.at(SecretClass::kPrivateKey)),
          YesNo(r.attack.leaked.at(SecretClass::kSessionKey)),
          YesNo(r.attack.leaked.at(SecretClass::kCredentials))});
  }
  return out.str();
}

std::string emit(const AttackReport& report, Format format) {
  if (format == Format::kJson) return to_json(report).dump(2) + "\n";
  std::ostringstream out;
  out << "scheme " << static_cast<int>(report.scheme) << " (" << ToString(report.scheme)
      << "), " << report.connections << " connection(s), seed " << report.seed << ", "
      << (report.patched ? "patched" : "vulnerable") << " heartbeat\n";
  out << "response length: " << report.response_length << "\n";
  for (const auto& [k, v] : report.leaked) {
    out << "  " << std::left << std::setw(12) << ToString(k) << (v ? "LEAKED" : "safe") << "\n";
  }
  for (const LeakSpan& s : report.leaked_spans) {
    out << "  span offset=" << s.offset << " length=" << s.length
        << " class=" << ToString(s.classification) << " instance=" << s.instance << "\n";
  }
  out << "verdict: " << (verdict_matches(report) ? "as expected" : "MISMATCH") << "\n";
  return out.str();
}

}  // namespace sgxpart
