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

#ifndef SGXPART_HARNESS_H_
#define SGXPART_HARNESS_H_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sgxpart/bytes.h"
#include "sgxpart/miniserver.h"
#include "sgxpart/partition.h"

namespace sgxpart {

inline constexpr std::uint16_t kAttackClaimedLength = 4096;

struct AttackOptions {
  Scheme scheme = Scheme::kWholeApplication;
  int connections = 1;
  std::uint64_t seed = 1;
  bool patched = false;
  std::uint16_t claimed_length = kAttackClaimedLength;
  Bytes payload = ToBytes("hello");
};

struct LeakSpan {
  std::size_t offset = 0;
  std::size_t length = 0;
  SecretClass classification = SecretClass::kPrivateKey;
  std::uint32_t instance = 0;
};

using LeakMap = std::map<SecretClass, bool>;

struct AttackReport {
  Scheme scheme = Scheme::kWholeApplication;
  int connections = 0;
  std::uint64_t seed = 0;
  bool patched = false;
  LeakMap leaked;
  std::vector<LeakSpan> leaked_spans;
  std::size_t response_length = 0;
  ServerCounters counters;
  std::size_t live_enclaves_after_shutdown = 0;
};

// Starts a server, performs `connections` handshakes, sends one over-long
// heartbeat on connection 1 and classifies the response by marker scan.
AttackReport run_attack(const AttackOptions& options);

// Verdicts the partitioning argument predicts for each scheme.
LeakMap expected_leaks(Scheme scheme, bool patched);
bool verdict_matches(const AttackReport& report);

struct ComparisonRow {
  Scheme scheme = Scheme::kWholeApplication;
  PartitionPlan plan;
  PlanMetrics metrics;
  AttackReport attack;
  // Mean over the run's handshakes; every handshake of a run costs the same.
  std::uint64_t entries_per_handshake = 0;
};

std::vector<ComparisonRow> table1(int connections = 10, std::uint64_t seed = 1);

enum class Format { kTable, kJson };
Format ParseFormat(std::string_view text);

nlohmann::json to_json(const AttackReport& report);
nlohmann::json to_json(const ComparisonRow& row);
std::string emit(const std::vector<ComparisonRow>& rows, Format format);
std::string emit(const AttackReport& report, Format format);

}  // namespace sgxpart

#endif  // SGXPART_HARNESS_H_
