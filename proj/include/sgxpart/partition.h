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

#ifndef SGXPART_PARTITION_H_
#define SGXPART_PARTITION_H_

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace sgxpart {

enum class SecretClass { kPrivateKey, kSessionKey, kCredentials };
enum class Frequency { kHigh, kLow };
enum class Scheme { kWholeApplication = 1, kAllSecrets = 2, kSeparateSecret = 3, kHybrid = 4 };
enum class SizeClass { kS, kM, kL, kML };

inline constexpr Scheme kAllSchemes[] = {Scheme::kWholeApplication, Scheme::kAllSecrets,
                                         Scheme::kSeparateSecret, Scheme::kHybrid};

std::string_view ToString(SecretClass c);
std::string_view ToString(Scheme s);
std::string_view ToString(SizeClass c);
// Accepts 1..4 or the scheme name.
Scheme ParseScheme(std::string_view text);

struct CodeUnit {
  std::string name;
  std::set<SecretClass> secret_access;
  Frequency frequency = Frequency::kLow;
  int weight = 1;  // abstract size, a lines-of-code proxy
};

// One enclave instance. Per-connection roles appear once per connection.
struct EnclaveSpec {
  std::string role;
  std::vector<std::string> units;
  std::vector<SecretClass> secrets;
  std::optional<int> connection;  // nullopt: shared by all connections

  bool hosts(SecretClass c) const;
  bool runs(std::string_view unit) const;
};

struct ChannelSpec {
  std::string a;
  std::string b;
  bool per_connection = true;
  std::string purpose;
};

struct PartitionPlan {
  Scheme scheme = Scheme::kWholeApplication;
  int connections = 0;
  std::vector<CodeUnit> inventory;
  std::vector<EnclaveSpec> enclaves;
  std::vector<ChannelSpec> channels;
  // Code unit -> enclave role; nullopt means untrusted.
  std::map<std::string, std::optional<std::string>> placement;
  bool duplication = false;

  const CodeUnit& unit(std::string_view name) const;
  bool role_is_per_connection(std::string_view role) const;
  // The instance of `role` serving connection slot `slot`.
  const EnclaveSpec* instance(std::string_view role, int slot) const;
  int role_weight(std::string_view role) const;
};

struct PlanMetrics {
  int enclave_count = 0;
  int trusted_channels_per_connection = 0;
  int total_channels = 0;
  int max_enclave_weight = 0;
  SizeClass tcb_class = SizeClass::kS;
  bool duplication = false;
  int capacity_pages = 0;
  SizeClass capacity_class = SizeClass::kS;

  friend bool operator==(const PlanMetrics&, const PlanMetrics&) = default;
};

// TCB thresholds over the summed weight of the largest enclave.
inline constexpr int kTcbSmallMax = 20;
inline constexpr int kTcbMediumMax = 30;
// Capacity thresholds over total EPC pages.
inline constexpr int kCapacitySmallMax = 10;
inline constexpr int kCapacityMediumMax = 30;
inline constexpr int kWeightPerCodePage = 4;

std::vector<CodeUnit> default_inventory();
PartitionPlan plan(Scheme scheme, int connections);
PlanMetrics metrics(const PartitionPlan& p);
SizeClass tcb_class_for_weight(int weight);
SizeClass capacity_class_for_pages(int pages);
int enclave_pages(const PartitionPlan& p, const EnclaveSpec& e);

// {scheme, connections, enclaves:[...], channels:[...], metrics:{...}}.
nlohmann::json plan_to_json(const PartitionPlan& p);

// Throws Error(kInvalidPlan) describing the first broken invariant.
void validate(const PartitionPlan& p);

}  // namespace sgxpart

#endif  // SGXPART_PARTITION_H_
