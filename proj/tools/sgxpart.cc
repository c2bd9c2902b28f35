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

// sgxpart: experiment runner for the partitioned enclave simulator.

#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "sgxpart/error.h"
#include "sgxpart/harness.h"
#include "sgxpart/miniserver.h"

namespace {

constexpr int kExitCheckFailed = 2;

using sgxpart::Format;

int Table1(std::uint64_t seed, int connections, const std::string& format, bool check) {
  auto rows = sgxpart::table1(connections, seed);
  std::cout << sgxpart::emit(rows, sgxpart::ParseFormat(format));
  if (!check) return 0;
  bool ok = true;
  for (const auto& r : rows) ok = ok && sgxpart::verdict_matches(r.attack);
  if (!ok) std::cerr << "attack verdicts differ from the expected matrix\n";
  return ok ? 0 : kExitCheckFailed;
}

int Attack(int scheme, bool all, int connections, bool patched, std::uint64_t seed,
           const std::string& format, bool check) {
  std::vector<sgxpart::Scheme> schemes;
  if (all) {
    schemes.assign(std::begin(sgxpart::kAllSchemes), std::end(sgxpart::kAllSchemes));
  } else {
    schemes.push_back(static_cast<sgxpart::Scheme>(scheme));
  }
  // Each scheme runs on its own platform instance; nothing is shared.
  std::vector<std::future<sgxpart::AttackReport>> runs;
  for (auto s : schemes) {
    runs.push_back(std::async(std::launch::async, [=] {
      return sgxpart::run_attack({s, connections, seed, patched});
    }));
  }
  Format fmt = sgxpart::ParseFormat(format);
  bool ok = true;
  nlohmann::json all_json = nlohmann::json::array();
  for (auto& f : runs) {
    sgxpart::AttackReport r = f.get();
    ok = ok && sgxpart::verdict_matches(r);
    if (fmt == Format::kJson && all) {
      all_json.push_back(sgxpart::to_json(r));
    } else {
      std::cout << sgxpart::emit(r, fmt);
    }
  }
  if (fmt == Format::kJson && all) std::cout << all_json.dump(2) << "\n";
  if (check && !ok) {
    std::cerr << "attack verdict differs from the expected matrix\n";
    return kExitCheckFailed;
  }
  return 0;
}

int Run(int scheme, int connections, std::uint64_t seed, bool patched,
        const std::string& script_path, const std::string& trace_path) {
  std::ifstream in(script_path);
  if (!in) {
    std::cerr << "cannot read " << script_path << "\n";
    return 1;
  }
  std::stringstream text;
  text << in.rdbuf();
  auto script = sgxpart::parse_script(text.str());
  auto config =
      sgxpart::default_config(static_cast<sgxpart::Scheme>(scheme), connections, seed);
  config.vulnerable_heartbeat = !patched;
  sgxpart::MiniServer server(std::move(config));
  for (const auto& line : sgxpart::run_script(server, script)) std::cout << line << "\n";
  server.shutdown();
  if (!trace_path.empty()) {
    std::ofstream t(trace_path);
    t << server.cpu().trace().Text();
    if (!t) {
      std::cerr << "cannot write " << trace_path << "\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partitioned enclave simulator: scheme comparison and HeartBleed harness"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::string format = "table";
  bool check = false;
  int connections = 10;

  auto* t1 = app.add_subcommand("table1", "Compare the four partitioning schemes");
  t1->add_option("--seed", seed, "Simulation seed");
  t1->add_option("--connections", connections, "Connections per scheme")
      ->check(CLI::Range(1, 200));
  t1->add_option("--format", format)->check(CLI::IsMember({"table", "json"}));
  t1->add_flag("--check", check, "Exit 2 if attack verdicts differ from the expected matrix");

  int scheme = 1;
  int attack_connections = 1;
  bool patched = false;
  bool all = false;
  auto* atk = app.add_subcommand("attack", "Run the heartbeat over-read against one scheme");
  auto* scheme_opt = atk->add_option("--scheme", scheme, "Scheme 1-4")->check(CLI::Range(1, 4));
  auto* all_opt = atk->add_flag("--all-schemes", all, "Attack every scheme in parallel");
  scheme_opt->excludes(all_opt);
  atk->add_option("--connections", attack_connections)->check(CLI::Range(1, 200));
  atk->add_flag("--patched", patched, "Use the bounds-checked heartbeat");
  atk->add_option("--seed", seed);
  atk->add_option("--format", format)->check(CLI::IsMember({"table", "json"}));
  atk->add_flag("--check", check, "Exit 2 if the verdict differs from the expected matrix");

  int run_scheme = 1;
  int run_connections = 10;
  bool run_patched = false;
  std::string script_path;
  std::string trace_path;
  auto* run = app.add_subcommand("run", "Drive a server with a client script");
  run->add_option("--scheme", run_scheme)->required()->check(CLI::Range(1, 4));
  run->add_option("--script", script_path)->required();
  run->add_option("--trace", trace_path, "Write the platform event trace here");
  run->add_option("--connections", run_connections)->check(CLI::Range(1, 200));
  run->add_option("--seed", seed);
  run->add_flag("--patched", run_patched);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*t1) return Table1(seed, connections, format, check);
    if (*atk) {
      if (!all && scheme_opt->count() == 0) {
        std::cerr << "attack: --scheme or --all-schemes is required\n";
        return 1;
      }
      return Attack(scheme, all, attack_connections, patched, seed, format, check);
    }
    if (*run) {
      return Run(run_scheme, run_connections, seed, run_patched, script_path, trace_path);
    }
  } catch (const sgxpart::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
