// Copyright 2026 The ACID Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <json.hpp>
#include <string>
#include <vector>

namespace acid::cli {

inline constexpr const char* kToolVersion = "1.0.0";

/// One JSON record per run: the command, its argv, the resolved
/// configuration, seed ranges, artifact fingerprints and wall clock.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void set_config(nlohmann::json config) { j_["config"] = std::move(config); }
  void seed_range(const std::string& role, const std::string& range) { j_["seed_ranges"][role] = range; }
  void input(const std::string& path);
  /// Outputs that depend on wall-clock time are recorded but not replay-checked.
  void output(const std::string& path, bool deterministic = true);
  void warn(const std::string& message);
  void set_status(const std::string& status) { j_["status"] = status; }
  void write(const std::string& path);

  const nlohmann::json& json() const { return j_; }

 private:
  nlohmann::json j_;
  std::chrono::steady_clock::time_point start_;
};

nlohmann::json read_manifest(const std::string& path);

}  // namespace acid::cli
