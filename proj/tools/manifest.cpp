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

#include "manifest.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "acid/checkpoint.hpp"
#include "acid/errors.hpp"

namespace acid::cli {

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : start_(std::chrono::steady_clock::now()) {
  j_["format_version"] = 1;
  j_["tool_version"] = kToolVersion;
  j_["command"] = std::move(command);
  j_["argv"] = std::move(argv);
  j_["config"] = nlohmann::json::object();
  j_["seed_ranges"] = nlohmann::json::object();
  j_["inputs"] = nlohmann::json::array();
  j_["outputs"] = nlohmann::json::array();
  j_["warnings"] = nlohmann::json::array();
  j_["status"] = "ok";
}

void RunManifest::input(const std::string& path) {
  j_["inputs"].push_back({{"path", path}, {"fingerprint", file_fingerprint(path)}});
}

void RunManifest::output(const std::string& path, bool deterministic) {
  j_["outputs"].push_back(
      {{"path", path}, {"fingerprint", file_fingerprint(path)}, {"deterministic", deterministic}});
}

void RunManifest::warn(const std::string& message) {
  std::cerr << "warning: " << message << "\n";
  j_["warnings"].push_back(message);
}

void RunManifest::write(const std::string& path) {
  j_["wallclock_ms"] =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path);
  out << j_.dump(2) << "\n";
}

nlohmann::json read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read manifest " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad manifest " + path + ": " + e.what());
  }
}

}  // namespace acid::cli
