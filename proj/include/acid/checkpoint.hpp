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

#include <json.hpp>
#include <string>

#include "acid/trainer.hpp"

namespace acid {

enum class Precision { F32, F64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

/// Layout: "ACIDCKPT", u32 format version, u64 header length, JSON header
/// {format_version, model_config, manifest [(name, shape)], dtype, step,
/// rng {seed, stream_position}, optimizer {present, t}, train_config},
/// then the flat little-endian parameter payload in manifest order and,
/// when present, the Adam first moments followed by the second moments.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  ModelConfig model_config;
  Precision precision = Precision::F32;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint64_t stream_position = 0;
  bool has_optimizer = false;
  std::uint64_t optimizer_t = 0;
  nlohmann::json train_config;  // null when absent
  nlohmann::json manifest;
};

template <typename T>
struct Checkpoint {
  TrainState<T> state;
  nlohmann::json train_config;
};

/// Writes the state with T-wide payload. Throws FormatError on I/O failure.
template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& state,
                     const nlohmann::json& train_config = nullptr, bool with_optimizer = true);

/// Reads a checkpoint of either payload width, converting to T. Throws
/// FormatError on a bad magic, version, manifest or truncated payload.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path);

CheckpointHeader read_checkpoint_header(const std::string& path);

/// FNV-1a digest of the file bytes, as 16 hex digits.
std::string file_fingerprint(const std::string& path);

}  // namespace acid
