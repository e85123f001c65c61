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

#include "acid/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

#include "acid/binary_io.hpp"
#include "acid/errors.hpp"

namespace acid {

namespace {

constexpr char kMagic[8] = {'A', 'C', 'I', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
constexpr Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::F32 : Precision::F64;
}

template <typename T>
nlohmann::json manifest_of(const ModelParams<T>& params) {
  nlohmann::json m = nlohmann::json::array();
  for (const auto& [name, t] : params.named()) m.push_back({{"name", name}, {"shape", t.shape()}});
  return m;
}

CheckpointHeader read_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": not a checkpoint");
  const auto version = io::read_le<std::uint32_t>(in);
  if (!in || version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = io::read_le<std::uint64_t>(in);
  if (!in || len > (1ull << 28)) throw FormatError(path + ": bad checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError(path + ": truncated checkpoint header");
  CheckpointHeader h;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format_version").get<std::uint32_t>() != kCheckpointVersion) {
      throw FormatError(path + ": header version mismatch");
    }
    h.model_config = ModelConfig::from_json(j.at("model_config"));
    h.precision = parse_precision(j.at("dtype").get<std::string>());
    h.step = j.at("step").get<std::uint64_t>();
    h.seed = j.at("rng").at("seed").get<std::uint64_t>();
    h.stream_position = j.at("rng").at("stream_position").get<std::uint64_t>();
    h.has_optimizer = j.at("optimizer").at("present").get<bool>();
    h.optimizer_t = j.at("optimizer").at("t").get<std::uint64_t>();
    h.train_config = j.value("train_config", nlohmann::json(nullptr));
    h.manifest = j.at("manifest");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint header: " + e.what());
  }
  return h;
}

template <typename Stored, typename T>
void read_payload(std::istream& in, std::span<T> out, const std::string& path) {
  std::vector<Stored> buf(out.size());
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(Stored)));
  if (!in) throw FormatError(path + ": truncated checkpoint payload");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(buf[i]);
}

template <typename T>
void read_values(std::istream& in, Precision p, std::span<T> out, const std::string& path) {
  if (p == Precision::F32) {
    read_payload<float>(in, out, path);
  } else {
    read_payload<double>(in, out, path);
  }
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32" || text == "float32") return Precision::F32;
  if (text == "f64" || text == "float64") return Precision::F64;
  throw ConfigError("unknown precision '" + text + "' (expected f32 or f64)");
}

template <typename T>
void save_checkpoint(const std::string& path, const TrainState<T>& state, const nlohmann::json& train_config,
                     bool with_optimizer) {
  const auto named = state.model.params().named();
  const bool opt = with_optimizer && !state.optimizer.empty();
  nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"model_config", state.model.config().to_json()},
      {"manifest", manifest_of(state.model.params())},
      {"dtype", to_string(precision_of<T>())},
      {"step", state.step},
      {"rng", {{"seed", state.seed}, {"stream_position", state.stream_position}}},
      {"optimizer", {{"present", opt}, {"t", opt ? state.optimizer.t : 0}}},
      {"train_config", train_config}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(kMagic, 8);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  auto dump = [&](std::span<const T> values) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  };
  for (const auto& [name, t] : named) dump(t.data());
  if (opt) {
    if (state.optimizer.m.size() != named.size()) throw ContractError("optimizer state does not match parameters");
    for (const auto& m : state.optimizer.m) dump(m);
    for (const auto& v : state.optimizer.v) dump(v);
  }
  out.flush();
  if (!out) throw FormatError("write failed for " + path);
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  return read_header(in, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  const CheckpointHeader h = read_header(in, path);
  ModelParams<T> params = ModelParams<T>::allocate(h.model_config);
  auto named = params.named();
  if (!h.manifest.is_array() || h.manifest.size() != named.size()) {
    throw FormatError(path + ": manifest lists " + std::to_string(h.manifest.size()) + " tensors, model has " +
                      std::to_string(named.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& entry = h.manifest[i];
    if (entry.value("name", "") != named[i].first || entry.value("shape", Shape{}) != named[i].second.shape()) {
      throw FormatError(path + ": manifest entry " + std::to_string(i) + " does not match " + named[i].first +
                        shape_str(named[i].second.shape()));
    }
    read_values<T>(in, h.precision, named[i].second.mutable_data(), path);
  }
  OptimizerState<T> opt;
  if (h.has_optimizer) {
    opt.t = h.optimizer_t;
    for (auto* moments : {&opt.m, &opt.v}) {
      for (const auto& [name, t] : named) {
        moments->emplace_back(t.size());
        read_values<T>(in, h.precision, std::span<T>(moments->back()), path);
      }
    }
  }
  in.peek();
  if (!in.eof()) throw FormatError(path + ": trailing bytes after checkpoint payload");
  return Checkpoint<T>{TrainState<T>{AcidModel<T>(h.model_config, std::move(params)), std::move(opt), h.step,
                                     h.seed, h.stream_position},
                       h.train_config};
}

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path);
  std::uint64_t hash = 0xcbf29ce484222325ull;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    hash = io::fnv1a(std::span<const char>(buf.data(), static_cast<std::size_t>(in.gcount())), hash);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

template void save_checkpoint(const std::string&, const TrainState<float>&, const nlohmann::json&, bool);
template void save_checkpoint(const std::string&, const TrainState<double>&, const nlohmann::json&, bool);
template Checkpoint<float> load_checkpoint(const std::string&);
template Checkpoint<double> load_checkpoint(const std::string&);

}  // namespace acid
