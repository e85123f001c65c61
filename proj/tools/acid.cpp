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

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "acid/calibration.hpp"
#include "acid/checkpoint.hpp"
#include "acid/errors.hpp"
#include "acid/evaluation.hpp"
#include "acid/trainer.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace acid::cli {
namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kSeedGuard = 3, kNumeric = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t env_threads() {
  if (const char* v = std::getenv("ACID_THREADS")) {
    try {
      const long n = std::stol(v);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring ACID_THREADS=" << v << "\n";
  }
  return 1;
}

std::string manifest_path_for(const std::string& out, bool is_dir, const std::string& override_path) {
  if (!override_path.empty()) return override_path;
  return is_dir ? (fs::path(out) / "manifest.json").string() : out + ".manifest.json";
}

// ------------------------------------------------------------ config space

struct SpaceOptions {
  std::string file;
  std::vector<std::size_t> n, dz, k;
  std::size_t dx = 1, dy = 1;
  std::vector<std::string> models;
  double noise = 0.3;
  bool linear = false;
  std::vector<CLI::Option*> opts;

  void add(CLI::App* app) {
    opts.push_back(app->add_option("--config-space", file, "JSON config space file"));
    opts.push_back(app->add_option("--n", n, "sample sizes to draw from"));
    opts.push_back(app->add_option("--dz", dz, "Z dimensions to draw from"));
    opts.push_back(app->add_option("--k", k, "mechanism hidden widths to draw from"));
    opts.push_back(app->add_option("--dx", dx, "X dimension"));
    opts.push_back(app->add_option("--dy", dy, "Y dimension"));
    opts.push_back(app->add_option("--models", models, "generating models (M1..M6)"));
    opts.push_back(app->add_option("--noise", noise, "additive noise scale"));
    opts.push_back(app->add_flag("--linear", linear, "identity activations"));
  }

  bool given(std::size_t i) const { return opts[i]->count() > 0; }

  ConfigSpace resolve(ConfigSpace base) const {
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw UsageError("cannot read config space " + file);
      try {
        base = ConfigSpace::from_json(json::parse(in));
      } catch (const json::exception& e) {
        throw UsageError("bad config space " + file + ": " + e.what());
      }
    }
    if (given(1)) base.n_values = n;
    if (given(2)) base.dz_values = dz;
    if (given(3)) base.k_values = k;
    if (given(4)) base.dx = dx;
    if (given(5)) base.dy = dy;
    if (given(6)) {
      base.models.clear();
      for (const auto& m : models) base.models.push_back(parse_data_model(m));
    }
    if (given(7)) base.noise_scale = noise;
    if (given(8)) base.linear = linear;
    base.validate();
    return base;
  }
};

// ------------------------------------------------------------------ inputs

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<std::string> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        const auto ext = entry.path().extension().string();
        if (entry.is_regular_file() && (ext == ".bin" || ext == ".csv")) found.push_back(entry.path().string());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.push_back(in);
    }
  }
  if (files.empty()) throw UsageError("no input datasets");
  return files;
}

struct ColumnOptions {
  std::vector<std::string> x, y, z;
  void add(CLI::App* app) {
    app->add_option("--x-cols", x, "CSV columns holding X (names or 0-based indices)");
    app->add_option("--y-cols", y, "CSV columns holding Y");
    app->add_option("--z-cols", z, "CSV columns holding Z");
  }
  ColumnMapping mapping() const { return {x, y, z}; }
};

Dataset load_input(const std::string& path, const ColumnMapping& mapping) {
  if (fs::path(path).extension() == ".csv" && mapping.empty() && !fs::exists(path + ".meta.json")) {
    throw UsageError(path + ": CSV input needs --x-cols, --y-cols and --z-cols");
  }
  return read_dataset(path, mapping);
}

/// Ground-truth labels keyed by file name: a JSON object, or lines of
/// "name,label" (comma, tab or space separated).
std::map<std::string, int> read_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read truth file " + path);
  std::map<std::string, int> out;
  if (fs::path(path).extension() == ".json") {
    try {
      for (const auto& [k, v] : json::parse(in).items()) out[k] = v.get<int>();
    } catch (const json::exception& e) {
      throw UsageError("bad truth file " + path + ": " + e.what());
    }
    return out;
  }
  std::string line;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    std::istringstream ls(line);
    std::string name, label;
    if (!(ls >> name >> label)) continue;
    if (label == "0" || label == "1") out[name] = label == "1";
  }
  return out;
}

void apply_truth(Dataset& ds, const std::string& file, const std::map<std::string, int>& truth) {
  for (const auto& key : {file, fs::path(file).filename().string(), fs::path(file).stem().string()}) {
    auto it = truth.find(key);
    if (it != truth.end()) {
      ds.label = it->second;
      return;
    }
  }
}

// --------------------------------------------------------------- generate

struct GenerateArgs {
  SpaceOptions space;
  std::size_t count = 0;
  std::string seed_range = kTestSeeds.str();
  std::string format = "binary";
  std::string out;
  std::vector<std::string> train_manifests;
  std::string manifest;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv) {
  ConfigSpace defaults;
  defaults.dz_values = {5};
  defaults.n_values = {200};
  const ConfigSpace space = a.space.resolve(defaults);
  const SeedRange range = SeedRange::parse(a.seed_range);
  for (const auto& m : a.train_manifests) {
    const json tm = read_manifest(m);
    if (tm.contains("seed_ranges") && tm["seed_ranges"].contains("train")) {
      const SeedRange train = SeedRange::parse(tm["seed_ranges"]["train"].get<std::string>());
      if (train.overlaps(range)) {
        throw SeedGuardError("seed range " + range.str() + " overlaps training range " + train.str() +
                             " recorded in " + m);
      }
    }
  }
  if (a.format != "binary" && a.format != "csv") throw UsageError("--format must be binary or csv");
  fs::create_directories(a.out);
  RunManifest manifest("generate", argv);
  manifest.set_config({{"config_space", space.to_json()}, {"count", a.count}, {"format", a.format}});
  manifest.seed_range("data", range.str());
  const std::vector<Dataset> corpus = make_corpus(space, a.count, range);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "ds_%05zu", i);
    const fs::path base = fs::path(a.out) / name;
    if (a.format == "binary") {
      const auto p = base.string() + ".bin";
      write_dataset_binary(corpus[i], p);
      manifest.output(p);
    } else {
      const auto p = base.string() + ".csv";
      write_dataset_csv(corpus[i], p);
      manifest.output(p);
      manifest.output(p + ".meta.json");
    }
  }
  manifest.write(manifest_path_for(a.out, true, a.manifest));
  std::cout << "wrote " << corpus.size() << " datasets to " << a.out << "\n";
  return kOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  SpaceOptions space;
  ModelConfig model;
  TrainConfig train;
  std::string seed_range = kTrainSeeds.str();
  std::string out, log, resume, manifest;
  std::string precision = "f32";
  std::uint64_t init_seed = 0;
  CLI::Option* init_seed_opt = nullptr;
};

template <typename T>
int run_train(TrainArgs a, const std::vector<std::string>& argv) {
  a.train.config_space = a.space.resolve(ConfigSpace{});
  a.train.seed_range = SeedRange::parse(a.seed_range);
  if (a.train.seed_range.overlaps(kTestSeeds)) {
    throw SeedGuardError("training seed range " + a.train.seed_range.str() + " overlaps the test range " +
                         kTestSeeds.str());
  }
  a.train.validate();
  RunManifest manifest("train", argv);
  std::optional<TrainState<T>> state;
  if (!a.resume.empty()) {
    manifest.input(a.resume);
    auto ck = load_checkpoint<T>(a.resume);
    state.emplace(std::move(ck.state));
    if (state->seed != a.train.seed) {
      manifest.warn("resume keeps the checkpoint's data seed " + std::to_string(state->seed));
      a.train.seed = state->seed;
    }
  } else {
    const std::uint64_t init = a.init_seed_opt->count() ? a.init_seed : mix64(a.train.seed);
    state.emplace(TrainState<T>::start(AcidModel<T>::initialize(a.model, init), a.train.seed));
  }
  if (a.log.empty()) a.log = a.out + ".log.jsonl";
  json cfg = a.train.to_json();
  cfg["model"] = state->model.config().to_json();
  cfg["precision"] = a.precision;
  manifest.set_config(cfg);
  manifest.seed_range("train", a.train.seed_range.str());

  std::ofstream log(a.log, a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw UsageError("cannot write log " + a.log);
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& r) { log << r.to_json().dump() << "\n" << std::flush; };
  hooks.on_checkpoint = [&](std::uint64_t) { save_checkpoint(a.out, *state, a.train.to_json()); };
  try {
    train(*state, a.train, hooks);
  } catch (const NumericError& e) {
    const std::string last_good = a.out + ".last_good";
    save_checkpoint(last_good, *state, a.train.to_json());
    std::cerr << "error: " << e.what() << "\nlast good checkpoint: " << last_good << "\n";
    manifest.set_status("numeric_failure");
    manifest.output(last_good);
    manifest.write(manifest_path_for(a.out, false, a.manifest));
    return kNumeric;
  }
  log.close();
  manifest.output(a.out);
  manifest.output(a.log, false);
  manifest.write(manifest_path_for(a.out, false, a.manifest));
  std::cout << "trained to step " << state->step << ", checkpoint " << a.out << "\n";
  return kOk;
}

// -------------------------------------------------------------- calibrate

struct CalibrateArgs {
  SpaceOptions space;
  std::string checkpoint, out, manifest;
  std::size_t null_count = 2000;
  std::string seed_range = kCalibrationSeeds.str();
  std::size_t threads = 1;
  std::string precision = "f32";
};

template <typename T>
int run_calibrate(const CalibrateArgs& a, const std::vector<std::string>& argv) {
  if (a.null_count < kMinNullCount) {
    throw UsageError("--null-count must be at least " + std::to_string(kMinNullCount));
  }
  const SeedRange range = SeedRange::parse(a.seed_range);
  if (range.overlaps(kTestSeeds)) {
    throw SeedGuardError("calibration range " + range.str() + " overlaps the test range " + kTestSeeds.str());
  }
  RunManifest manifest("calibrate", argv);
  manifest.input(a.checkpoint);
  const auto ck = load_checkpoint<T>(a.checkpoint);
  ConfigSpace base;
  if (ck.train_config.is_object() && ck.train_config.contains("config_space")) {
    base = ConfigSpace::from_json(ck.train_config["config_space"]);
  }
  const ConfigSpace space = a.space.resolve(base);
  const std::vector<double> logits = collect_null_logits(ck.state.model, space, a.null_count, range, a.threads);
  CalibrationArtifact art;
  art.null = fit_skew_normal(logits);
  art.config_space = space;
  art.config_space_fingerprint = space.fingerprint();
  art.checkpoint_fingerprint = file_fingerprint(a.checkpoint);
  art.seed_range = range;
  art.save(a.out);
  manifest.set_config({{"config_space", space.to_json()}, {"null_count", a.null_count}, {"precision", a.precision}});
  manifest.seed_range("calibration", range.str());
  if (art.null.diagnostics.ks_statistic > 0.15) {
    manifest.warn("poor skew-normal fit: KS statistic " + std::to_string(art.null.diagnostics.ks_statistic));
  }
  manifest.output(a.out);
  manifest.write(manifest_path_for(a.out, false, a.manifest));
  std::cout << art.to_text();
  return kOk;
}

// ------------------------------------------------------------------- test

struct TestArgs {
  std::string checkpoint, calibration, out, manifest;
  std::vector<std::string> inputs;
  double alpha = 0.05;
  ColumnOptions columns;
  std::size_t threads = 1;
  std::string precision = "f32";
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

template <typename T>
int run_test(const TestArgs& a, const std::vector<std::string>& argv) {
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  RunManifest manifest("test", argv);
  manifest.input(a.checkpoint);
  manifest.input(a.calibration);
  const auto ck = load_checkpoint<T>(a.checkpoint);
  const auto cal = CalibrationArtifact::load(a.calibration);
  if (cal.checkpoint_fingerprint != file_fingerprint(a.checkpoint)) {
    manifest.warn("calibration was fitted for a different checkpoint");
  }
  const auto files = expand_inputs(a.inputs);
  const ColumnMapping mapping = a.columns.mapping();
  std::vector<Dataset> loaded;
  std::vector<std::string> errors(files.size());
  std::vector<std::size_t> index(files.size(), SIZE_MAX);
  for (std::size_t i = 0; i < files.size(); ++i) {
    try {
      Dataset ds = load_input(files[i], mapping);
      ds.validate();
      index[i] = loaded.size();
      loaded.push_back(std::move(ds));
      manifest.input(files[i]);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }
  std::vector<double> logits(loaded.size());
  for (std::size_t i = 0; i < files.size(); ++i) {
    if (index[i] == SIZE_MAX) continue;
    try {
      logits[index[i]] = ck.state.model.logit(loaded[index[i]]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
      index[i] = SIZE_MAX;
    }
  }
  std::ostringstream table;
  table << "file\tn\tdx\tdy\tdz\tlogit\tp_value\tdecision\terror\n";
  for (std::size_t i = 0; i < files.size(); ++i) {
    table << files[i] << '\t';
    if (index[i] == SIZE_MAX) {
      table << "\t\t\t\t\t\t\t" << errors[i] << '\n';
      continue;
    }
    const Dataset& ds = loaded[index[i]];
    const double logit = logits[index[i]];
    const double p = p_value(logit, cal.null);
    table << ds.n() << '\t' << ds.dx() << '\t' << ds.dy() << '\t' << ds.dz() << '\t' << fmt(logit) << '\t' << fmt(p)
          << '\t' << to_string(decide(p, a.alpha)) << "\t\n";
  }
  manifest.set_config({{"alpha", a.alpha}, {"precision", a.precision}});
  if (a.out.empty()) {
    std::cout << table.str();
    if (!a.manifest.empty()) manifest.write(a.manifest);
  } else {
    std::ofstream out(a.out);
    if (!out) throw UsageError("cannot write " + a.out);
    out << table.str();
    out.close();
    manifest.output(a.out);
    manifest.write(manifest_path_for(a.out, false, a.manifest));
  }
  return kOk;
}

// --------------------------------------------------------------- finetune

struct FinetuneArgs {
  std::string checkpoint, truth, out, log, manifest;
  std::vector<std::string> inputs;
  ColumnOptions columns;
  FinetuneConfig config;
  std::string precision = "f32";
};

std::vector<Dataset> load_corpus(const std::vector<std::string>& inputs, const ColumnMapping& mapping,
                                 const std::string& truth_path, RunManifest& manifest) {
  const auto files = expand_inputs(inputs);
  std::map<std::string, int> truth;
  if (!truth_path.empty()) {
    truth = read_truth(truth_path);
    manifest.input(truth_path);
  }
  std::vector<Dataset> corpus;
  for (const auto& f : files) {
    Dataset ds = load_input(f, mapping);
    if (!truth.empty()) apply_truth(ds, f, truth);
    manifest.input(f);
    corpus.push_back(std::move(ds));
  }
  return corpus;
}

template <typename T>
int run_finetune(FinetuneArgs a, const std::vector<std::string>& argv) {
  RunManifest manifest("finetune", argv);
  manifest.input(a.checkpoint);
  manifest.set_config({{"train", a.config.train.to_json()}, {"sample_rows", a.config.sample_rows},
                       {"precision", a.precision}});
  if (a.config.train.steps == 0) {
    fs::copy_file(a.checkpoint, a.out, fs::copy_options::overwrite_existing);
    manifest.output(a.out);
    manifest.write(manifest_path_for(a.out, false, a.manifest));
    std::cout << "0 steps: copied " << a.checkpoint << " to " << a.out << "\n";
    return kOk;
  }
  const std::vector<Dataset> corpus = load_corpus(a.inputs, a.columns.mapping(), a.truth, manifest);
  auto ck = load_checkpoint<T>(a.checkpoint);
  TrainState<T> state = std::move(ck.state);
  a.config.train.seed_range = kTrainSeeds;
  if (a.log.empty()) a.log = a.out + ".log.jsonl";
  std::ofstream log(a.log);
  if (!log) throw UsageError("cannot write log " + a.log);
  TrainHooks hooks;
  hooks.on_record = [&](const TrainRecord& r) { log << r.to_json().dump() << "\n" << std::flush; };
  hooks.on_checkpoint = [&](std::uint64_t) { save_checkpoint(a.out, state, ck.train_config); };
  try {
    finetune(state, corpus, a.config, hooks, [&](const std::string& w) { manifest.warn(w); });
  } catch (const NumericError& e) {
    const std::string last_good = a.out + ".last_good";
    save_checkpoint(last_good, state, ck.train_config);
    std::cerr << "error: " << e.what() << "\nlast good checkpoint: " << last_good << "\n";
    manifest.set_status("numeric_failure");
    manifest.write(manifest_path_for(a.out, false, a.manifest));
    return kNumeric;
  }
  log.close();
  manifest.output(a.out);
  manifest.output(a.log, false);
  manifest.write(manifest_path_for(a.out, false, a.manifest));
  std::cout << "fine-tuned to step " << state.step << ", checkpoint " << a.out << "\n";
  return kOk;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint, calibration, truth, out, table, fold_table, manifest;
  std::vector<std::string> inputs;
  ColumnOptions columns;
  std::size_t folds = 5;
  double alpha = 0.05;
  std::uint64_t fold_seed = 0;
  std::size_t threads = 1;
  std::string precision = "f32";
};

template <typename T>
int run_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  RunManifest manifest("eval", argv);
  manifest.input(a.checkpoint);
  manifest.input(a.calibration);
  const auto ck = load_checkpoint<T>(a.checkpoint);
  const auto cal = CalibrationArtifact::load(a.calibration);
  const auto files = expand_inputs(a.inputs);
  const std::vector<Dataset> corpus = load_corpus(a.inputs, a.columns.mapping(), a.truth, manifest);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus[i].label) throw UsageError(files[i] + " has no label; pass --truth");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> logits = ck.state.model.logits(corpus, a.threads);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  std::vector<DatasetResult> rows;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    DatasetResult r;
    r.id = fs::path(files[i]).filename().string();
    r.seed = corpus[i].seed;
    r.label = *corpus[i].label;
    r.logit = logits[i];
    r.p_value = p_value(logits[i], cal.null);
    r.reject = decide(r.p_value, a.alpha) == Decision::Reject;
    rows.push_back(r);
  }
  EvalReport report = evaluate_folds(std::move(rows), a.folds, a.alpha, a.fold_seed);
  report.ms_per_dataset = ms * static_cast<double>(a.threads) / static_cast<double>(corpus.size());
  for (const auto& w : report.warnings) manifest.warn(w);
  manifest.set_config({{"folds", a.folds}, {"alpha", a.alpha}, {"fold_seed", a.fold_seed}, {"precision", a.precision}});
  auto write = [&](const std::string& path, const std::string& text, bool deterministic) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write " + path);
    out << text;
    out.close();
    manifest.output(path, deterministic);
  };
  // The report carries timing, so it is not replay-checked; the tables are.
  write(a.out, report.to_text(), false);
  if (!a.table.empty()) write(a.table, report.dataset_table(), true);
  if (!a.fold_table.empty()) write(a.fold_table, report.fold_table(), true);
  manifest.write(manifest_path_for(a.out, false, a.manifest));
  std::cout << report.to_text();
  return kOk;
}

// ----------------------------------------------------------------- replay

int run(std::vector<std::string> args);

int cmd_replay(const std::string& path, const std::string& out_override, bool verify) {
  const json m = read_manifest(path);
  std::vector<std::string> argv = m.at("argv").get<std::vector<std::string>>();
  std::string manifest_override;
  if (!out_override.empty()) {
    bool replaced = false;
    for (std::size_t i = 0; i < argv.size(); ++i) {
      if (argv[i] == "--out" && i + 1 < argv.size()) {
        argv[i + 1] = out_override;
        replaced = true;
      } else if (argv[i] == "--manifest" && i + 1 < argv.size()) {
        argv.erase(argv.begin() + static_cast<std::ptrdiff_t>(i), argv.begin() + static_cast<std::ptrdiff_t>(i) + 2);
        --i;
      }
    }
    if (!replaced) throw UsageError("manifest command has no --out to redirect");
  }
  const std::string command = m.at("command").get<std::string>();
  const int code = run(argv);
  if (code != kOk || !verify) return code;
  std::string new_manifest;
  if (out_override.empty()) {
    new_manifest = path;
  } else {
    new_manifest = manifest_path_for(out_override, command == "generate", "");
  }
  const json fresh = read_manifest(new_manifest);
  const auto& before = m.at("outputs");
  const auto& after = fresh.at("outputs");
  if (before.size() != after.size()) {
    std::cerr << "replay produced " << after.size() << " outputs, manifest lists " << before.size() << "\n";
    return kFailure;
  }
  bool ok = true;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (!before[i].value("deterministic", true)) continue;
    const bool same = before[i]["fingerprint"] == after[i]["fingerprint"];
    ok = ok && same;
    std::cout << (same ? "match    " : "MISMATCH ") << after[i]["path"].get<std::string>() << "\n";
  }
  return ok ? kOk : kFailure;
}

// ------------------------------------------------------------------- main

template <typename Fn>
int by_precision(const std::string& precision, Fn&& fn) {
  return parse_precision(precision) == Precision::F64 ? fn(double{}) : fn(float{});
}

int run(std::vector<std::string> args) {
  const std::vector<std::string> argv = args;
  CLI::App app{"ACID: amortized conditional independence testing", "acid"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  const std::size_t threads = env_threads();

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset corpus");
  gen.space.add(g);
  g->add_option("--count", gen.count, "number of datasets")->required()->check(CLI::PositiveNumber);
  g->add_option("--seed-range", gen.seed_range, "dataset seeds lo:hi")->capture_default_str();
  g->add_option("--format", gen.format, "binary or csv")->capture_default_str();
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--train-manifest", gen.train_manifests, "training manifests whose seed ranges must not overlap");
  g->add_option("--manifest", gen.manifest, "manifest path");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on fresh synthetic datasets");
  tr.space.add(t);
  t->add_option("--steps", tr.train.steps, "total optimizer steps")->capture_default_str();
  t->add_option("--batch-size", tr.train.batch_size, "datasets per step")->capture_default_str();
  t->add_option("--lr", tr.train.adam.lr, "learning rate")->capture_default_str();
  t->add_option("--beta1", tr.train.adam.beta1)->capture_default_str();
  t->add_option("--beta2", tr.train.adam.beta2)->capture_default_str();
  t->add_option("--eps", tr.train.adam.eps)->capture_default_str();
  t->add_option("--clip-norm", tr.train.clip_norm, "global gradient norm cap")->capture_default_str();
  t->add_option("--seed", tr.train.seed, "data and dropout seed")->capture_default_str();
  tr.init_seed_opt = t->add_option("--init-seed", tr.init_seed, "parameter initialization seed");
  t->add_option("--seed-range", tr.seed_range, "training dataset seeds lo:hi")->capture_default_str();
  t->add_option("--checkpoint-every", tr.train.checkpoint_every)->capture_default_str();
  t->add_option("--telemetry-every", tr.train.telemetry_every)->capture_default_str();
  t->add_option("--token-budget", tr.train.token_budget, "max datasets*n*d per forward pass")->capture_default_str();
  t->add_option("--e", tr.model.e, "embedding width")->capture_default_str();
  t->add_option("--heads", tr.model.heads)->capture_default_str();
  t->add_option("--layers", tr.model.layers)->capture_default_str();
  t->add_option("--dropout", tr.model.dropout)->capture_default_str();
  t->add_option("--precision", tr.precision, "f32 or f64")->capture_default_str();
  t->add_option("--resume", tr.resume, "checkpoint to continue from");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--log", tr.log, "JSONL training log");
  t->add_option("--manifest", tr.manifest, "manifest path");

  CalibrateArgs ca;
  ca.threads = threads;
  auto* c = app.add_subcommand("calibrate", "fit the null distribution of H0 logits");
  ca.space.add(c);
  c->add_option("--checkpoint", ca.checkpoint)->required();
  c->add_option("--null-count", ca.null_count, "H0 datasets to score")->capture_default_str();
  c->add_option("--seed-range", ca.seed_range)->capture_default_str();
  c->add_option("--precision", ca.precision)->capture_default_str();
  c->add_option("--out", ca.out, "calibration artifact path")->required();
  c->add_option("--manifest", ca.manifest, "manifest path");

  TestArgs te;
  te.threads = threads;
  auto* s = app.add_subcommand("test", "test X independent of Y given Z for each input");
  s->add_option("inputs", te.inputs, "dataset files or directories")->required();
  s->add_option("--checkpoint", te.checkpoint)->required();
  s->add_option("--calibration", te.calibration)->required();
  s->add_option("--alpha", te.alpha)->capture_default_str();
  te.columns.add(s);
  s->add_option("--precision", te.precision)->capture_default_str();
  s->add_option("--out", te.out, "results table (default stdout)");
  s->add_option("--manifest", te.manifest, "manifest path");

  FinetuneArgs fi;
  fi.config.train.steps = 500;
  fi.config.train.batch_size = 16;
  auto* f = app.add_subcommand("finetune", "adapt a checkpoint on down-sampled labeled datasets");
  f->add_option("inputs", fi.inputs, "dataset files or directories");
  f->add_option("--checkpoint", fi.checkpoint)->required();
  f->add_option("--truth", fi.truth, "labels by file name");
  f->add_option("--steps", fi.config.train.steps)->capture_default_str();
  f->add_option("--batch-size", fi.config.train.batch_size)->capture_default_str();
  f->add_option("--lr", fi.config.train.adam.lr)->capture_default_str();
  f->add_option("--sample-rows", fi.config.sample_rows, "rows per down-sampled dataset")->capture_default_str();
  f->add_option("--seed", fi.config.train.seed)->capture_default_str();
  fi.columns.add(f);
  f->add_option("--precision", fi.precision)->capture_default_str();
  f->add_option("--out", fi.out, "checkpoint path")->required();
  f->add_option("--log", fi.log, "JSONL log");
  f->add_option("--manifest", fi.manifest, "manifest path");

  EvalArgs ev;
  ev.threads = threads;
  auto* e = app.add_subcommand("eval", "fold-based AUC, F1 and Type I/II report");
  e->add_option("inputs", ev.inputs, "dataset files or directories")->required();
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--calibration", ev.calibration)->required();
  e->add_option("--truth", ev.truth, "labels by file name");
  e->add_option("--folds", ev.folds)->capture_default_str();
  e->add_option("--alpha", ev.alpha)->capture_default_str();
  e->add_option("--fold-seed", ev.fold_seed)->capture_default_str();
  ev.columns.add(e);
  e->add_option("--precision", ev.precision)->capture_default_str();
  e->add_option("--out", ev.out, "report path")->required();
  e->add_option("--table", ev.table, "per-dataset table path");
  e->add_option("--fold-table", ev.fold_table, "per-fold table path");
  e->add_option("--manifest", ev.manifest, "manifest path");

  std::string replay_path, replay_out;
  bool replay_verify = false;
  auto* r = app.add_subcommand("replay", "rerun the command recorded in a manifest");
  r->add_option("manifest", replay_path)->required();
  r->add_option("--out", replay_out, "redirect the run's --out");
  r->add_flag("--verify", replay_verify, "compare output fingerprints with the manifest");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  if (*g) return cmd_generate(gen, argv);
  if (*t) return by_precision(tr.precision, [&](auto v) { return run_train<decltype(v)>(tr, argv); });
  if (*c) return by_precision(ca.precision, [&](auto v) { return run_calibrate<decltype(v)>(ca, argv); });
  if (*s) return by_precision(te.precision, [&](auto v) { return run_test<decltype(v)>(te, argv); });
  if (*f) return by_precision(fi.precision, [&](auto v) { return run_finetune<decltype(v)>(fi, argv); });
  if (*e) return by_precision(ev.precision, [&](auto v) { return run_eval<decltype(v)>(ev, argv); });
  if (*r) return cmd_replay(replay_path, replay_out, replay_verify);
  return kUsage;
}

}  // namespace
}  // namespace acid::cli

int main(int argc, char** argv) {
  using namespace acid;
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return cli::run(args);
  } catch (const cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return cli::kUsage;
  } catch (const SeedGuardError& e) {
    std::cerr << "seed guard: " << e.what() << "\n";
    return cli::kSeedGuard;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return cli::kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return cli::kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kFailure;
  }
}
