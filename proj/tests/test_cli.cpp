// Copyright 2026 The HALT Authors
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

// End-to-end checks of the installed binary: exit codes, idempotence,
// reproducibility. Each case drives the real executable via std::system.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "halt/io_util.hpp"
#include "halt/synth.hpp"
#include "halt/trace.hpp"

using namespace halt;
namespace fs = std::filesystem;

namespace {

const char* kCli = HALT_CLI_PATH;
const std::string kFixtures = HALT_FIXTURE_DIR;

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "halt_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& cmd) {
  const int status = std::system((std::string(kCli) + " " + cmd +
                                  " >/dev/null 2>/dev/null")
                                     .c_str());
  return WEXITSTATUS(status);
}

std::string run_capture(const std::string& cmd, const fs::path& stdout_file) {
  const int status = std::system((std::string(kCli) + " " + cmd + " >" +
                                  stdout_file.string() + " 2>/dev/null")
                                     .c_str());
  REQUIRE(WEXITSTATUS(status) == 0);
  return read_file(stdout_file);
}

// Small three-split dataset generated from the shipped emulator fixture.
struct Dataset {
  fs::path dir;
  fs::path manifest;
};

Dataset make_dataset() {
  static Dataset dataset = [] {
    Dataset d;
    d.dir = work_dir() / "data";
    fs::create_directories(d.dir);
    const EmulatorSpec spec =
        load_emulator_spec(kFixtures + "/emulator_a.json");
    write_traces(d.dir / "train.jsonl", generate(spec, "easy", 60, 1));
    write_traces(d.dir / "val.jsonl", generate(spec, "easy", 30, 2));
    write_traces(d.dir / "test.jsonl", generate(spec, "easy", 30, 3));
    write_file_atomic(d.dir / "manifest.json", R"({
      "splits": {"train": ["train.jsonl"], "validation": ["val.jsonl"],
                 "test": ["test.jsonl"]}
    })");
    d.manifest = d.dir / "manifest.json";
    return d;
  }();
  return dataset;
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("definitely-not-a-command") == 1);
  CHECK(run("train") == 1);  // missing required --manifest
}

TEST_CASE("data validation errors exit with code 2") {
  const fs::path bad = work_dir() / "bad.jsonl";
  write_file_atomic(bad, "{broken\n");
  const fs::path manifest = work_dir() / "bad_manifest.json";
  write_file_atomic(manifest, R"({
    "splits": {"train": ["bad.jsonl"], "validation": [], "test": []}
  })");
  CHECK(run("featurize --manifest " + manifest.string() + " --out " +
            (work_dir() / "bad_out").string()) == 2);
}

TEST_CASE("featurize is idempotent and counts rows per id") {
  const Dataset d = make_dataset();
  const fs::path out = work_dir() / "features";
  REQUIRE(run("featurize --manifest " + d.manifest.string() + " --out " +
              out.string()) == 0);

  const fs::path cache = out / "train.features.jsonl";
  REQUIRE(fs::exists(cache));
  const std::string first = read_file(cache);

  REQUIRE(run("featurize --manifest " + d.manifest.string() + " --out " +
              out.string()) == 0);
  CHECK(read_file(cache) == first);  // byte-identical re-run

  // Row counts per id equal the trace token counts.
  const auto traces = load_traces(d.dir / "train.jsonl");
  const auto parsed = read_feature_cache(cache);
  REQUIRE(parsed.sequences.size() == traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    CHECK(parsed.sequences[i].trace_id == traces[i].id);
    CHECK(parsed.sequences[i].length() == traces[i].length());
  }
}

TEST_CASE("empty split produces a cache with only the header") {
  const fs::path dir = work_dir() / "empty_split";
  fs::create_directories(dir);
  write_file_atomic(dir / "empty.jsonl", "");
  write_file_atomic(dir / "manifest.json", R"({
    "splits": {"train": ["empty.jsonl"], "validation": [], "test": []}
  })");
  const fs::path out = dir / "features";
  REQUIRE(run("featurize --manifest " + (dir / "manifest.json").string() +
              " --out " + out.string()) == 0);
  const auto cache = read_feature_cache(out / "empty.features.jsonl");
  CHECK(cache.sequences.empty());
  CHECK(cache.layout_version == kFeatureLayoutVersion);
}

TEST_CASE("train, eval, tune, predict pipeline") {
  const Dataset d = make_dataset();
  const fs::path cfg = work_dir() / "config.json";
  write_file_atomic(cfg, R"({
    "model": {"proj_dim": 12, "hidden_dim": 12, "num_layers": 1,
              "dropout_rate": 0.1},
    "train": {"batch_size": 16, "max_epochs": 4, "early_stop_patience": 4,
              "seed": 5}
  })");

  const fs::path run1 = work_dir() / "run1";
  REQUIRE(run("train --manifest " + d.manifest.string() + " --config " +
              cfg.string() + " --out " + run1.string()) == 0);
  REQUIRE(fs::exists(run1 / "model.halt"));
  REQUIRE(fs::exists(run1 / "train_log.jsonl"));
  REQUIRE(fs::exists(run1 / "resolved_config.json"));

  SUBCASE("same config and seed give identical checkpoints") {
    const fs::path run2 = work_dir() / "run2";
    REQUIRE(run("train --manifest " + d.manifest.string() + " --config " +
                cfg.string() + " --out " + run2.string()) == 0);
    CHECK(read_file(run1 / "model.halt") == read_file(run2 / "model.halt"));
    CHECK(read_file(run1 / "train_log.jsonl") ==
          read_file(run2 / "train_log.jsonl"));
  }

  SUBCASE("missing validation split is a config error") {
    const fs::path dir = work_dir() / "no_val";
    fs::create_directories(dir);
    fs::copy_file(d.dir / "train.jsonl", dir / "train.jsonl",
                  fs::copy_options::overwrite_existing);
    fs::copy_file(d.dir / "test.jsonl", dir / "test.jsonl",
                  fs::copy_options::overwrite_existing);
    write_file_atomic(dir / "manifest.json", R"({
      "splits": {"train": ["train.jsonl"], "validation": [],
                 "test": ["test.jsonl"]}
    })");
    CHECK(run("train --manifest " + (dir / "manifest.json").string() +
              " --config " + cfg.string() + " --out " +
              (dir / "out").string()) == 1);
  }

  SUBCASE("log line count equals epochs run") {
    const std::string log = read_file(run1 / "train_log.jsonl");
    CHECK(std::count(log.begin(), log.end(), '\n') == 4);
  }

  SUBCASE("eval compares the model against a tuned detector") {
    const fs::path detector = work_dir() / "h_overall.json";
    REQUIRE(run("tune --statistic h_overall --manifest " + d.manifest.string() +
                " --out " + detector.string()) == 0);

    const fs::path eval_out = work_dir() / "eval";
    const std::string table = run_capture(
        "eval --manifest " + d.manifest.string() + " --model " +
            (run1 / "model.halt").string() + " --detector " + detector.string() +
            " --tune --out " + eval_out.string(),
        work_dir() / "eval_stdout.txt");
    CHECK(table.find("halt") != std::string::npos);
    CHECK(table.find("h_overall") != std::string::npos);
    CHECK(table.find("Overall") != std::string::npos);
    CHECK(fs::exists(eval_out / "eval_report.json"));
  }

  SUBCASE("predict writes one JSON line per trace") {
    const std::string out = run_capture(
        "predict --model " + (run1 / "model.halt").string() + " --traces " +
            (d.dir / "test.jsonl").string() + " --threshold 0.5",
        work_dir() / "predict_stdout.txt");
    CHECK(std::count(out.begin(), out.end(), '\n') == 30);
    CHECK(out.find("\"score\"") != std::string::npos);
  }

  SUBCASE("attribute emits normalized per-feature weights") {
    const std::string out = run_capture(
        "attribute --manifest " + d.manifest.string() + " --model " +
            (run1 / "model.halt").string() + " --split test",
        work_dir() / "attr_stdout.txt");
    CHECK(out.find("per_feature") != std::string::npos);
    CHECK(out.find("entropy_alts") != std::string::npos);
    CHECK(out.find("logprob_20") != std::string::npos);
  }
}

TEST_CASE("synth is deterministic per seed and writes valid traces") {
  const fs::path out_a = work_dir() / "synth_a.jsonl";
  const fs::path out_b = work_dir() / "synth_b.jsonl";
  const std::string spec = kFixtures + "/emulator_a.json";
  REQUIRE(run("synth --spec " + spec + " --family hard --n 12 --seed 9 --out " +
              out_a.string()) == 0);
  REQUIRE(run("synth --spec " + spec + " --family hard --n 12 --seed 9 --out " +
              out_b.string()) == 0);
  CHECK(read_file(out_a) == read_file(out_b));
  const auto traces = load_traces(out_a);
  CHECK(traces.size() == 12);
  for (const auto& trace : traces) CHECK(check_trace(trace).empty());
}

TEST_CASE("topk reports non-decreasing mean mass") {
  const Dataset d = make_dataset();
  const std::string out = run_capture(
      "topk --manifest " + d.manifest.string() + " --k 1,5,10,15,20",
      work_dir() / "topk_stdout.txt");
  CHECK(out.find("k=1 ") != std::string::npos);
  CHECK(out.find("k=20 ") != std::string::npos);
}
