#include <fstream>

#include "criteria.hpp"
#include "doctest.h"
#include "femur/experiment.hpp"
#include "femur/run_record.hpp"
#include "support.hpp"

using namespace femur;
using nlohmann::json;
using femur::testing::TempDir;

namespace {

// Minutes-free variant of the benchmark for plumbing tests.
BenchmarkConfig small_benchmark() {
  auto cfg = BenchmarkConfig::standard();
  cfg.synth.n_patients = 25;
  cfg.synth.image_size = 96;
  cfg.localizer.epochs = 2;
  cfg.classifier_three.epochs = 2;
  cfg.classifier_three.input_size = 32;
  cfg.classifier_two = cfg.classifier_three;
  cfg.classifier_two.mode = ClassMode::kTwoClass;
  cfg.classifier_two.pretrained = true;
  cfg.classifier_two.pretrained_weights = "classifier_three";
  cfg.k_values = {1, 3, 5};
  cfg.precision_k = 3;
  cfg.tsne.iterations = 100;
  return cfg;
}

}  // namespace

TEST_CASE("benchmark config json round trip") {
  const auto cfg = BenchmarkConfig::standard();
  const json j = to_json(cfg);
  CHECK(to_json(benchmark_config_from_json(j)) == j);
  CHECK(j["synth"]["seed"] == 2024);
  CHECK(j["scales"] == json(default_scales()));
  // Overrides are merged over the full config, as the CLI does.
  json merged = j;
  merged.merge_patch(json{{"synth", {{"n_patients", 20}}}});
  const auto patched = benchmark_config_from_json(merged);
  CHECK(patched.synth.n_patients == 20);
  CHECK(patched.synth.seed == cfg.synth.seed);
  CHECK(patched.classifier_three.epochs == cfg.classifier_three.epochs);
}

TEST_CASE("volatile artifacts") {
  CHECK(is_volatile_artifact("models/localizer/training_log.jsonl"));
  CHECK(is_volatile_artifact("reports/timing.json"));
  CHECK(is_volatile_artifact("run_record.json"));
  CHECK(!is_volatile_artifact("reports/benchmark.json"));
  CHECK(!is_volatile_artifact("models/index.bin"));
}

TEST_CASE("small benchmark is reproducible across output directories") {
  TempDir a, b;
  const auto cfg = small_benchmark();
  const auto ra = run_benchmark(cfg, a.path());
  const auto rb = run_benchmark(cfg, b.path());
  std::string where;
  CHECK_MESSAGE(criteria::json_close(ra.report, rb.report, 0.0, &where), where);
  CHECK(ra.checksums == rb.checksums);
  CHECK(ra.checksums.contains("models/index.bin"));
  CHECK(ra.checksums.contains("reports/benchmark.json"));
  CHECK(!ra.checksums.contains("reports/timing.json"));
  for (const char* f : {"reports/benchmark.json", "reports/timing.json", "reports/checksums.json",
                        "data/split_manifest.jsonl", "models/tsne.json", "reports/roc_three_class.svg"}) {
    CHECK_MESSAGE(std::filesystem::exists(a / f), f);
  }
  const json& r = ra.report;
  for (const char* k : {"classification", "localization", "scale_verification", "retrieval", "tsne"}) {
    CHECK(r.contains(k));
  }
  CHECK(r["scale_verification"]["scales"] == json(default_scales()));
}

TEST_CASE("json_close") {
  std::string where;
  CHECK(criteria::json_close(json{{"a", 1.0}}, json{{"a", 1.0 + 1e-9}}, 1e-6, &where));
  CHECK(!criteria::json_close(json{{"a", {1.0, 2.0}}}, json{{"a", {1.0, 2.1}}}, 1e-6, &where));
  CHECK(where == "/a/1");
  CHECK(!criteria::json_close(json{{"a", "x"}}, json{{"a", "y"}}, 1e-6, &where));
  CHECK(!criteria::json_close(json{{"a", 1}}, json{{"b", 1}}, 1e-6, &where));
}

TEST_CASE("run record") {
  const json cfg{{"epochs", 3}};
  CHECK(make_run_id("train-cls", cfg, "abc") == make_run_id("train-cls", cfg, "abc"));
  CHECK(make_run_id("train-cls", cfg, "abc") != make_run_id("train-cls", cfg, "abd"));
  CHECK(make_run_id("train-cls", cfg, "abc").size() == 16);

  TempDir dir;
  {
    std::ofstream(dir / "out.txt") << "hello";
  }
  RunRecord rec;
  rec.command = "eval";
  rec.config = cfg;
  rec.run_id = make_run_id(rec.command, rec.config, "");
  rec.started_at = utc_timestamp();
  add_output(rec, dir.path(), "text", dir / "out.txt");
  CHECK(rec.outputs["text"] == "out.txt");
  CHECK(rec.output_checksums["text"] ==
        "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
  rec.finished_at = utc_timestamp();
  write_run_record(dir.path(), rec);
  const auto back = read_run_record(dir.path());
  CHECK(to_json(back) == to_json(rec));
  CHECK(rec.started_at.size() == 20);
}
