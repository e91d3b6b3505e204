#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "piseg/config.hpp"

using namespace piseg;
using nlohmann::json;

TEST_CASE("config JSON round trip") {
  RunConfig c = desk_preset();
  c.model.noise.family = NoiseFamily::kStudentT;
  c.model.noise.df = 5.0;
  c.train_manifest = "data/manifest.json";
  const auto back = run_config_from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
}

TEST_CASE("desk preset values") {
  const auto d = desk_preset();
  CHECK(d.train.total_steps <= 2000);
  CHECK(d.train.batch_size == 8);
  CHECK(d.model.aggregator.num_blocks == 2);
  CHECK(d.model.aggregator.feature_dim == 64);
  CHECK(d.model.sigma_t == 0.02);
  CHECK(d.encoder.prompt_template == "a photo of {class}");
  CHECK(named_preset("default").to_json() == RunConfig{}.to_json());
  CHECK_THROWS_AS(named_preset("huge"), Error);
}

TEST_CASE("overrides are strict") {
  RunConfig c;
  apply_overrides(c, json{{"train", {{"base_lr", 5e-4}}}, {"noise", {{"family", "laplace"}}}});
  CHECK(c.train.base_lr == 5e-4);
  CHECK(c.model.noise.family == NoiseFamily::kLaplace);

  CHECK_THROWS_AS(apply_overrides(c, json{{"train", {{"base_lrr", 1.0}}}}), Error);
  CHECK_THROWS_AS(apply_overrides(c, json{{"train", {{"base_lr", "fast"}}}}), Error);
  CHECK_THROWS_AS(apply_overrides(c, json{{"train", {{"batch_size", 2.5}}}}), Error);
  CHECK_THROWS_AS(apply_overrides(c, json{{"noise", {{"family", "cauchy"}}}}), Error);
  CHECK_THROWS_AS(apply_overrides(c, json{{"train", {{"batch_size", 0}}}}), Error);
  CHECK_THROWS_AS(apply_overrides(c, json{{"model", 3}}), Error);
  // Failed overrides leave the config untouched.
  CHECK(c.train.base_lr == 5e-4);
  CHECK(c.train.batch_size == RunConfig{}.train.batch_size);
}

TEST_CASE("environment overrides") {
  const std::map<std::string, std::string> env = {{"PISEG_TRAIN__BASE_LR", "1e-3"},
                                                  {"PISEG_MODEL__AGGREGATOR__WINDOW", "3"},
                                                  {"PISEG_NOISE__FAMILY", "uniform"},
                                                  {"PISEG_OUT_DIR", "runs/x"},
                                                  {"HOME", "/root"}};
  const auto patch = environment_overrides(env);
  CHECK(patch["train"]["base_lr"] == 1e-3);
  CHECK(patch["model"]["aggregator"]["window"] == 3);
  CHECK(patch["noise"]["family"] == "uniform");
  CHECK(patch["out_dir"] == "runs/x");
  CHECK_FALSE(patch.contains("home"));

  RunConfig c;
  apply_overrides(c, patch);
  CHECK(c.train.base_lr == 1e-3);
  CHECK(c.model.aggregator.window == 3);
  CHECK(c.out_dir == "runs/x");

  CHECK_THROWS_AS(environment_overrides({{"PISEG_", "1"}}), Error);
  CHECK_THROWS_AS(environment_overrides({{"PISEG_TRAIN____X", "1"}}), Error);
}

TEST_CASE("precedence: preset, then file, then environment, then flags") {
  RunConfig c = desk_preset();
  apply_overrides(c, json{{"train", {{"base_lr", 1.0}, {"batch_size", 4}, {"seed", 9}}}});
  apply_overrides(c, environment_overrides({{"PISEG_TRAIN__BASE_LR", "2.0"}, {"PISEG_TRAIN__BATCH_SIZE", "2"}}));
  apply_overrides(c, json{{"train", {{"base_lr", 3.0}}}});
  CHECK(c.train.base_lr == 3.0);
  CHECK(c.train.batch_size == 2);
  CHECK(c.train.seed == 9);
  CHECK(c.train.total_steps == desk_preset().train.total_steps);
}

TEST_CASE("encoder config validation") {
  EncoderConfig e;
  CHECK_NOTHROW(e.validate());
  e.prompt_template = "no slot";
  CHECK_THROWS_AS(e.validate(), Error);
  e = {};
  e.alignment = 1.5;
  CHECK_THROWS_AS(e.validate(), Error);
  e = {};
  e.patch_stride = 0;
  CHECK_THROWS_AS(e.validate(), Error);
}
