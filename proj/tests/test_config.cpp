#include "doctest.h"
#include "dcd/config.hpp"

using namespace dcd;

TEST_CASE("sections, dotted keys, comments and quotes") {
  const Config c = Config::parse(
      "seed = 3   # trailing comment\n"
      "\n"
      "[train]\n"
      "epochs = 12\n"
      "schedule = \"step\"\n"
      "[model]\n"
      "dcd.reduction = 8\n"
      "placement = \"pw+cls\"\n"
      "note = \"a # inside quotes\"\n");
  CHECK(c.get("seed", "") == "3");
  CHECK(c.get_uint("train.epochs", 0) == 12);
  CHECK(c.get("train.schedule", "") == "step");
  CHECK(c.get_uint("model.dcd.reduction", 0) == 8);
  CHECK(c.get("model.placement", "") == "pw+cls");
  CHECK(c.get("model.note", "") == "a # inside quotes");
  CHECK(c.get("missing", "fallback") == "fallback");
}

TEST_CASE("parse errors carry the source line") {
  try {
    Config::parse("a = 1\n[s]\nb = 2\nb = 3\n", "run.cfg");
    FAIL("expected a duplicate-key error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:4") != std::string::npos);
  }
  CHECK_THROWS_AS(Config::parse("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("[unterminated\n"), ConfigError);
  CHECK_THROWS_AS(Config::parse("bad key! = 1\n"), ConfigError);
}

TEST_CASE("typed getters are strict") {
  Config c;
  c.set("n", "12x");
  c.set("d", "0.5");
  c.set("b", "maybe");
  c.set("neg", "-1");
  CHECK_THROWS_AS(c.get_uint("n", 0), ConfigError);
  CHECK_THROWS_AS(c.get_uint("neg", 0), ConfigError);
  CHECK(c.get_double("d", 0) == 0.5);
  CHECK_THROWS_AS(c.get_bool("b", false), ConfigError);
  c.set("b", "on");
  CHECK(c.get_bool("b", false));
  CHECK_THROWS_AS(c.set("k", "two\nlines"), ConfigError);
}

TEST_CASE("serialize parses back to the same values") {
  Config c;
  c.set("out_dir", "runs/with # hash");
  c.set("seed", "4");
  c.set("model.arch", "resnet");
  c.set("model.dcd.blocks", "2");
  c.set("train.lr", "0.05");
  c.set("padded", " x ");
  c.set("quoted", "\"q\"");
  const Config back = Config::parse(c.serialize());
  CHECK(back.values() == c.values());
}

TEST_CASE("run config round trip") {
  RunConfig r;
  r.seed = 9;
  r.epochs = 3;
  r.batch_size = 16;
  r.optim.schedule = "step";
  r.optim.step_epochs = 2;
  r.optim.lr = 0.025;
  r.task.kind = "separable";
  r.task.channels = 6;
  r.model.arch = "mobilenetv2";
  r.model.width = 0.35;
  r.model.placement = parse_placement("dw+pw+cls");
  r.model.knobs.latent_multiplier = 2;
  r.model.knobs.blocks = 4;
  r.model.knobs.use_lambda = false;
  r.model.desk.vanilla.temperature = 30;
  const std::string text = to_config(r).serialize();
  const RunConfig back = run_config_from(Config::parse(text));
  CHECK(to_config(back).serialize() == text);
  CHECK(back.model.placement.dw);
  CHECK(back.model.knobs.blocks == 4);
  CHECK_FALSE(back.model.knobs.use_lambda);
  CHECK(back.model.desk.vanilla.temperature == 30);
  CHECK(back.optim.lr == 0.025);
}

TEST_CASE("run config validation") {
  CHECK_THROWS_AS(run_config_from(Config::parse("trian.epochs = 3\n")), ConfigError);
  CHECK_THROWS_AS(run_config_from(Config::parse("[train]\nbatch_size = 0\n")), ConfigError);
  CHECK_THROWS_AS(run_config_from(Config::parse("[train]\nschedule = linear\n")), ConfigError);
  CHECK_THROWS_AS(run_config_from(Config::parse("[model]\nplacement = pw+pw\n")), ConfigError);
  CHECK_THROWS_AS(run_config_from(Config::parse("[model]\ndesk.kind = huge\n")), ConfigError);
  const RunConfig d = run_config_from(Config{});
  CHECK(d.epochs == 30);
  CHECK(d.model.arch == "desk");
}
