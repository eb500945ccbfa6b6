#include <doctest.h>

#include "otml/config.hpp"

using namespace otml;
using namespace otml::config;

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults cover every registry key") {
  Config c = Config::defaults();
  for (const KeySpec& spec : registry()) {
    CHECK(c.get(spec.key) == spec.default_value);
  }
}

TEST_CASE("parse(render(c)) == c") {
  Config c = Config::defaults();
  c.set("train.steps", "17");
  c.set("model.n_tok", "4");
  c.set("augment.blur", "false");
  Config back = Config::parse_text(c.render(), "<mem>");
  CHECK(back == c);
  CHECK(back.digest() == c.digest());
}

TEST_CASE("unknown keys are rejected with line numbers") {
  CHECK_THROWS_AS(Config::defaults().set("train.bogus", "1"), ConfigError);
  CHECK_THROWS_WITH_AS(
      Config::parse_text("[train]\nsteps = 5\nbogus = 1\n", "t.cfg"),
      doctest::Contains("t.cfg:3"), ConfigError);
  CHECK_THROWS_WITH_AS(Config::parse_text("steps 5\n", "t.cfg"),
                       doctest::Contains("t.cfg:1"), ConfigError);
}

TEST_CASE("sections, comments and full key names all parse") {
  Config c = Config::parse_text(
      "# comment\n"
      "[train]\n"
      "steps = 9\n"
      "\n"
      "ot.epsilon = 0.25\n",
      "<mem>");
  CHECK(c.get("train.steps") == "9");
  CHECK(c.get_double("ot.epsilon") == doctest::Approx(0.25));
}

TEST_CASE("typed getters validate") {
  Config c = Config::defaults();
  c.set("train.steps", "abc");
  CHECK_THROWS_AS(c.get_size("train.steps"), ConfigError);
  c.set("augment.enabled", "maybe");
  CHECK_THROWS_AS(c.get_bool("augment.enabled"), ConfigError);
}

TEST_CASE("digest changes when a value changes") {
  Config a = Config::defaults();
  Config b = Config::defaults();
  CHECK(a.digest() == b.digest());
  b.set("train.steps", "123");
  CHECK(a.digest() != b.digest());
}

TEST_CASE("run config builds from defaults and validates geometry") {
  RunConfig rc = build_run_config(Config::defaults());
  CHECK(rc.encoder.final_channels() == 32);
  CHECK(rc.train.batch_size == 64);
  CHECK(rc.train.objective.weights.alpha == doctest::Approx(0.6));
  CHECK(rc.train.objective.weights.beta == doctest::Approx(25.0));
  CHECK(rc.probe.holdout_fraction == doctest::Approx(0.2));

  Config bad = Config::defaults();
  bad.set("ot.mode", "sideways");
  CHECK_THROWS_AS(build_run_config(bad), ConfigError);

  Config bad_geo = Config::defaults();
  bad_geo.set("model.encoder_blocks", "8:3:2,8:3:2");
  bad_geo.set("model.input_size", "4");  // collapses to 1x1 spatial
  CHECK_THROWS_AS(build_run_config(bad_geo), ConfigError);
}

TEST_SUITE_END();
