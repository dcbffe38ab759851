#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "iconq/config.hpp"

using namespace iconq;

TEST_CASE("parses keys, comments, and blank lines") {
    auto cfg = KvConfig::parse_text(
        "# header comment\n"
        "alpha = 1.5\n"
        "\n"
        "name = fast path   # trailing comment\n"
        "count=42\n"
        "flag = true\n");
    CHECK(cfg.get_double("alpha", 0.0) == 1.5);
    CHECK(cfg.get_string("name", "") == "fast path");
    CHECK(cfg.get_int("count", 0) == 42);
    CHECK(cfg.get_bool("flag", false) == true);
}

TEST_CASE("defaults apply when a key is absent") {
    auto cfg = KvConfig::parse_text("a = 1\n");
    CHECK(cfg.get_double("missing", 2.5) == 2.5);
    CHECK(cfg.get_int("missing2", 7) == 7);
}

TEST_CASE("unknown keys are rejected by validate") {
    auto cfg = KvConfig::parse_text("known = 1\ntypo_key = 2\n");
    cfg.get_int("known", 0);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("validate passes when every key was declared") {
    auto cfg = KvConfig::parse_text("a = 1\nb = 2\n");
    cfg.get_int("a", 0);
    cfg.get_int("b", 0);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("malformed lines raise ConfigError") {
    CHECK_THROWS_AS(KvConfig::parse_text("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse_text("= value\n"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse_text("a = 1\na = 2\n"), ConfigError);
}

TEST_CASE("type errors raise ConfigError") {
    auto cfg = KvConfig::parse_text("x = not_a_number\ny = 1.5\nz = maybe\n");
    CHECK_THROWS_AS(cfg.get_double("x", 0.0), ConfigError);
    CHECK_THROWS_AS(cfg.get_int("y", 0), ConfigError);
    CHECK_THROWS_AS(cfg.get_bool("z", false), ConfigError);
}
