#include <doctest.h>

#include "rackctl/config.hpp"
#include "rackctl/csv.hpp"
#include "rackctl/errors.hpp"

#include <sstream>

using namespace rackctl;

TEST_CASE("config parsing: sections, comments, typed getters") {
    auto cfg = Config::from_string(
        "# run setup\n"
        "[engine]\n"
        "horizon_s = 86400\n"
        "seed = 7\n"
        "use_fallback = true\n"
        "\n"
        "[thermo]\n"
        "cop_coefficients = 0.458, 0.0008, 0.0068\n"
        "label = reference rack\n");
    CHECK(cfg.get_double("engine.horizon_s") == doctest::Approx(86400));
    CHECK(cfg.get_int("engine.seed") == 7);
    CHECK(cfg.get_bool("engine.use_fallback"));
    CHECK(cfg.get_string("thermo.label") == "reference rack");
    auto list = cfg.get_double_list("thermo.cop_coefficients");
    REQUIRE(list.size() == 3);
    CHECK(list[2] == doctest::Approx(0.0068));
    CHECK(cfg.get_double("engine.missing", 1.5) == doctest::Approx(1.5));
    CHECK_FALSE(cfg.has("engine.missing"));
}

TEST_CASE("config errors carry the key path") {
    auto cfg = Config::from_string("[a]\nx = hello\n");
    CHECK_THROWS_WITH_AS(cfg.get_double("a.x"), doctest::Contains("a.x"), ConfigError);
    CHECK_THROWS_WITH_AS(cfg.get_double("a.y"), doctest::Contains("a.y"), ConfigError);
    CHECK_THROWS_AS(Config::from_string("[unterminated\n"), ConfigError);
    CHECK_THROWS_AS(Config::from_string("novalue\n"), ConfigError);
}

TEST_CASE("config overrides replace file values") {
    auto cfg = Config::from_string("[engine]\nseed = 1\n");
    cfg.set("engine.seed", "42");
    CHECK(cfg.get_int("engine.seed") == 42);
}

TEST_CASE("config round-trips through its string form") {
    auto cfg = Config::from_string("[b]\nk = 2\n[a]\nj = 1\n");
    auto again = Config::from_string(cfg.to_string());
    CHECK(again.get_int("a.j") == 1);
    CHECK(again.get_int("b.k") == 2);
    CHECK(cfg.to_string() == again.to_string());
}

TEST_CASE("fnv hash is stable and content sensitive") {
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(fnv1a_hex("a") != fnv1a_hex("b"));
    CHECK(fnv1a_hex("config") == fnv1a_hex("config"));
}

TEST_CASE("csv reading validates field counts and reports line numbers") {
    std::istringstream ok("a,b\n1,2\n3,4\n");
    auto t = read_csv(ok, "t.csv");
    CHECK(t.header.size() == 2);
    CHECK(t.rows.size() == 2);
    CHECK(t.column("b") == 1);
    CHECK(t.column("nope") == -1);
    CHECK_THROWS_AS(t.require_column("nope", "t.csv"), ParseError);

    std::istringstream bad("a,b\n1\n");
    CHECK_THROWS_WITH_AS(read_csv(bad, "x.csv"), doctest::Contains("x.csv:2"), ParseError);
}
