#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <string>

#include "qkd/config.hpp"
#include "qkd/scenarios.hpp"

using namespace qkd;

TEST_CASE("config serialization round trips losslessly", "[config]") {
    SessionConfig c;
    c.scenario = "custom";
    c.source.pair_rate = 12'345.678;
    c.source.visibility_z = 0.87654321;
    c.alice_link.transmission = 0.123456789012345;
    c.bob_link.background_rate = 12'140.0;
    c.clock.initial_offset = -987'654'321;
    c.clock.drift = 1e-8;
    c.alice_rotation_deg = 22.5;
    c.duration_seconds = 59.5;
    c.epoch_seconds = 2;
    c.seed = 0xfeedfacecafebeefull;
    c.cascade.backtrack = BacktrackMode::first_pass_only;
    c.cascade.estimate_mode = EstimateMode::running_average;
    c.cascade.shuffle_before = false;
    c.double_click_policy = DoubleClickPolicy::discard;
    c.dead_time_rejection = true;
    c.verify_rounds = 128;
    c.parity_compat = true;
    c.role = Role::bob;
    c.connect_host = "alice.example";
    c.port = 4187;
    c.offline = false;
    c.output_dir = "/tmp/qkd-out";

    const auto text = serialize_config(c);
    const auto parsed = parse_config_string(text);
    CHECK(serialize_config(parsed) == text);
    CHECK(parsed.seed == c.seed);
    CHECK(parsed.clock.initial_offset == c.clock.initial_offset);
    CHECK(parsed.clock.drift == c.clock.drift);
    CHECK(parsed.cascade.backtrack == BacktrackMode::first_pass_only);
    CHECK(parsed.double_click_policy == DoubleClickPolicy::discard);
    CHECK(parsed.role == Role::bob);
    CHECK(parsed.connect_host == "alice.example");
    CHECK(parsed.output_dir == "/tmp/qkd-out");
}

TEST_CASE("config files survive disk round trips", "[config]") {
    SessionConfig c = make_scenario("two-link-night2");
    c.duration_seconds = 60.0;
    c.seed = 77;
    const auto path = std::filesystem::temp_directory_path() / "qkd_config_test.cfg";
    save_config(path, c);
    const auto loaded = load_config(path);
    CHECK(serialize_config(loaded) == serialize_config(c));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_config(path), ConfigError);
}

TEST_CASE("parser skips comments and tolerates whitespace", "[config]") {
    const auto c = parse_config_string(
        "# leading comment\n"
        "\n"
        "seed=42\r\n"
        "   # indented comment\n"
        "  window =13\n"
        "connect_host=\n");
    CHECK(c.seed == 42);
    CHECK(c.window == 13);
    CHECK(c.connect_host.empty());
}

TEST_CASE("parser reports unknown keys and bad values", "[config]") {
    CHECK_THROWS_WITH(parse_config_string("no_such_key=1\n"),
                      Catch::Matchers::ContainsSubstring("no_such_key"));
    CHECK_THROWS_WITH(parse_config_string("seed=banana\n"),
                      Catch::Matchers::ContainsSubstring("seed"));
    CHECK_THROWS_WITH(parse_config_string("seed=-1\n"),
                      Catch::Matchers::ContainsSubstring("seed"));
    CHECK_THROWS_WITH(parse_config_string("seed=1\nthis line has no equals\n"),
                      Catch::Matchers::ContainsSubstring("line 2"));
    CHECK_THROWS_AS(parse_config_string("duration_seconds=1.5x\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("offline=maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("role=eve\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("port=0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("port=70000\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("cascade.backtrack=sometimes\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("double_click_policy=explode\n"), ConfigError);
}

TEST_CASE("validation rejects out-of-range settings", "[config]") {
    const auto reject = [](auto&& mutate) {
        SessionConfig c;
        mutate(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
    };
    reject([](SessionConfig& c) { c.duration_seconds = -1.0; });
    reject([](SessionConfig& c) { c.epoch_seconds = 3; });
    reject([](SessionConfig& c) { c.window = 0; });
    reject([](SessionConfig& c) { c.search_range = 0; });
    reject([](SessionConfig& c) { c.confidence_threshold = 0.0; });
    reject([](SessionConfig& c) { c.verify_rounds = 8; });
    reject([](SessionConfig& c) { c.verify_rounds = 512; });
    reject([](SessionConfig& c) { c.source.pair_rate = -5.0; });
    reject([](SessionConfig& c) { c.alice_link.transmission = 1.5; });
    reject([](SessionConfig& c) { c.cascade.passes = 0; });
    reject([](SessionConfig& c) { c.alice_rotation_deg = std::nan(""); });

    SessionConfig ok;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("every named scenario builds a valid config", "[config]") {
    for (const auto& spec : scenario_table()) {
        const auto cfg = make_scenario(spec.name);
        CHECK(cfg.scenario == spec.name);
        CHECK(cfg.epoch_seconds == spec.epoch_seconds);
        CHECK(cfg.clock.initial_offset == 123'456'789);
        CHECK(cfg.source.pair_rate > 0.0);
        CHECK(cfg.source.pair_rate <= cfg.source.singles_rate);
        CHECK(cfg.alice_link.transmission <= 1.0);
        CHECK(cfg.bob_link.transmission <= 1.0);
        CHECK(cfg.alice_link.background_rate == spec.background_a);
        CHECK(cfg.bob_link.background_rate == spec.background_b);
        CHECK_NOTHROW(cfg.validate());
    }
}

TEST_CASE("unknown scenarios list the available names", "[config]") {
    CHECK_THROWS_WITH(make_scenario("lunar"),
                      Catch::Matchers::ContainsSubstring("two-link-night2"));
}

TEST_CASE("visibility targets scale with the scenario error rate", "[config]") {
    const auto clean = make_scenario("local");
    const auto noisy = make_scenario("two-435m");
    CHECK(clean.source.visibility_z > noisy.source.visibility_z);
    CHECK(clean.source.visibility_x > noisy.source.visibility_x);
    CHECK(noisy.source.visibility_z > 0.5);
}
