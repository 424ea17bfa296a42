#pragma once

// Session configuration: all knobs for the simulator and the two-node
// protocol, with a line-oriented key=value file format that round-trips
// losslessly. Parsing rejects unknown keys; validate() rejects out-of-range
// values before any file or network activity starts.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "qkd/cascade.hpp"
#include "qkd/coincidence.hpp"
#include "qkd/errors.hpp"
#include "qkd/photon_sim.hpp"
#include "qkd/ticks.hpp"

namespace qkd {

enum class Role : std::uint8_t { alice = 0, bob = 1 };

inline const char* role_name(Role r) { return r == Role::alice ? "alice" : "bob"; }

struct SessionConfig {
    std::string scenario;  // informational; parameters below are authoritative

    SourceModel source;
    LinkModel alice_link;
    LinkModel bob_link;
    ClockModel clock;  // applied to bob's timetagger
    double alice_rotation_deg = 0.0;
    double bob_rotation_deg = 0.0;

    double duration_seconds = 10.0;
    std::uint32_t epoch_seconds = 1;
    std::uint64_t seed = 1;

    std::uint64_t window = 13;
    std::int64_t search_range = 640'000'000;
    std::int64_t track_range = 65'536;
    double confidence_threshold = 5.0;

    CascadeConfig cascade;
    DoubleClickPolicy double_click_policy = DoubleClickPolicy::randomize;
    Tick double_click_window = 13;
    bool dead_time_rejection = false;
    Tick dead_time = 320;

    std::uint32_t verify_rounds = 64;
    std::uint32_t n_safety = 30;
    bool parity_compat = false;

    Role role = Role::alice;
    std::string connect_host;
    std::uint16_t port = 4187;
    bool offline = true;

    std::string output_dir;

    void validate() const {
        if (!(duration_seconds >= 0.0) || !std::isfinite(duration_seconds))
            throw ConfigError("duration_seconds must be finite and non-negative");
        if (epoch_seconds != 1 && epoch_seconds != 2)
            throw ConfigError("epoch_seconds must be 1 or 2");
        if (window < 1 || window > 1'000'000) throw ConfigError("window out of range");
        if (search_range < 1) throw ConfigError("search_range must be positive");
        if (track_range < 1) throw ConfigError("track_range must be positive");
        if (!(confidence_threshold > 0.0)) throw ConfigError("confidence_threshold must be > 0");
        if (verify_rounds < 16 || verify_rounds > 256)
            throw ConfigError("verify_rounds must lie in [16, 256]");
        if (n_safety > 1'000'000) throw ConfigError("n_safety out of range");
        source.validate();
        alice_link.validate();
        bob_link.validate();
        clock.validate();
        cascade.validate();
        if (!std::isfinite(alice_rotation_deg) || !std::isfinite(bob_rotation_deg))
            throw ConfigError("analyzer rotation must be finite");
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw ConfigError("");
        return d;
    } catch (...) {
        throw ConfigError("bad numeric value for " + key + ": " + v);
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw ConfigError("");
        const std::uint64_t n = std::stoull(v, &used);
        if (used != v.size()) throw ConfigError("");
        return n;
    } catch (...) {
        throw ConfigError("bad unsigned value for " + key + ": " + v);
    }
}

inline std::int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::int64_t n = std::stoll(v, &used);
        if (used != v.size()) throw ConfigError("");
        return n;
    } catch (...) {
        throw ConfigError("bad integer value for " + key + ": " + v);
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("bad boolean value for " + key + ": " + v);
}

}  // namespace detail

inline DoubleClickPolicy double_click_policy_from_name(const std::string& s) {
    if (s == "randomize") return DoubleClickPolicy::randomize;
    if (s == "first_wins") return DoubleClickPolicy::first_wins;
    if (s == "discard") return DoubleClickPolicy::discard;
    throw ConfigError("unknown double_click_policy: " + s);
}

inline BacktrackMode backtrack_mode_from_name(const std::string& s) {
    if (s == "full") return BacktrackMode::full;
    if (s == "first_pass_only") return BacktrackMode::first_pass_only;
    throw ConfigError("unknown cascade.backtrack: " + s);
}

inline EstimateMode estimate_mode_from_name(const std::string& s) {
    if (s == "sample_10pct") return EstimateMode::sample_10pct;
    if (s == "previous_block") return EstimateMode::previous_block;
    if (s == "running_average") return EstimateMode::running_average;
    throw ConfigError("unknown cascade.estimate_mode: " + s);
}

inline Role role_from_name(const std::string& s) {
    if (s == "alice") return Role::alice;
    if (s == "bob") return Role::bob;
    throw ConfigError("unknown role: " + s);
}

inline std::string serialize_config(const SessionConfig& c) {
    using detail::fmt_double;
    std::ostringstream out;
    const auto link = [&](const char* prefix, const LinkModel& l) {
        out << prefix << ".transmission=" << fmt_double(l.transmission) << "\n";
        out << prefix << ".box_efficiency=" << fmt_double(l.box_efficiency) << "\n";
        out << prefix << ".quantum_efficiency=" << fmt_double(l.quantum_efficiency) << "\n";
        out << prefix << ".channel_factor_h=" << fmt_double(l.channel_factor[0]) << "\n";
        out << prefix << ".channel_factor_v=" << fmt_double(l.channel_factor[1]) << "\n";
        out << prefix << ".channel_factor_p=" << fmt_double(l.channel_factor[2]) << "\n";
        out << prefix << ".channel_factor_m=" << fmt_double(l.channel_factor[3]) << "\n";
        out << prefix << ".background_rate=" << fmt_double(l.background_rate) << "\n";
        out << prefix << ".dark_rate=" << fmt_double(l.dark_rate) << "\n";
    };
    out << "scenario=" << c.scenario << "\n";
    out << "source.pair_rate=" << fmt_double(c.source.pair_rate) << "\n";
    out << "source.singles_rate=" << fmt_double(c.source.singles_rate) << "\n";
    out << "source.visibility_z=" << fmt_double(c.source.visibility_z) << "\n";
    out << "source.visibility_x=" << fmt_double(c.source.visibility_x) << "\n";
    out << "source.state_phase=" << fmt_double(c.source.state_phase) << "\n";
    link("alice_link", c.alice_link);
    link("bob_link", c.bob_link);
    out << "clock.initial_offset=" << c.clock.initial_offset << "\n";
    out << "clock.drift=" << fmt_double(c.clock.drift) << "\n";
    out << "clock.jitter_sigma=" << fmt_double(c.clock.jitter_sigma) << "\n";
    out << "clock.dead_time=" << c.clock.dead_time << "\n";
    out << "clock.resync_period=" << c.clock.resync_period << "\n";
    out << "alice_rotation_deg=" << fmt_double(c.alice_rotation_deg) << "\n";
    out << "bob_rotation_deg=" << fmt_double(c.bob_rotation_deg) << "\n";
    out << "duration_seconds=" << fmt_double(c.duration_seconds) << "\n";
    out << "epoch_seconds=" << c.epoch_seconds << "\n";
    out << "seed=" << c.seed << "\n";
    out << "window=" << c.window << "\n";
    out << "search_range=" << c.search_range << "\n";
    out << "track_range=" << c.track_range << "\n";
    out << "confidence_threshold=" << fmt_double(c.confidence_threshold) << "\n";
    out << "cascade.passes=" << c.cascade.passes << "\n";
    out << "cascade.initial_block_size=" << c.cascade.initial_block_size << "\n";
    out << "cascade.backtrack=" << backtrack_mode_name(c.cascade.backtrack) << "\n";
    out << "cascade.estimate_mode=" << estimate_mode_name(c.cascade.estimate_mode) << "\n";
    out << "cascade.shuffle_before=" << (c.cascade.shuffle_before ? "true" : "false") << "\n";
    out << "double_click_policy=" << double_click_policy_name(c.double_click_policy) << "\n";
    out << "double_click_window=" << c.double_click_window << "\n";
    out << "dead_time_rejection=" << (c.dead_time_rejection ? "true" : "false") << "\n";
    out << "dead_time=" << c.dead_time << "\n";
    out << "verify_rounds=" << c.verify_rounds << "\n";
    out << "n_safety=" << c.n_safety << "\n";
    out << "parity_compat=" << (c.parity_compat ? "true" : "false") << "\n";
    out << "role=" << role_name(c.role) << "\n";
    out << "connect_host=" << c.connect_host << "\n";
    out << "port=" << c.port << "\n";
    out << "offline=" << (c.offline ? "true" : "false") << "\n";
    out << "output_dir=" << c.output_dir << "\n";
    return out.str();
}

inline void apply_config_entry(SessionConfig& c, const std::string& key, const std::string& val) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_i64;
    using detail::parse_u64;
    const auto link_entry = [&](LinkModel& l, const std::string& sub) {
        if (sub == "transmission") l.transmission = parse_double(key, val);
        else if (sub == "box_efficiency") l.box_efficiency = parse_double(key, val);
        else if (sub == "quantum_efficiency") l.quantum_efficiency = parse_double(key, val);
        else if (sub == "channel_factor_h") l.channel_factor[0] = parse_double(key, val);
        else if (sub == "channel_factor_v") l.channel_factor[1] = parse_double(key, val);
        else if (sub == "channel_factor_p") l.channel_factor[2] = parse_double(key, val);
        else if (sub == "channel_factor_m") l.channel_factor[3] = parse_double(key, val);
        else if (sub == "background_rate") l.background_rate = parse_double(key, val);
        else if (sub == "dark_rate") l.dark_rate = parse_double(key, val);
        else throw ConfigError("unknown configuration key: " + key);
    };
    if (key == "scenario") c.scenario = val;
    else if (key == "source.pair_rate") c.source.pair_rate = parse_double(key, val);
    else if (key == "source.singles_rate") c.source.singles_rate = parse_double(key, val);
    else if (key == "source.visibility_z") c.source.visibility_z = parse_double(key, val);
    else if (key == "source.visibility_x") c.source.visibility_x = parse_double(key, val);
    else if (key == "source.state_phase") c.source.state_phase = parse_double(key, val);
    else if (key.rfind("alice_link.", 0) == 0) link_entry(c.alice_link, key.substr(11));
    else if (key.rfind("bob_link.", 0) == 0) link_entry(c.bob_link, key.substr(9));
    else if (key == "clock.initial_offset") c.clock.initial_offset = parse_i64(key, val);
    else if (key == "clock.drift") c.clock.drift = parse_double(key, val);
    else if (key == "clock.jitter_sigma") c.clock.jitter_sigma = parse_double(key, val);
    else if (key == "clock.dead_time") c.clock.dead_time = parse_u64(key, val);
    else if (key == "clock.resync_period") c.clock.resync_period = parse_u64(key, val);
    else if (key == "alice_rotation_deg") c.alice_rotation_deg = parse_double(key, val);
    else if (key == "bob_rotation_deg") c.bob_rotation_deg = parse_double(key, val);
    else if (key == "duration_seconds") c.duration_seconds = parse_double(key, val);
    else if (key == "epoch_seconds") c.epoch_seconds = static_cast<std::uint32_t>(parse_u64(key, val));
    else if (key == "seed") c.seed = parse_u64(key, val);
    else if (key == "window") c.window = parse_u64(key, val);
    else if (key == "search_range") c.search_range = parse_i64(key, val);
    else if (key == "track_range") c.track_range = parse_i64(key, val);
    else if (key == "confidence_threshold") c.confidence_threshold = parse_double(key, val);
    else if (key == "cascade.passes") c.cascade.passes = static_cast<int>(parse_i64(key, val));
    else if (key == "cascade.initial_block_size")
        c.cascade.initial_block_size = parse_i64(key, val);
    else if (key == "cascade.backtrack") c.cascade.backtrack = backtrack_mode_from_name(val);
    else if (key == "cascade.estimate_mode")
        c.cascade.estimate_mode = estimate_mode_from_name(val);
    else if (key == "cascade.shuffle_before") c.cascade.shuffle_before = parse_bool(key, val);
    else if (key == "double_click_policy") c.double_click_policy = double_click_policy_from_name(val);
    else if (key == "double_click_window") c.double_click_window = parse_u64(key, val);
    else if (key == "dead_time_rejection") c.dead_time_rejection = parse_bool(key, val);
    else if (key == "dead_time") c.dead_time = parse_u64(key, val);
    else if (key == "verify_rounds") c.verify_rounds = static_cast<std::uint32_t>(parse_u64(key, val));
    else if (key == "n_safety") c.n_safety = static_cast<std::uint32_t>(parse_u64(key, val));
    else if (key == "parity_compat") c.parity_compat = parse_bool(key, val);
    else if (key == "role") c.role = role_from_name(val);
    else if (key == "connect_host") c.connect_host = val;
    else if (key == "port") {
        const auto p = parse_u64(key, val);
        if (p == 0 || p > 65535) throw ConfigError("port out of range");
        c.port = static_cast<std::uint16_t>(p);
    } else if (key == "offline") c.offline = parse_bool(key, val);
    else if (key == "output_dir") c.output_dir = val;
    else throw ConfigError("unknown configuration key: " + key);
}

inline SessionConfig parse_config(std::istream& in) {
    SessionConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        if (line[start] == '#') continue;
        const auto eq = line.find('=', start);
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(start, eq - start);
        std::string val = line.substr(eq + 1);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        apply_config_entry(c, key, val);
    }
    return c;
}

inline SessionConfig parse_config_string(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

inline SessionConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse_config(in);
}

inline void save_config(const std::filesystem::path& path, const SessionConfig& c) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    out << serialize_config(c);
}

}  // namespace qkd
