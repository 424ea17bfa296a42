// qkdkit: operator CLI. `simulate` produces timetag files, `node` runs one
// protocol party (or both, offline), `replay-table3` re-derives the headline
// figures from the reference coincidence matrix, `report` summarizes a
// finished session directory.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qkd/analysis.hpp"
#include "qkd/config.hpp"
#include "qkd/keystore.hpp"
#include "qkd/netlink.hpp"
#include "qkd/photon_sim.hpp"
#include "qkd/scenarios.hpp"
#include "qkd/session.hpp"
#include "qkd/timetag_io.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config_file;
    std::string scenario;
    double duration = -1.0;
    std::int64_t seed = -1;
    int epoch_seconds = 0;
    std::string cascade_backtrack;
    std::string double_click;
    std::string out_dir;
    std::string save_config;
};

void add_common_flags(CLI::App& cmd, CommonFlags& f) {
    cmd.add_option("--config", f.config_file, "key=value config file (flags override)");
    cmd.add_option("--scenario", f.scenario, "scenario preset: " + qkd::scenario_name_list());
    cmd.add_option("--duration", f.duration, "simulated seconds");
    cmd.add_option("--seed", f.seed, "RNG seed");
    cmd.add_option("--epoch-seconds", f.epoch_seconds, "epoch length, 1 or 2")
        ->check(CLI::Range(1, 2));
    cmd.add_option("--cascade-backtrack", f.cascade_backtrack,
                   "cascade backtracking: full | first_pass_only");
    cmd.add_option("--double-click", f.double_click,
                   "double click policy: randomize | first_wins | discard");
    cmd.add_option("--out", f.out_dir, "output directory");
    cmd.add_option("--save-config", f.save_config, "write the effective config and continue");
}

qkd::SessionConfig build_config(const CommonFlags& f) {
    if (!f.config_file.empty() && !f.scenario.empty())
        throw qkd::ConfigError("--config and --scenario are mutually exclusive");
    qkd::SessionConfig cfg;
    if (!f.config_file.empty())
        cfg = qkd::load_config(f.config_file);
    else
        cfg = qkd::make_scenario(f.scenario.empty() ? "local" : f.scenario);
    if (f.duration >= 0.0) cfg.duration_seconds = f.duration;
    if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
    if (f.epoch_seconds > 0) cfg.epoch_seconds = static_cast<std::uint32_t>(f.epoch_seconds);
    if (!f.cascade_backtrack.empty())
        cfg.cascade.backtrack = qkd::backtrack_mode_from_name(f.cascade_backtrack);
    if (!f.double_click.empty())
        cfg.double_click_policy = qkd::double_click_policy_from_name(f.double_click);
    if (!f.out_dir.empty()) cfg.output_dir = f.out_dir;
    cfg.validate();
    if (!f.save_config.empty()) qkd::save_config(f.save_config, cfg);
    return cfg;
}

void print_report(const char* label, const qkd::SessionReport& r,
                  const qkd::CommLedger& ledger) {
    std::printf("[%s] epochs %zu (%.0f s simulated)\n", label, r.epoch_count,
                r.duration_seconds);
    const double dur = r.duration_seconds > 0.0 ? r.duration_seconds : 1.0;
    std::printf("  raw %llu (%.1f/s)  sifted %llu (%.1f/s)  secure %llu (%.1f/s)\n",
                (unsigned long long)r.raw_bits, (double)r.raw_bits / dur,
                (unsigned long long)r.sifted_bits, (double)r.sifted_bits / dur,
                (unsigned long long)r.secure_bits, (double)r.secure_bits / dur);
    std::printf("  optimal %llu (%.1f/s)  leaked %llu\n", (unsigned long long)r.optimal_bits,
                (double)r.optimal_bits / dur, (unsigned long long)r.leaked_bits);
    std::printf("  qber %.2f%% (x %.2f%%, z %.2f%%)  visibility z %.1f%% x %.1f%%\n",
                100.0 * r.qber_total, 100.0 * r.qber_x, 100.0 * r.qber_z,
                100.0 * r.visibility_z, 100.0 * r.visibility_x);
    std::printf("  p0 %.4f (extra shrink %.2f%%)\n", r.bias.p0, 100.0 * r.bias.extra_fraction);
    std::printf("  classical channel: %llu B sent, %llu B received\n",
                (unsigned long long)ledger.total_sent(),
                (unsigned long long)ledger.total_received());
}

int cmd_simulate(const CommonFlags& flags) {
    const auto cfg = build_config(flags);
    if (cfg.output_dir.empty()) throw qkd::ConfigError("simulate requires --out");
    const auto streams = qkd::generate_streams(
        cfg.source, cfg.alice_link, cfg.bob_link, cfg.clock, cfg.duration_seconds, cfg.seed,
        qkd::AnalyzerSetting{cfg.alice_rotation_deg}, qkd::AnalyzerSetting{cfg.bob_rotation_deg});
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    qkd::write_timetag_file(dir / "alice.ttag", streams.alice);
    qkd::write_timetag_file(dir / "bob.ttag", streams.bob);
    qkd::write_truth_csv(dir / "truth.csv", streams.truth);
    std::printf("wrote %zu alice events, %zu bob events, %zu truth pairs to %s\n",
                streams.alice.size(), streams.bob.size(), streams.truth.size(),
                dir.string().c_str());
    return 0;
}

void write_node_outputs(const fs::path& dir, const qkd::SessionOutcome& outcome,
                        double duration, const char* label) {
    fs::create_directories(dir);
    const auto report = qkd::session_report(outcome.epochs, dir);
    qkd::write_comm_load(dir / "comm_load.csv", outcome.ledger, duration);
    print_report(label, report, outcome.ledger);
}

qkd::SessionHooks keystore_hooks(const fs::path& dir, std::uint32_t abort_epoch) {
    qkd::SessionHooks hooks;
    hooks.inject_abort_epoch = abort_epoch;
    hooks.on_secure_key = [dir](const qkd::KeyBuffer& key) { qkd::append_key(dir, key); };
    return hooks;
}

int cmd_node(const CommonFlags& flags, const std::string& role_name, bool offline,
             const std::string& connect, int listen_port, const std::string& in_dir,
             std::int64_t abort_epoch) {
    auto cfg = build_config(flags);
    if (cfg.output_dir.empty()) throw qkd::ConfigError("node requires --out");
    cfg.offline = offline;
    if (!role_name.empty()) cfg.role = qkd::role_from_name(role_name);
    const auto abort_at = abort_epoch >= 0 ? static_cast<std::uint32_t>(abort_epoch)
                                           : 0xffffffffu;
    const fs::path out(cfg.output_dir);

    if (offline) {
        std::vector<qkd::DetectionEvent> alice_events;
        std::vector<qkd::DetectionEvent> bob_events;
        if (!in_dir.empty()) {
            alice_events = qkd::read_timetag_file(fs::path(in_dir) / "alice.ttag");
            bob_events = qkd::read_timetag_file(fs::path(in_dir) / "bob.ttag");
        } else {
            auto streams = qkd::generate_streams(cfg.source, cfg.alice_link, cfg.bob_link,
                                                 cfg.clock, cfg.duration_seconds, cfg.seed,
                                                 qkd::AnalyzerSetting{cfg.alice_rotation_deg},
                                                 qkd::AnalyzerSetting{cfg.bob_rotation_deg});
            alice_events = std::move(streams.alice);
            bob_events = std::move(streams.bob);
        }
        const auto result = qkd::run_offline_session(
            cfg, alice_events, bob_events, keystore_hooks(out / "alice", abort_at),
            keystore_hooks(out / "bob", 0xffffffffu));
        write_node_outputs(out / "alice", result.alice, cfg.duration_seconds, "alice");
        write_node_outputs(out / "bob", result.bob, cfg.duration_seconds, "bob");
        return 0;
    }

    std::vector<qkd::DetectionEvent> events;
    if (!in_dir.empty()) {
        const char* name = cfg.role == qkd::Role::alice ? "alice.ttag" : "bob.ttag";
        events = qkd::read_timetag_file(fs::path(in_dir) / name);
    } else {
        auto streams = qkd::generate_streams(cfg.source, cfg.alice_link, cfg.bob_link, cfg.clock,
                                             cfg.duration_seconds, cfg.seed,
                                             qkd::AnalyzerSetting{cfg.alice_rotation_deg},
                                             qkd::AnalyzerSetting{cfg.bob_rotation_deg});
        events = cfg.role == qkd::Role::alice ? std::move(streams.alice)
                                              : std::move(streams.bob);
    }

    std::unique_ptr<qkd::ByteStream> stream;
    if (!connect.empty()) {
        std::string host = connect;
        std::uint16_t port = cfg.port;
        if (const auto colon = connect.rfind(':'); colon != std::string::npos) {
            host = connect.substr(0, colon);
            port = static_cast<std::uint16_t>(std::stoi(connect.substr(colon + 1)));
        }
        std::printf("connecting to %s:%u ...\n", host.c_str(), port);
        stream = qkd::tcp_connect(host, port);
    } else {
        const auto port = listen_port > 0 ? static_cast<std::uint16_t>(listen_port) : cfg.port;
        std::printf("listening on port %u ...\n", port);
        stream = qkd::tcp_accept_one(port);
    }
    const auto outcome = qkd::run_session(cfg, cfg.role, events, *stream,
                                          keystore_hooks(out, abort_at));
    write_node_outputs(out, outcome, cfg.duration_seconds, qkd::role_name(cfg.role));
    return 0;
}

int cmd_replay_table3(std::uint64_t scale) {
    auto m = qkd::reference_coincidence_matrix();
    for (auto& row : m.counts)
        for (auto& c : row) c *= scale;
    const auto q = qkd::qber_decompose(m);
    const auto v = qkd::visibilities(m);
    const auto b = qkd::apriori_bias(m);
    std::printf("coincidences %llu, same-basis %llu\n", (unsigned long long)m.total(),
                (unsigned long long)m.same_basis_total());
    std::printf("qber total %.2f%%  x %.2f%%  z %.2f%%\n", 100.0 * q.total,
                100.0 * q.x_component, 100.0 * q.z_component);
    std::printf("visibility z %.1f%%  x %.1f%%\n", 100.0 * v.z, 100.0 * v.x);
    std::printf("a priori bias p0 %.4f  extra shrink %.2f%%\n", b.p0, 100.0 * b.extra_fraction);
    return 0;
}

int cmd_report(const std::string& dir_arg) {
    const fs::path dir(dir_arg);
    const auto keys = qkd::read_keystore(dir);
    std::uint64_t secure = 0;
    for (const auto& k : keys) secure += k.bits.size();
    std::printf("key store: %zu keys, %llu secure bits\n", keys.size(),
                (unsigned long long)secure);
    for (const auto& k : keys)
        std::printf("  epoch %u: %zu bits\n", k.epoch_id, k.bits.size());

    const fs::path epochs_csv = dir / "epochs.csv";
    if (fs::exists(epochs_csv)) {
        std::ifstream in(epochs_csv);
        std::string line;
        std::getline(in, line);  // header
        std::uint64_t epochs = 0, pairs = 0, sifted = 0;
        while (std::getline(in, line)) {
            std::istringstream row(line);
            std::string cell;
            std::vector<std::string> cells;
            while (std::getline(row, cell, ',')) cells.push_back(cell);
            if (cells.size() != 5) throw qkd::ConfigError("malformed epochs.csv row");
            ++epochs;
            pairs += std::stoull(cells[2]);
            sifted += std::stoull(cells[3]);
        }
        std::printf("epochs %llu: %llu raw pairs, %llu sifted bits\n",
                    (unsigned long long)epochs, (unsigned long long)pairs,
                    (unsigned long long)sifted);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"entangled-photon QKD toolkit"};
    app.require_subcommand(1);

    CommonFlags sim_flags;
    auto* sim = app.add_subcommand("simulate", "generate timetag streams and ground truth");
    add_common_flags(*sim, sim_flags);

    CommonFlags node_flags;
    std::string role_name;
    std::string connect;
    std::string in_dir;
    int listen_port = -1;
    bool offline = false;
    std::int64_t abort_epoch = -1;
    auto* node = app.add_subcommand("node", "run one protocol party (or both with --offline)");
    add_common_flags(*node, node_flags);
    node->add_option("--role", role_name, "alice | bob");
    node->add_flag("--offline", offline, "single-process run of both parties");
    node->add_option("--connect", connect, "peer address, host[:port]");
    node->add_option("--listen", listen_port, "accept one peer on this port (0 uses the config port)");
    node->add_option("--in", in_dir, "read alice.ttag/bob.ttag from this directory");
    node->add_option("--abort-epoch", abort_epoch, "inject an operator abort at this epoch");

    std::uint64_t scale = 1;
    auto* replay = app.add_subcommand("replay-table3",
                                      "analysis figures from the reference matrix");
    replay->add_option("--scale", scale, "multiply every cell")->check(CLI::PositiveNumber);

    std::string report_dir;
    auto* report = app.add_subcommand("report", "summarize a session output directory");
    report->add_option("dir", report_dir, "session output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(sim_flags);
        if (node->parsed()) {
            if (!offline && connect.empty() && listen_port < 0)
                throw qkd::ConfigError("node needs --offline, --connect, or --listen");
            return cmd_node(node_flags, role_name, offline, connect, listen_port, in_dir,
                            abort_epoch);
        }
        if (replay->parsed()) return cmd_replay_table3(scale);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
