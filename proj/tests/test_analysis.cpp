#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "qkd/analysis.hpp"

using namespace qkd;

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("reference matrix reproduces the full-night figures", "[analysis]") {
    const auto m = reference_coincidence_matrix();
    CHECK(m.total() == 10'806'880);
    CHECK(m.same_basis_total() == 5'422'762);

    const auto q = qber_decompose(m);
    CHECK(q.total == Catch::Approx(0.049194119159203374).epsilon(1e-12));
    CHECK(q.z_component == Catch::Approx(0.02808347480490569).epsilon(1e-12));
    CHECK(q.x_component == Catch::Approx(0.02111064435429768).epsilon(1e-12));
    CHECK(q.total == Catch::Approx(q.z_component + q.x_component).epsilon(1e-12));

    const auto v = visibilities(m);
    CHECK(v.z == Catch::Approx(0.885988845937459).epsilon(1e-12));
    CHECK(v.x == Catch::Approx(0.9167816742019773).epsilon(1e-12));

    const auto b = apriori_bias(m);
    CHECK(b.p0 == Catch::Approx(0.4725261129946849).epsilon(1e-12));
    CHECK(b.p1 == Catch::Approx(1.0 - b.p0).epsilon(1e-12));
    CHECK(b.extra_fraction == Catch::Approx(0.002179031460405878).epsilon(1e-9));
}

TEST_CASE("derived fractions are scale invariant", "[analysis]") {
    auto m = reference_coincidence_matrix();
    auto scaled = m;
    for (auto& row : scaled.counts)
        for (auto& c : row) c *= 10;
    CHECK(qber_decompose(scaled).total == Catch::Approx(qber_decompose(m).total).epsilon(1e-12));
    CHECK(visibilities(scaled).z == Catch::Approx(visibilities(m).z).epsilon(1e-12));
    CHECK(apriori_bias(scaled).p0 == Catch::Approx(apriori_bias(m).p0).epsilon(1e-12));
}

TEST_CASE("error-free matrix shows zero qber and unit visibility", "[analysis]") {
    auto m = reference_coincidence_matrix();
    m.at(Channel::h, Channel::h) = 0;
    m.at(Channel::v, Channel::v) = 0;
    m.at(Channel::plus, Channel::plus) = 0;
    m.at(Channel::minus, Channel::minus) = 0;
    CHECK(qber_decompose(m).total == 0.0);
    CHECK(visibilities(m).z == 1.0);
    CHECK(visibilities(m).x == 1.0);
}

TEST_CASE("degenerate matrices are rejected", "[analysis]") {
    CoincidenceMatrix empty;
    CHECK_THROWS_AS(qber_decompose(empty), ConfigError);
    CHECK_THROWS_AS(apriori_bias(empty), ConfigError);
    CoincidenceMatrix z_only;
    z_only.at(Channel::h, Channel::v) = 10;
    CHECK_THROWS_AS(visibilities(z_only), ConfigError);
}

TEST_CASE("correlation and the chsh combination", "[analysis]") {
    CHECK(correlation(3, 1) == Catch::Approx(0.5));
    CHECK(correlation(1, 1) == 0.0);
    CHECK_THROWS_AS(correlation(0, 0), ConfigError);
    CHECK(chsh(1.0, -1.0, 1.0, 1.0) == Catch::Approx(4.0));
    const double e = 1.0 / std::sqrt(2.0);
    CHECK(chsh(e, -e, e, e) == Catch::Approx(2.0 * std::sqrt(2.0)));
    CHECK_THROWS_AS(chsh(1.2, 0, 0, 0), ConfigError);
}

TEST_CASE("epoch stats derive from their matrix", "[analysis]") {
    EpochStats e;
    e.matrix = reference_coincidence_matrix();
    e.derive_from_matrix();
    CHECK(e.qber_total == Catch::Approx(0.049194119159203374).epsilon(1e-12));
    CHECK(e.visibility_z == Catch::Approx(0.885988845937459).epsilon(1e-12));

    EpochStats untouched;
    untouched.derive_from_matrix();
    CHECK(untouched.qber_total == 0.0);
    CHECK(untouched.visibility_z == 0.0);
}

TEST_CASE("session report aggregates epochs and writes figure data", "[analysis]") {
    std::vector<EpochStats> epochs(3);
    for (std::size_t i = 0; i < 3; ++i) {
        auto& e = epochs[i];
        e.epoch_id = static_cast<std::uint32_t>(i);
        e.start_seconds = static_cast<double>(i);
        e.duration_seconds = 1.0;
        e.matrix = reference_coincidence_matrix();
        e.raw_bits = e.matrix.total();
        e.sifted_bits = e.matrix.same_basis_total();
        e.corrected_bits = e.sifted_bits;
        e.secure_bits = 1'000 + i;
        e.leaked_bits = 10'000;
        e.derive_from_matrix();
        e.qber_estimate = e.qber_total;
    }

    const auto dir = std::filesystem::temp_directory_path() / "qkd_analysis_test";
    std::filesystem::remove_all(dir);
    const auto r = session_report(epochs, dir);

    CHECK(r.epoch_count == 3);
    CHECK(r.duration_seconds == Catch::Approx(3.0));
    CHECK(r.raw_bits == 3 * 10'806'880ull);
    CHECK(r.sifted_bits == 3 * 5'422'762ull);
    CHECK(r.secure_bits == 3'003);
    CHECK(r.leaked_bits == 30'000);
    CHECK(r.optimal_bits == 3 * optimal_rate(5'422'762, epochs[0].qber_total));
    CHECK(r.qber_total == Catch::Approx(0.049194119159203374).epsilon(1e-12));
    CHECK(r.bias.p0 == Catch::Approx(0.4725261129946849).epsilon(1e-12));
    CHECK(r.matrix.total() == 3 * 10'806'880ull);

    for (const char* name : {"qber_timeseries.csv", "key_rates.csv", "visibilities.csv",
                             "coincidence_matrix.csv", "epochs.csv"})
        CHECK(std::filesystem::exists(dir / name));

    const auto qber = read_lines(dir / "qber_timeseries.csv");
    REQUIRE(qber.size() == 4);
    CHECK(qber[0] == "time_s,qber_total,qber_x,qber_z");

    const auto summary = read_lines(dir / "epochs.csv");
    REQUIRE(summary.size() == 4);
    CHECK(summary[0] == "epoch,offset,pairs,sifted,qber_estimate");
    CHECK(summary[1].substr(0, 2) == "0,");

    const auto matrix_csv = read_lines(dir / "coincidence_matrix.csv");
    REQUIRE(matrix_csv.size() == 6);
    CHECK(matrix_csv[0] == ",Alice H,Alice V,Alice +,Alice -,Total");
    std::stringstream last(matrix_csv[5]);
    std::string cell;
    std::getline(last, cell, ',');
    CHECK(cell == "Total");

    std::filesystem::remove_all(dir);
}

TEST_CASE("session report requires at least one epoch", "[analysis]") {
    CHECK_THROWS_AS(session_report({}), ConfigError);
}

TEST_CASE("high-error epochs contribute no optimal bits", "[analysis]") {
    EpochStats e;
    e.duration_seconds = 1.0;
    e.sifted_bits = 1'000;
    e.qber_total = 0.2;
    const auto r = session_report({e});
    CHECK(r.optimal_bits == 0);
}
