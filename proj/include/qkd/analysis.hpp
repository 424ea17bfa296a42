#pragma once

// Derived statistics and figure-data export: QBER decomposition, basis
// visibilities, raw-key bit bias, the CHSH parameter, per-epoch accounting
// and session aggregation.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qkd/core.hpp"
#include "qkd/errors.hpp"
#include "qkd/privacy.hpp"

namespace qkd {

struct QberDecomposition {
    double total = 0.0;
    double x_component = 0.0;
    double z_component = 0.0;
};

// Error cells under the singlet flip are the equal-channel diagonals; both
// components are normalized by the total same-basis count so they add up to
// the total.
inline QberDecomposition qber_decompose(const CoincidenceMatrix& m) {
    const std::uint64_t sifted = m.same_basis_total();
    if (sifted == 0) throw ConfigError("qber_decompose: no same-basis coincidences");
    const std::uint64_t z_err = m.at(Channel::h, Channel::h) + m.at(Channel::v, Channel::v);
    const std::uint64_t x_err =
        m.at(Channel::plus, Channel::plus) + m.at(Channel::minus, Channel::minus);
    QberDecomposition d;
    d.z_component = static_cast<double>(z_err) / static_cast<double>(sifted);
    d.x_component = static_cast<double>(x_err) / static_cast<double>(sifted);
    d.total = static_cast<double>(z_err + x_err) / static_cast<double>(sifted);
    return d;
}

struct VisibilityPair {
    double z = 0.0;
    double x = 0.0;
};

inline VisibilityPair visibilities(const CoincidenceMatrix& m) {
    const auto basis_v = [&](Channel c0, Channel c1) {
        const std::uint64_t corr = m.at(c0, c0) + m.at(c1, c1);
        const std::uint64_t anti = m.at(c0, c1) + m.at(c1, c0);
        if (corr + anti == 0) throw ConfigError("visibilities: empty basis sub-block");
        return static_cast<double>(anti - corr) / static_cast<double>(anti + corr);
    };
    return {basis_v(Channel::h, Channel::v), basis_v(Channel::plus, Channel::minus)};
}

struct AprioriBias {
    double p0 = 0.0;
    double p1 = 0.0;
    double extra_fraction = 0.0;  // additional key reduction, 1 - h2(p0)
};

// Alice's raw key is the reference key, so the bias is over her column
// totals: H and + carry bit 0, V and - carry bit 1.
inline AprioriBias apriori_bias(const CoincidenceMatrix& m) {
    const std::uint64_t n0 = m.alice_total(Channel::h) + m.alice_total(Channel::plus);
    const std::uint64_t n1 = m.alice_total(Channel::v) + m.alice_total(Channel::minus);
    if (n0 + n1 == 0) throw ConfigError("apriori_bias: empty matrix");
    AprioriBias b;
    b.p0 = static_cast<double>(n0) / static_cast<double>(n0 + n1);
    b.p1 = static_cast<double>(n1) / static_cast<double>(n0 + n1);
    b.extra_fraction = 1.0 - binary_entropy(b.p0);
    return b;
}

// E from a 2x2 outcome sub-block.
inline double correlation(std::uint64_t same, std::uint64_t diff) {
    if (same + diff == 0) throw ConfigError("correlation: no counts");
    return (static_cast<double>(same) - static_cast<double>(diff)) /
           static_cast<double>(same + diff);
}

inline double chsh(double e_ab, double e_ab2, double e_a2b, double e_a2b2) {
    for (const double e : {e_ab, e_ab2, e_a2b, e_a2b2})
        if (!(std::abs(e) <= 1.0 + 1e-12)) throw ConfigError("chsh: |E| exceeds 1");
    return std::abs(e_ab - e_ab2 + e_a2b + e_a2b2);
}

// The reconstructed full-night coincidence matrix used by replay analysis
// and as a test fixture. One published cell contradicts both of its margin
// totals by exactly 36,000; the margin-consistent value is used here and the
// margins reproduce the published totals.
inline CoincidenceMatrix reference_coincidence_matrix() {
    CoincidenceMatrix m;
    m.counts = {{
        {39'497, 1'218'454, 393'100, 355'074},
        {1'300'749, 112'793, 682'595, 854'848},
        {680'032, 878'628, 51'217, 1'262'143},
        {584'695, 955'146, 1'374'648, 63'261},
    }};
    return m;
}

struct EpochStats {
    std::uint32_t epoch_id = 0;
    double start_seconds = 0.0;
    double duration_seconds = 0.0;
    std::int64_t clock_offset = 0;
    double clock_drift = 0.0;
    std::uint64_t raw_bits = 0;  // coincident pairs
    std::uint64_t sifted_bits = 0;
    std::uint64_t corrected_bits = 0;
    std::uint64_t secure_bits = 0;
    double qber_estimate = 0.0;  // pre-correction estimate
    double qber_total = 0.0;
    double qber_x = 0.0;
    double qber_z = 0.0;
    double visibility_z = 0.0;
    double visibility_x = 0.0;
    std::uint64_t leaked_bits = 0;
    std::uint64_t parity_messages = 0;
    bool aborted = false;
    CoincidenceMatrix matrix;
    std::array<std::uint64_t, comm_category_count> comm_sent{};
    std::array<std::uint64_t, comm_category_count> comm_received{};

    // Populates the derived fractions from the matrix.
    void derive_from_matrix() {
        if (matrix.same_basis_total() == 0) return;
        const auto q = qber_decompose(matrix);
        qber_total = q.total;
        qber_x = q.x_component;
        qber_z = q.z_component;
        if (matrix.basis_block_total(Basis::z, Basis::z) > 0 &&
            matrix.basis_block_total(Basis::x, Basis::x) > 0) {
            const auto v = visibilities(matrix);
            visibility_z = v.z;
            visibility_x = v.x;
        }
    }
};

struct SessionReport {
    std::size_t epoch_count = 0;
    double duration_seconds = 0.0;
    std::uint64_t raw_bits = 0;
    std::uint64_t sifted_bits = 0;
    std::uint64_t corrected_bits = 0;
    std::uint64_t secure_bits = 0;
    std::uint64_t optimal_bits = 0;  // epoch-wise Shannon-limit final key
    std::uint64_t leaked_bits = 0;
    double qber_total = 0.0;
    double qber_x = 0.0;
    double qber_z = 0.0;
    double visibility_z = 0.0;
    double visibility_x = 0.0;
    AprioriBias bias;
    CoincidenceMatrix matrix;
    std::array<std::uint64_t, comm_category_count> comm_sent{};
    std::array<std::uint64_t, comm_category_count> comm_received{};
    std::vector<EpochStats> epochs;
};

namespace detail {

inline void write_csv_line(std::ofstream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << cells[i];
    }
    out << '\n';
}

inline std::string csv_num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace detail

inline void write_qber_timeseries(const std::filesystem::path& path,
                                  const std::vector<EpochStats>& epochs) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "time_s,qber_total,qber_x,qber_z\n";
    for (const auto& e : epochs)
        detail::write_csv_line(out, {detail::csv_num(e.start_seconds), detail::csv_num(e.qber_total),
                                     detail::csv_num(e.qber_x), detail::csv_num(e.qber_z)});
}

inline void write_key_rates(const std::filesystem::path& path,
                            const std::vector<EpochStats>& epochs) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "time_s,raw_bps,sifted_bps,optimal_bps,secure_bps\n";
    for (const auto& e : epochs) {
        const double dt = e.duration_seconds > 0 ? e.duration_seconds : 1.0;
        const std::uint64_t optimal =
            e.qber_total < qber_cutoff ? optimal_rate(e.sifted_bits, e.qber_total) : 0;
        detail::write_csv_line(
            out, {detail::csv_num(e.start_seconds), detail::csv_num(static_cast<double>(e.raw_bits) / dt),
                  detail::csv_num(static_cast<double>(e.sifted_bits) / dt),
                  detail::csv_num(static_cast<double>(optimal) / dt),
                  detail::csv_num(static_cast<double>(e.secure_bits) / dt)});
    }
}

inline void write_visibilities(const std::filesystem::path& path,
                               const std::vector<EpochStats>& epochs) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "time_s,visibility_z,visibility_x\n";
    for (const auto& e : epochs)
        detail::write_csv_line(out, {detail::csv_num(e.start_seconds),
                                     detail::csv_num(e.visibility_z), detail::csv_num(e.visibility_x)});
}

// 4x4 layout with row/column margins.
inline void write_coincidence_matrix(const std::filesystem::path& path,
                                     const CoincidenceMatrix& m) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << ",Alice H,Alice V,Alice +,Alice -,Total\n";
    static constexpr const char* rows[4] = {"Bob H", "Bob V", "Bob +", "Bob -"};
    for (int b = 0; b < 4; ++b) {
        out << rows[b];
        for (int a = 0; a < 4; ++a)
            out << ',' << m.counts[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];
        out << ',' << m.bob_total(static_cast<Channel>(b)) << '\n';
    }
    out << "Total";
    for (int a = 0; a < 4; ++a) out << ',' << m.alice_total(static_cast<Channel>(a));
    out << ',' << m.total() << '\n';
}

inline void write_epoch_summary(const std::filesystem::path& path,
                                const std::vector<EpochStats>& epochs) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "epoch,offset,pairs,sifted,qber_estimate\n";
    for (const auto& e : epochs) {
        out << e.epoch_id << ',' << e.clock_offset << ',' << e.raw_bits << ',' << e.sifted_bits
            << ',' << detail::csv_num(e.qber_estimate) << '\n';
    }
}

// Aggregates epoch statistics; fraction averages are weighted by the counts
// they are fractions of, so report totals reproduce integer accounting
// exactly. When output_dir is given the figure CSVs are written there.
inline SessionReport session_report(const std::vector<EpochStats>& epochs,
                                    const std::filesystem::path& output_dir = {}) {
    if (epochs.empty()) throw ConfigError("session_report: no epochs");
    SessionReport r;
    r.epoch_count = epochs.size();
    r.epochs = epochs;
    for (const auto& e : epochs) {
        r.duration_seconds += e.duration_seconds;
        r.raw_bits += e.raw_bits;
        r.sifted_bits += e.sifted_bits;
        r.corrected_bits += e.corrected_bits;
        r.secure_bits += e.secure_bits;
        r.leaked_bits += e.leaked_bits;
        if (e.sifted_bits > 0 && e.qber_total < qber_cutoff)
            r.optimal_bits += optimal_rate(e.sifted_bits, e.qber_total);
        r.matrix += e.matrix;
        for (std::size_t c = 0; c < comm_category_count; ++c) {
            r.comm_sent[c] += e.comm_sent[c];
            r.comm_received[c] += e.comm_received[c];
        }
    }
    if (r.matrix.same_basis_total() > 0) {
        const auto q = qber_decompose(r.matrix);
        r.qber_total = q.total;
        r.qber_x = q.x_component;
        r.qber_z = q.z_component;
        const auto v = visibilities(r.matrix);
        r.visibility_z = v.z;
        r.visibility_x = v.x;
    }
    if (r.matrix.total() > 0) r.bias = apriori_bias(r.matrix);
    if (!output_dir.empty()) {
        std::filesystem::create_directories(output_dir);
        write_qber_timeseries(output_dir / "qber_timeseries.csv", epochs);
        write_key_rates(output_dir / "key_rates.csv", epochs);
        write_visibilities(output_dir / "visibilities.csv", epochs);
        write_coincidence_matrix(output_dir / "coincidence_matrix.csv", r.matrix);
        write_epoch_summary(output_dir / "epochs.csv", epochs);
    }
    return r;
}

}  // namespace qkd
