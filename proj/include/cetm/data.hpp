#pragma once

// Datasets: the synthetic two-event benchmark, artificial right-censoring,
// CSV ingestion and deterministic splitting.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cetm/mathstats.hpp"
#include "cetm/net.hpp"

namespace cetm {

inline constexpr double kNever = std::numeric_limits<double>::infinity();

struct Dataset {
    Matrix x;  // [N × d]
    Matrix t;  // [N × M] observed times, > 0
    Matrix s;  // [N × M] 1 = event observed
    std::optional<Matrix> c_true;   // ground-truth eventual occurrence
    std::optional<Matrix> t_event;  // uncensored event times, kNever when c = 0
    std::vector<std::string> events;

    Eigen::Index size() const { return x.rows(); }
    Eigen::Index features() const { return x.cols(); }
    Eigen::Index num_events() const { return t.cols(); }

    Dataset rows(const std::vector<Eigen::Index>& idx) const {
        Dataset out;
        out.x = x(idx, Eigen::all);
        out.t = t(idx, Eigen::all);
        out.s = s(idx, Eigen::all);
        if (c_true) out.c_true = (*c_true)(idx, Eigen::all);
        if (t_event) out.t_event = (*t_event)(idx, Eigen::all);
        out.events = events;
        return out;
    }

    bool operator==(const Dataset& o) const {
        auto same = [](const Matrix& a, const Matrix& b) {
            return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
        };
        auto same_opt = [&](const std::optional<Matrix>& a, const std::optional<Matrix>& b) {
            return a.has_value() == b.has_value() && (!a || same(*a, *b));
        };
        return same(x, o.x) && same(t, o.t) && same(s, o.s) && same_opt(c_true, o.c_true) &&
               same_opt(t_event, o.t_event) && events == o.events;
    }

    // Throws std::invalid_argument naming the first violated invariant.
    void validate() const {
        const Eigen::Index n = x.rows();
        const Eigen::Index m = t.cols();
        if (t.rows() != n || s.rows() != n || s.cols() != m || static_cast<Eigen::Index>(events.size()) != m) {
            throw std::invalid_argument("dataset: inconsistent shapes");
        }
        if (c_true && (c_true->rows() != n || c_true->cols() != m)) throw std::invalid_argument("dataset: c_true shape");
        if (t_event && (t_event->rows() != n || t_event->cols() != m)) throw std::invalid_argument("dataset: t_event shape");
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                const std::string where = " at row " + std::to_string(i) + ", event " + events[j];
                if (!(t(i, j) > 0.0) || !std::isfinite(t(i, j))) throw std::invalid_argument("dataset: non-positive time" + where);
                if (s(i, j) != 0.0 && s(i, j) != 1.0) throw std::invalid_argument("dataset: status not binary" + where);
                if (c_true) {
                    const double c = (*c_true)(i, j);
                    if (c != 0.0 && c != 1.0) throw std::invalid_argument("dataset: occurrence not binary" + where);
                    if (s(i, j) == 1.0 && c != 1.0) throw std::invalid_argument("dataset: observed event without occurrence" + where);
                }
                if (t_event && s(i, j) == 1.0 && (*t_event)(i, j) != t(i, j)) {
                    throw std::invalid_argument("dataset: observed time differs from true event time" + where);
                }
            }
        }
    }
};

// Knobs of the synthetic benchmark. Event j ∈ {1, 2} occurs iff feature pair
// (2j-1, 2j) falls inside a centred disk of Gaussian mass ½, with labels
// flipped with probability `label_noise`. Both events share the time law
// log T = a·x5 + b + noise_t·ε.
struct SyntheticParams {
    double label_noise = 0.1;
    double radius = 1.1774100225154747;  // √(2 ln 2)
    double a = 0.5;
    double b = 2.0;
    double noise_t = 0.3;
};

// Ground truth only: every occurring event is observed (s = 1) and samples
// without occurrence are censored at the largest event time of their event,
// i.e. the state of a study with unlimited follow-up.
inline Dataset generate_synthetic(Eigen::Index n, const SyntheticParams& params, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_synthetic: n must be at least 1");
    if (!(params.label_noise >= 0.0 && params.label_noise <= 1.0)) {
        throw std::invalid_argument("generate_synthetic: label noise must lie in [0, 1]");
    }
    if (!(params.radius > 0.0) || !(params.noise_t >= 0.0)) {
        throw std::invalid_argument("generate_synthetic: radius must be positive and noise_t non-negative");
    }
    constexpr Eigen::Index d = 5, m = 2;
    Rng rng(seed);
    Dataset ds;
    ds.x.resize(n, d);
    ds.t.resize(n, m);
    ds.s.resize(n, m);
    ds.c_true = Matrix(n, m);
    ds.t_event = Matrix(n, m);
    ds.events = {"T1", "T2"};
    const double r2 = params.radius * params.radius;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index k = 0; k < d; ++k) ds.x(i, k) = rng.normal();
        for (Eigen::Index j = 0; j < m; ++j) {
            const double u = ds.x(i, 2 * j), v = ds.x(i, 2 * j + 1);
            bool occurs = u * u + v * v < r2;
            if (rng.uniform() < params.label_noise) occurs = !occurs;
            const double log_t = params.a * ds.x(i, 4) + params.b + params.noise_t * rng.normal();
            (*ds.c_true)(i, j) = occurs ? 1.0 : 0.0;
            (*ds.t_event)(i, j) = occurs ? std::exp(log_t) : kNever;
        }
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        double horizon = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            if ((*ds.c_true)(i, j) == 1.0) horizon = std::max(horizon, (*ds.t_event)(i, j));
        if (horizon == 0.0) horizon = std::exp(params.b);
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool occurs = (*ds.c_true)(i, j) == 1.0;
            ds.t(i, j) = occurs ? (*ds.t_event)(i, j) : horizon;
            ds.s(i, j) = occurs ? 1.0 : 0.0;
        }
    }
    return ds;
}

enum class CensoringScheme {
    full_range,    // g ~ U(0, max event time of the event)
    twice_median,  // g ~ U(0, 2 · median event time of the event)
};

inline double censoring_horizon(const Dataset& ds, Eigen::Index j, CensoringScheme scheme) {
    std::vector<double> times;
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        const double te = (*ds.t_event)(i, j);
        if (std::isfinite(te)) times.push_back(te);
    }
    if (times.empty()) {
        throw std::invalid_argument("apply_censoring: event " + ds.events[j] + " has no finite event times");
    }
    if (scheme == CensoringScheme::full_range) return *std::max_element(times.begin(), times.end());
    const std::size_t mid = times.size() / 2;
    std::nth_element(times.begin(), times.begin() + mid, times.end());
    double median = times[mid];
    if (times.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(times.begin(), times.begin() + mid));
    }
    return 2.0 * median;
}

// Draws a censoring time per sample and event, independent of x and c, and
// replaces (t, s) by (min(T, g), 1[T ≤ g]). Ground truth is retained.
inline Dataset apply_censoring(const Dataset& ds, CensoringScheme scheme, Rng& rng) {
    if (!ds.t_event) throw std::invalid_argument("apply_censoring: dataset carries no true event times");
    Dataset out = ds;
    if (!out.c_true) {
        out.c_true = Matrix(ds.size(), ds.num_events());
        for (Eigen::Index j = 0; j < ds.num_events(); ++j)
            for (Eigen::Index i = 0; i < ds.size(); ++i)
                (*out.c_true)(i, j) = std::isfinite((*ds.t_event)(i, j)) ? 1.0 : 0.0;
    }
    std::vector<double> horizon(static_cast<std::size_t>(ds.num_events()));
    for (Eigen::Index j = 0; j < ds.num_events(); ++j) horizon[j] = censoring_horizon(ds, j, scheme);
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index j = 0; j < ds.num_events(); ++j) {
            const double g = rng.uniform() * horizon[j];
            const double te = (*ds.t_event)(i, j);
            const bool observed = std::isfinite(te) && te <= g;
            out.t(i, j) = observed ? te : g;
            out.s(i, j) = observed ? 1.0 : 0.0;
        }
    }
    return out;
}

struct Splits {
    Dataset train, val, test;
};

inline Splits split(const Dataset& ds, std::uint64_t seed, double f_train = 0.6, double f_val = 0.2,
                    double f_test = 0.2) {
    if (f_train < 0.0 || f_val < 0.0 || f_test < 0.0 || std::abs(f_train + f_val + f_test - 1.0) > 1e-9) {
        throw std::invalid_argument("split: fractions must be non-negative and sum to 1");
    }
    const Eigen::Index n = ds.size();
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    Rng rng(seed);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    const auto n_train = static_cast<std::size_t>(std::llround(f_train * static_cast<double>(n)));
    const auto n_val = std::min(perm.size() - n_train, static_cast<std::size_t>(std::llround(f_val * static_cast<double>(n))));
    auto slice = [&](std::size_t lo, std::size_t hi) {
        return ds.rows(std::vector<Eigen::Index>(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                                 perm.begin() + static_cast<std::ptrdiff_t>(hi)));
    };
    return {slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, perm.size())};
}

// ---- CSV ---------------------------------------------------------------
//
// Header: x1..xd, then per event <name>: t_<name>, s_<name>[, c_<name>]
// [, ttrue_<name>]. ttrue carries the uncensored event time ("inf" when the
// event never occurs). Values use shortest round-trip decimal rendering.

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
        out.push_back(cell);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline double parse_cell(std::string_view cell, std::size_t row, std::string_view column) {
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
        throw std::invalid_argument("csv row " + std::to_string(row) + ", column " + std::string(column) +
                                    ": cannot parse '" + std::string(cell) + "'");
    }
    return v;
}

struct EventColumns {
    std::string name;
    std::size_t t = 0, s = 0;
    std::optional<std::size_t> c, ttrue;
};

}  // namespace detail

inline void save_csv(const Dataset& ds, std::ostream& os) {
    for (Eigen::Index k = 0; k < ds.features(); ++k) os << (k ? "," : "") << 'x' << (k + 1);
    for (const auto& name : ds.events) {
        os << ",t_" << name << ",s_" << name;
        if (ds.c_true) os << ",c_" << name;
        if (ds.t_event) os << ",ttrue_" << name;
    }
    os << '\n';
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index k = 0; k < ds.features(); ++k) os << (k ? "," : "") << detail::format_double(ds.x(i, k));
        for (Eigen::Index j = 0; j < ds.num_events(); ++j) {
            os << ',' << detail::format_double(ds.t(i, j)) << ',' << static_cast<int>(ds.s(i, j));
            if (ds.c_true) os << ',' << static_cast<int>((*ds.c_true)(i, j));
            if (ds.t_event) os << ',' << detail::format_double((*ds.t_event)(i, j));
        }
        os << '\n';
    }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    save_csv(ds, os);
    if (!os) throw std::runtime_error("write failed for " + path);
}

inline Dataset load_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("csv: missing header row");
    const auto header = detail::split_csv_line(line);
    std::vector<std::string> cols(header.begin(), header.end());

    std::size_t d = 0;
    while (d < cols.size() && cols[d] == "x" + std::to_string(d + 1)) ++d;
    if (d == 0) throw std::invalid_argument("csv: header must start with feature columns x1..xd");

    std::vector<detail::EventColumns> events;
    for (std::size_t k = d; k < cols.size(); ++k) {
        const std::string& col = cols[k];
        auto event_of = [&](std::string_view prefix) -> std::optional<std::string> {
            if (col.rfind(prefix, 0) == 0 && col.size() > prefix.size()) return col.substr(prefix.size());
            return std::nullopt;
        };
        if (auto name = event_of("t_")) {
            events.push_back({*name, k, 0, std::nullopt, std::nullopt});
            if (k + 1 >= cols.size() || cols[k + 1] != "s_" + *name) {
                throw std::invalid_argument("csv: column t_" + *name + " must be followed by s_" + *name);
            }
            events.back().s = ++k;
        } else if (auto c_name = event_of("c_"); c_name && !events.empty() && *c_name == events.back().name) {
            events.back().c = k;
        } else if (auto tt_name = event_of("ttrue_"); tt_name && !events.empty() && *tt_name == events.back().name) {
            events.back().ttrue = k;
        } else {
            throw std::invalid_argument("csv: unexpected column '" + col + "'");
        }
    }
    if (events.empty()) throw std::invalid_argument("csv: no event columns (t_<name>, s_<name>)");
    const bool has_c = events.front().c.has_value();
    const bool has_tt = events.front().ttrue.has_value();
    for (const auto& e : events) {
        if (e.c.has_value() != has_c || e.ttrue.has_value() != has_tt) {
            throw std::invalid_argument("csv: optional columns must be present for every event or none");
        }
    }

    std::vector<std::vector<double>> rows;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != cols.size()) {
            throw std::invalid_argument("csv row " + std::to_string(row) + ": expected " + std::to_string(cols.size()) +
                                        " columns, found " + std::to_string(cells.size()));
        }
        std::vector<double> values(cols.size());
        for (std::size_t k = 0; k < cols.size(); ++k) values[k] = detail::parse_cell(cells[k], row, cols[k]);
        for (const auto& e : events) {
            const double t = values[e.t];
            if (!(t > 0.0) || !std::isfinite(t)) {
                throw std::invalid_argument("csv row " + std::to_string(row) + ", column " + cols[e.t] +
                                            ": time must be finite and positive");
            }
            for (auto idx : {std::optional<std::size_t>(e.s), e.c}) {
                if (idx && values[*idx] != 0.0 && values[*idx] != 1.0) {
                    throw std::invalid_argument("csv row " + std::to_string(row) + ", column " + cols[*idx] +
                                                ": value must be 0 or 1");
                }
            }
        }
        rows.push_back(std::move(values));
    }

    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto m = static_cast<Eigen::Index>(events.size());
    Dataset ds;
    ds.x.resize(n, static_cast<Eigen::Index>(d));
    ds.t.resize(n, m);
    ds.s.resize(n, m);
    if (has_c) ds.c_true = Matrix(n, m);
    if (has_tt) ds.t_event = Matrix(n, m);
    for (const auto& e : events) ds.events.push_back(e.name);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& v = rows[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < d; ++k) ds.x(i, static_cast<Eigen::Index>(k)) = v[k];
        for (Eigen::Index j = 0; j < m; ++j) {
            const auto& e = events[static_cast<std::size_t>(j)];
            ds.t(i, j) = v[e.t];
            ds.s(i, j) = v[e.s];
            if (has_c) (*ds.c_true)(i, j) = v[*e.c];
            if (has_tt) (*ds.t_event)(i, j) = v[*e.ttrue];
        }
    }
    ds.validate();
    return ds;
}

inline Dataset load_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return load_csv(is);
}

}  // namespace cetm
