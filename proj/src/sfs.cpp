// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#include "lor2c/sfs.hpp"

#include <algorithm>
#include <cmath>

#include "lor2c/errors.hpp"

namespace lor2c {

namespace {

// Householder QR of a column-major-free row-major matrix m x n (m >= n is not
// required; R comes out min(m,n) x n). Only R is kept.
std::vector<double> qr_upper(std::vector<double> a, int m, int n) {
    const int steps = std::min(m, n);
    for (int j = 0; j < steps; ++j) {
        double norm = 0.0;
        for (int i = j; i < m; ++i) norm = std::hypot(norm, a[static_cast<std::size_t>(i) * n + j]);
        if (norm == 0.0) continue;
        double pivot = a[static_cast<std::size_t>(j) * n + j];
        const double alpha = pivot >= 0.0 ? -norm : norm;
        // v = x - alpha*e1, applied implicitly
        a[static_cast<std::size_t>(j) * n + j] = pivot - alpha;
        double vnorm2 = 0.0;
        for (int i = j; i < m; ++i) {
            const double v = a[static_cast<std::size_t>(i) * n + j];
            vnorm2 += v * v;
        }
        if (vnorm2 > 0.0) {
            for (int col = j + 1; col < n; ++col) {
                double dot = 0.0;
                for (int i = j; i < m; ++i)
                    dot += a[static_cast<std::size_t>(i) * n + j] * a[static_cast<std::size_t>(i) * n + col];
                const double f = 2.0 * dot / vnorm2;
                for (int i = j; i < m; ++i)
                    a[static_cast<std::size_t>(i) * n + col] -= f * a[static_cast<std::size_t>(i) * n + j];
            }
        }
        a[static_cast<std::size_t>(j) * n + j] = alpha;
        for (int i = j + 1; i < m; ++i) a[static_cast<std::size_t>(i) * n + j] = 0.0;
    }
    // top n x n block (rows below min(m,n) are zero)
    std::vector<double> r(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < std::min(m, n); ++i)
        for (int j = i; j < n; ++j) r[static_cast<std::size_t>(i) * n + j] = a[static_cast<std::size_t>(i) * n + j];
    return r;
}

// Singular values of a square n x n matrix by one-sided Jacobi rotations:
// orthogonalize columns; at convergence the column norms are the singular
// values.
std::vector<double> jacobi_singular_values(std::vector<double> a, int n) {
    constexpr int kMaxSweeps = 60;
    constexpr double kTol = 1e-15;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double cp = a[static_cast<std::size_t>(i) * n + p];
                    const double cq = a[static_cast<std::size_t>(i) * n + q];
                    app += cp * cp;
                    aqq += cq * cq;
                    apq += cp * cq;
                }
                if (std::abs(apq) <= kTol * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < n; ++i) {
                    const double cp = a[static_cast<std::size_t>(i) * n + p];
                    const double cq = a[static_cast<std::size_t>(i) * n + q];
                    a[static_cast<std::size_t>(i) * n + p] = c * cp - s * cq;
                    a[static_cast<std::size_t>(i) * n + q] = s * cp + c * cq;
                }
            }
        }
        if (!rotated) break;
    }
    std::vector<double> sv(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        double norm2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = a[static_cast<std::size_t>(i) * n + j];
            norm2 += v * v;
        }
        sv[static_cast<std::size_t>(j)] = std::sqrt(norm2);
    }
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

void check_finite(std::span<const double> values, const char* what) {
    for (double v : values)
        if (!std::isfinite(v)) throw NumericError(std::string(what) + " contains non-finite values");
}

}  // namespace

std::vector<double> singular_values_of_product(const Tensor& x, const Tensor& y) {
    if (x.ndim() != 2 || y.ndim() != 2 || x.dim(1) != y.dim(0))
        throw DimensionError("singular_values_of_product: incompatible shapes " +
                             shape_str(x.shape()) + " x " + shape_str(y.shape()));
    check_finite(x.data(), "left factor");
    check_finite(y.data(), "right factor");
    const int n = x.dim(0), r = x.dim(1), m = y.dim(1);

    // left factor, zero-padded to at least r rows so R is r x r
    const int rows = std::max(n, r);
    std::vector<double> xa(static_cast<std::size_t>(rows) * r, 0.0);
    std::copy(x.data().begin(), x.data().end(), xa.begin());
    std::vector<double> rx = qr_upper(std::move(xa), rows, r);

    // transpose of the right factor: [m, r]
    const int yrows = std::max(m, r);
    std::vector<double> yt(static_cast<std::size_t>(yrows) * r, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < m; ++j)
            yt[static_cast<std::size_t>(j) * r + i] = y.data()[static_cast<std::size_t>(i) * m + j];
    std::vector<double> ry = qr_upper(std::move(yt), yrows, r);

    // core C = R_X * R_Y^T, r x r
    std::vector<double> core(static_cast<std::size_t>(r) * r, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
            double acc = 0.0;
            for (int k = 0; k < r; ++k)
                acc += rx[static_cast<std::size_t>(i) * r + k] * ry[static_cast<std::size_t>(j) * r + k];
            core[static_cast<std::size_t>(i) * r + j] = acc;
        }
    return jacobi_singular_values(std::move(core), r);
}

std::vector<double> singular_values_lowrank(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw DimensionError("singular_values_lowrank expects 2-d factors");
    const int r = a.dim(0), d = a.dim(1);
    if (b.dim(0) != d || b.dim(1) != r)
        throw DimensionError("singular_values_lowrank: A " + shape_str(a.shape()) +
                             " and B " + shape_str(b.shape()) + " are not conformal factors");
    if (r > d)
        throw ContractError("singular_values_lowrank: rank " + std::to_string(r) +
                            " exceeds width " + std::to_string(d));
    return singular_values_of_product(b, a);  // W = B*A
}

double sfs(const std::vector<double>& lambda, int k) {
    const int n = static_cast<int>(lambda.size());
    if (n == 0) throw ContractError("sfs: empty spectrum");
    if (k < 1 || k > n)
        throw ContractError("sfs: k = " + std::to_string(k) + " outside 1.." + std::to_string(n));
    for (int i = 0; i < n; ++i) {
        if (lambda[static_cast<std::size_t>(i)] < 0.0)
            throw ContractError("sfs: negative singular value at index " + std::to_string(i));
        if (i > 0 && lambda[static_cast<std::size_t>(i)] > lambda[static_cast<std::size_t>(i - 1)])
            throw ContractError("sfs: spectrum not sorted descending at index " + std::to_string(i));
    }
    double top = 0.0, total = 0.0;
    for (int i = 0; i < n; ++i) {
        total += lambda[static_cast<std::size_t>(i)];
        if (i < k) top += lambda[static_cast<std::size_t>(i)];
    }
    if (total == 0.0) return 0.0;  // zero module carries no information
    return std::clamp(1.0 - top / total, 0.0, 1.0);
}

InjectPolicy inject_policy_from_name(const std::string& name) {
    if (name == "lowest_sfs") return InjectPolicy::LowestSfs;
    if (name == "highest_sfs") return InjectPolicy::HighestSfs;
    throw ConfigError("unknown inject policy '" + name + "'");
}

const char* inject_policy_name(InjectPolicy p) {
    return p == InjectPolicy::LowestSfs ? "lowest_sfs" : "highest_sfs";
}

SfsMetricSource metric_source_from_name(const std::string& name) {
    if (name == "weights") return SfsMetricSource::Weights;
    if (name == "features") return SfsMetricSource::Features;
    throw ConfigError("unknown sfs metric source '" + name + "'");
}

const char* metric_source_name(SfsMetricSource s) {
    return s == SfsMetricSource::Weights ? "weights" : "features";
}

namespace {

bool touches_excluded(const SfsModuleEntry& m, const std::set<int>& excluded_layers) {
    for (int t = m.span_start; t < m.span_start + m.span_len; ++t)
        if (excluded_layers.count(t)) return true;
    return false;
}

}  // namespace

std::vector<PairScore> pair_scores(const std::vector<SfsModuleEntry>& modules,
                                   const std::set<int>& excluded_layers) {
    std::vector<PairScore> out;
    for (std::size_t i = 0; i + 1 < modules.size(); ++i) {
        const SfsModuleEntry& l = modules[i];
        const SfsModuleEntry& r = modules[i + 1];
        if (l.kind != AdapterKind::Lor2c || r.kind != AdapterKind::Lor2c) continue;
        if (l.span_start + l.span_len != r.span_start) continue;  // spans must touch
        if (touches_excluded(l, excluded_layers) || touches_excluded(r, excluded_layers)) continue;
        out.push_back({l.module_id, r.module_id, l.sfs + r.sfs});
    }
    return out;
}

std::optional<PairScore> select_merge_pair(const std::vector<PairScore>& scores) {
    if (scores.empty()) return std::nullopt;
    // scores arrive ordered by layer; strict < keeps the earliest on ties
    const PairScore* best = &scores.front();
    for (const PairScore& p : scores)
        if (p.score < best->score) best = &p;
    return *best;
}

std::optional<int> select_inject_target(const SfsReport& report,
                                        const std::set<int>& excluded_layers,
                                        InjectPolicy policy) {
    const SfsModuleEntry* best = nullptr;
    for (const SfsModuleEntry& m : report.modules) {
        if (m.kind != AdapterKind::Lor2c || m.span_len != 1) continue;
        if (touches_excluded(m, excluded_layers)) continue;
        if (!best) {
            best = &m;
            continue;
        }
        const bool better = policy == InjectPolicy::LowestSfs ? m.sfs < best->sfs
                                                              : m.sfs > best->sfs;
        if (better) best = &m;
    }
    if (!best) return std::nullopt;
    return best->module_id;
}

SfsReport build_sfs_report(int epoch, const ModelLayout& layout, const AdapterParams& params,
                           int k, SfsMetricSource source,
                           const std::map<int, Tensor>* span_inputs,
                           const std::set<int>& excluded_layers) {
    SfsReport report;
    report.epoch = epoch;
    for (const AdapterModule& m : layout.modules()) {
        if (m.kind != AdapterKind::Lor2c && m.kind != AdapterKind::SharedLor2c) continue;
        const Lor2cParams& p = params.lor2c(m.id);
        SfsModuleEntry entry;
        entry.module_id = m.id;
        entry.kind = m.kind;
        entry.span_start = m.span_start;
        entry.span_len = m.span_len;
        if (source == SfsMetricSource::Weights) {
            entry.singular_values = singular_values_lowrank(p.a, p.b);
        } else {
            if (!span_inputs || !span_inputs->count(m.id))
                throw ContractError("feature-mode sfs needs captured span inputs for module " +
                                    std::to_string(m.id));
            const Tensor& h = span_inputs->at(m.id);
            Tensor hb = scale(matmul(h, p.b), m.scaling);  // residual-path output = (h*B)*A scaled
            entry.singular_values = singular_values_of_product(hb, p.a);
        }
        const int n = static_cast<int>(entry.singular_values.size());
        entry.sfs = sfs(entry.singular_values, std::clamp(k, 1, n));
        report.modules.push_back(std::move(entry));
    }
    report.pair_scores = pair_scores(report.modules, excluded_layers);
    return report;
}

std::vector<SvTrajectoryPoint> sv_trajectory(
    const std::vector<std::vector<std::vector<double>>>& history, int top_m) {
    if (history.empty()) throw ContractError("sv_trajectory: empty history");
    if (top_m < 1) throw ContractError("sv_trajectory: top_m must be >= 1");
    std::size_t r = 0;
    for (const auto& epoch_row : history)
        for (const auto& spectrum : epoch_row) {
            if (r == 0) r = spectrum.size();
            if (spectrum.size() != r)
                throw ContractError("sv_trajectory: ragged history (spectrum lengths differ)");
        }
    if (r == 0) throw ContractError("sv_trajectory: history has no spectra");

    std::vector<SvTrajectoryPoint> out;
    const int limit = std::min<int>(top_m, static_cast<int>(r));
    for (std::size_t e = 0; e < history.size(); ++e) {
        const auto& epoch_row = history[e];
        if (epoch_row.empty())
            throw ContractError("sv_trajectory: epoch " + std::to_string(e) + " has no modules");
        for (int idx = 0; idx < limit; ++idx) {
            double acc = 0.0;
            for (const auto& spectrum : epoch_row) acc += spectrum[static_cast<std::size_t>(idx)];
            out.push_back({static_cast<int>(e), idx + 1, acc / static_cast<double>(epoch_row.size())});
        }
    }
    return out;
}

}  // namespace lor2c
