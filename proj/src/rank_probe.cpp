#include "dpt/rank_probe.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace dpt {

SignCounts count_sign_diagonal(const Tensor& sigma_diag) {
    SignCounts c;
    for (double v : sigma_diag.values()) {
        if (v > 0.0) {
            ++c.pos;
        } else if (v < 0.0) {
            ++c.neg;
        } else {
            ++c.zero;
        }
    }
    return c;
}

std::vector<double> singular_values(const Tensor& m, int max_sweeps) {
    if (m.ndim() != 2) {
        throw DimensionError("singular_values: expected 2-D tensor, got " + shape_str(m.shape()));
    }
    const int r = m.dim(0), s = m.dim(1);
    // work on the tall orientation; singular values are transpose-invariant
    const bool flipped = r < s;
    const int nrows = flipped ? s : r;
    const int ncols = flipped ? r : s;
    if (ncols == 0) return {};

    // column-major working copy
    std::vector<std::vector<double>> col(static_cast<std::size_t>(ncols),
                                         std::vector<double>(static_cast<std::size_t>(nrows)));
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < s; ++j) {
            const double v = m.values()[static_cast<std::size_t>(i) * s + j];
            if (flipped) {
                col[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v;
            } else {
                col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = v;
            }
        }
    }

    const double tol = 1e-15;
    double fro2 = 0.0;
    for (const auto& w : col)
        for (double v : w) fro2 += v * v;
    // columns this small are numerically zero; rotating them only chases
    // rounding noise and stalls convergence on rank-deficient inputs
    const double col_floor = 1e-30 * fro2;
    bool converged = false;
    for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (int p = 0; p < ncols - 1; ++p) {
            for (int q = p + 1; q < ncols; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                const auto& wp = col[static_cast<std::size_t>(p)];
                const auto& wq = col[static_cast<std::size_t>(q)];
                for (int i = 0; i < nrows; ++i) {
                    app += wp[static_cast<std::size_t>(i)] * wp[static_cast<std::size_t>(i)];
                    aqq += wq[static_cast<std::size_t>(i)] * wq[static_cast<std::size_t>(i)];
                    apq += wp[static_cast<std::size_t>(i)] * wq[static_cast<std::size_t>(i)];
                }
                if (app <= col_floor || aqq <= col_floor) continue;
                if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
                converged = false;
                const double zeta = (aqq - app) / (2.0 * apq);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                auto& wpm = col[static_cast<std::size_t>(p)];
                auto& wqm = col[static_cast<std::size_t>(q)];
                for (int i = 0; i < nrows; ++i) {
                    const double vp = wpm[static_cast<std::size_t>(i)];
                    const double vq = wqm[static_cast<std::size_t>(i)];
                    wpm[static_cast<std::size_t>(i)] = cs * vp - sn * vq;
                    wqm[static_cast<std::size_t>(i)] = sn * vp + cs * vq;
                }
            }
        }
    }
    if (!converged) {
        throw NumericalError("singular_values: Jacobi sweeps did not converge after " +
                             std::to_string(max_sweeps) + " sweeps on " + shape_str(m.shape()));
    }

    std::vector<double> sv(static_cast<std::size_t>(ncols));
    for (int j = 0; j < ncols; ++j) {
        double norm2 = 0.0;
        for (int i = 0; i < nrows; ++i) {
            const double v = col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
            norm2 += v * v;
        }
        sv[static_cast<std::size_t>(j)] = std::sqrt(norm2);
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

int numerical_rank(const Tensor& m, double tol_factor) {
    if (m.numel() == 0) return 0;
    const std::vector<double> sv = singular_values(m);
    if (sv.empty() || sv[0] == 0.0) return 0;
    const double threshold =
        tol_factor * static_cast<double>(std::max(m.dim(0), m.dim(1))) * sv[0];
    int rank = 0;
    for (double s : sv) {
        if (s > threshold) ++rank;
    }
    return rank;
}

ProbeRunResult probe_run(Backbone& bb, PromptParameterization& param, const Dataset& train_set,
                         const Dataset& dev_set, const TrainConfig& config, long every_n_steps) {
    auto* probe = dynamic_cast<RankProbePrompt*>(&param);
    if (probe == nullptr) {
        throw UsageError("probe_run: parameterization is not a rank probe (got " +
                         std::string(prompt_kind_name(param.kind())) + ")");
    }
    if (every_n_steps < 1) throw UsageError("probe_run: cadence must be >= 1");
    if (config.method != TrainMethod::rank_probe) {
        throw UsageError("probe_run: config.method must be rank-probe");
    }

    std::vector<ProbeRecord> records;
    auto snapshot = [&](long step) {
        Tape& tape = Tape::active();
        const std::size_t mark = tape.size();
        const SignCounts sc = count_sign_diagonal(probe->sigma_diag());
        const Tensor m = probe->materialize().detach();
        tape.truncate(mark);
        records.push_back(ProbeRecord{step, sc.pos, sc.neg, sc.zero, numerical_rank(m)});
    };

    RunLog log = train(bb, &param, train_set, dev_set, config, [&](long step) {
        if (step % every_n_steps == 0) snapshot(step);
    });
    const long final_step = log.steps.empty() ? 0 : log.steps.back().step;
    if (records.empty() || records.back().step != final_step) snapshot(final_step);
    return ProbeRunResult{std::move(log), std::move(records)};
}

void write_probe_csv(std::ostream& os, const std::vector<ProbeRecord>& records,
                     const std::vector<std::pair<std::string, std::string>>& config_echo) {
    for (const auto& [key, value] : config_echo) os << "# " << key << " = " << value << "\n";
    os << "step,pos,neg,zero,rank\n";
    for (const ProbeRecord& r : records) {
        os << r.step << ',' << r.pos_count << ',' << r.neg_count << ',' << r.zero_count << ','
           << r.numerical_rank << "\n";
    }
}

}  // namespace dpt
