#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "dpt/tensor.hpp"
#include "dpt/trainer.hpp"

namespace dpt {

// Per-step snapshot of the rank probe: strict sign counts of the trainable
// diagonal and the numerical rank of the materialized prompt matrix.
struct ProbeRecord {
    long step = 0;
    int pos_count = 0;
    int neg_count = 0;
    int zero_count = 0;
    int numerical_rank = 0;
};

struct SignCounts {
    int pos = 0;
    int neg = 0;
    int zero = 0;
};

// strict sign counts over a vector; exact zeros counted separately
SignCounts count_sign_diagonal(const Tensor& sigma_diag);

// Singular values in descending order via one-sided Jacobi (Hestenes).
// Built for the small matrices this lab deals in; throws NumericalError if
// the sweep cap is exhausted before convergence.
std::vector<double> singular_values(const Tensor& m, int max_sweeps = 100);

// count of singular values above tol_factor * max(rows, cols) * sigma_max
int numerical_rank(const Tensor& m, double tol_factor = 1e-12);

struct ProbeRunResult {
    RunLog log;
    std::vector<ProbeRecord> records;
};

// Trains a rank-probe parameterization while snapshotting diagonal sign
// counts and the numerical rank of the materialized prompt at step 0, every
// n optimizer steps, and at the final step.
ProbeRunResult probe_run(Backbone& bb, PromptParameterization& param, const Dataset& train_set,
                         const Dataset& dev_set, const TrainConfig& config,
                         long every_n_steps = 50);

// CSV: '#'-prefixed config echo then `step,pos,neg,zero,rank` rows
void write_probe_csv(std::ostream& os, const std::vector<ProbeRecord>& records,
                     const std::vector<std::pair<std::string, std::string>>& config_echo);

}  // namespace dpt
