#pragma once

#include <cstdint>
#include <vector>

#include "dpt/tensor.hpp"

namespace dpt {

struct AdamWConfig {
    double lr = 0.3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay: the decay p -= lr*wd*p is applied
// separately from the bias-corrected adaptive step. Moment state exists only
// for the parameters handed to the constructor; frozen tensors never get any.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig config);

    // one update from the accumulated .grad buffers; missing grads act as zero
    void step();

    void zero_grad();

    void set_lr(double lr) { config_.lr = lr; }

    long step_count() const { return step_count_; }
    const AdamWConfig& config() const { return config_; }
    std::size_t state_entries() const;  // total moment entries held
    const std::vector<Tensor>& params() const { return params_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig config_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long step_count_ = 0;
};

}  // namespace dpt
