#include "dpt/adamw.hpp"

#include <cmath>

namespace dpt {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.lr <= 0.0) throw ConfigError("AdamW: lr must be > 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        if (!p.requires_grad()) {
            throw UsageError("AdamW: refusing to hold state for a frozen tensor " +
                             shape_str(p.shape()));
        }
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        auto& vals = p.mutable_values();
        const bool has_grad = p.has_grad();
        const std::vector<double>* g = has_grad ? &p.grad() : nullptr;
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double gi = has_grad ? (*g)[i] : 0.0;
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            vals[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
            // decoupled decay, independent of the adaptive step
            vals[i] -= config_.lr * config_.weight_decay * vals[i];
        }
    }
}

void AdamW::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

std::size_t AdamW::state_entries() const {
    std::size_t n = 0;
    for (const auto& m : m_) n += m.size();
    for (const auto& v : v_) n += v.size();
    return n;
}

}  // namespace dpt
