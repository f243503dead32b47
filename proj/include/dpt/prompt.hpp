#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dpt/tensor.hpp"

namespace dpt {

enum class PromptKind { vanilla, decomposed, residual, rank_probe };

const char* prompt_kind_name(PromptKind kind);
PromptKind prompt_kind_from_name(const std::string& name);  // throws ConfigError

struct PromptInit {
    PromptKind kind = PromptKind::vanilla;
    int e = 32;
    int c = 16;
    int b = 4;    // decomposed bottleneck
    int h = 32;   // residual MLP bottleneck
    std::uint64_t seed = 0;
    // Gaussian scale multiplier for A and B; the effective stddev is
    // (1/b)^(1/4) * sigma_t so the product's entry variance stays near
    // sigma_t^2 regardless of b.
    double sigma_t = 1.0;
    // when set, vanilla and residual prompts copy-init from distinct rows of
    // this [V,e] table; otherwise they fall back to unit Gaussian entries
    const Tensor* vocab_embedding = nullptr;
};

// One soft-prompt parameterization: owns its trainable tensors and knows how
// to materialize the e x c prompt matrix as a differentiable graph over them.
class PromptParameterization {
public:
    virtual ~PromptParameterization() = default;

    virtual PromptKind kind() const = 0;
    virtual Tensor materialize() const = 0;
    virtual std::vector<std::pair<std::string, Tensor>> named_trainable() const = 0;

    std::vector<Tensor> trainable() const;
    std::size_t trainable_count() const;  // enumeration over the live tensors

    int e() const { return e_; }
    int c() const { return c_; }

protected:
    PromptParameterization(int e, int c) : e_(e), c_(c) {}
    int e_;
    int c_;
};

class VanillaPrompt final : public PromptParameterization {
public:
    VanillaPrompt(int e, int c, Tensor p);
    PromptKind kind() const override { return PromptKind::vanilla; }
    Tensor materialize() const override { return p_; }
    std::vector<std::pair<std::string, Tensor>> named_trainable() const override;
    const Tensor& p() const { return p_; }

private:
    Tensor p_;  // [e,c]
};

class DecomposedPrompt final : public PromptParameterization {
public:
    DecomposedPrompt(int e, int c, int b, Tensor a, Tensor bmat);
    PromptKind kind() const override { return PromptKind::decomposed; }
    Tensor materialize() const override;  // A * B
    std::vector<std::pair<std::string, Tensor>> named_trainable() const override;
    int bottleneck() const { return b_; }
    const Tensor& a() const { return a_; }
    const Tensor& b() const { return b_mat_; }

private:
    int b_;
    Tensor a_;      // [e,b]
    Tensor b_mat_;  // [b,c]
};

class ResidualPrompt final : public PromptParameterization {
public:
    ResidualPrompt(int e, int c, int h, Tensor p, Tensor down_w, Tensor down_b, Tensor up_w,
                   Tensor up_b, Tensor ln_gain, Tensor ln_bias);
    PromptKind kind() const override { return PromptKind::residual; }
    // per prompt token j: layer_norm(up(relu(down(P_j)))) + P_j
    Tensor materialize() const override;
    std::vector<std::pair<std::string, Tensor>> named_trainable() const override;
    int bottleneck() const { return h_; }

private:
    int h_;
    Tensor p_;        // [e,c]
    Tensor down_w_;   // [h,e]
    Tensor down_b_;   // [h]
    Tensor up_w_;     // [e,h]
    Tensor up_b_;     // [e]
    Tensor ln_gain_;  // [e]
    Tensor ln_bias_;  // [e]
};

class RankProbePrompt final : public PromptParameterization {
public:
    RankProbePrompt(int e, int c, Tensor u, Tensor sigma_diag, Tensor v);
    PromptKind kind() const override { return PromptKind::rank_probe; }
    // U * ReLU(diag-embed(sigma)) * V; off-diagonal entries of the embedded
    // Sigma are structurally zero and carry no parameters
    Tensor materialize() const override;
    std::vector<std::pair<std::string, Tensor>> named_trainable() const override;
    const Tensor& sigma_diag() const { return sigma_diag_; }
    const Tensor& u() const { return u_; }
    const Tensor& v() const { return v_; }

private:
    Tensor u_;           // [e,e]
    Tensor sigma_diag_;  // [c]
    Tensor v_;           // [c,c]
};

std::unique_ptr<PromptParameterization> make_prompt(const PromptInit& init);

// closed-form trainable-entry count; b_or_h is the bottleneck for decomposed
// and the MLP width for residual, ignored otherwise
std::size_t trainable_param_count(PromptKind kind, int e, int c, int b_or_h);

// canonical file name for exported prompts: kind, dims, and seed
std::string product_filename(PromptKind kind, int e, int c, int b, std::uint64_t seed);

// writes the materialized A*B in the tensor dump format (name "P_emb")
void export_product(const DecomposedPrompt& param, const std::filesystem::path& path);

// reads a dumped e x c prompt back as a vanilla parameterization
std::unique_ptr<VanillaPrompt> load_vanilla_prompt(const std::filesystem::path& path);

}  // namespace dpt
