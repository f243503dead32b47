#include "dpt/prompt.hpp"

#include <cmath>
#include <fstream>

#include "dpt/rng.hpp"

namespace dpt {

const char* prompt_kind_name(PromptKind kind) {
    switch (kind) {
        case PromptKind::vanilla: return "vanilla";
        case PromptKind::decomposed: return "dpt";
        case PromptKind::residual: return "residual";
        case PromptKind::rank_probe: return "rank-probe";
    }
    return "?";
}

PromptKind prompt_kind_from_name(const std::string& name) {
    if (name == "vanilla") return PromptKind::vanilla;
    if (name == "dpt" || name == "decomposed") return PromptKind::decomposed;
    if (name == "residual") return PromptKind::residual;
    if (name == "rank-probe") return PromptKind::rank_probe;
    throw ConfigError("unknown prompt kind '" + name +
                      "' (expected vanilla|dpt|residual|rank-probe)");
}

std::vector<Tensor> PromptParameterization::trainable() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_trainable()) out.push_back(t);
    return out;
}

std::size_t PromptParameterization::trainable_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : named_trainable()) n += t.numel();
    return n;
}

// ---------------------------------------------------------------------------
// Vanilla
// ---------------------------------------------------------------------------

VanillaPrompt::VanillaPrompt(int e, int c, Tensor p) : PromptParameterization(e, c), p_(std::move(p)) {
    if (p_.ndim() != 2 || p_.dim(0) != e || p_.dim(1) != c) {
        throw ConfigError("VanillaPrompt: tensor " + shape_str(p_.shape()) + " is not [" +
                          std::to_string(e) + "x" + std::to_string(c) + "]");
    }
    p_.set_requires_grad(true);
}

std::vector<std::pair<std::string, Tensor>> VanillaPrompt::named_trainable() const {
    return {{"P", p_}};
}

// ---------------------------------------------------------------------------
// Decomposed
// ---------------------------------------------------------------------------

DecomposedPrompt::DecomposedPrompt(int e, int c, int b, Tensor a, Tensor bmat)
    : PromptParameterization(e, c), b_(b), a_(std::move(a)), b_mat_(std::move(bmat)) {
    if (b_ < 1) throw ConfigError("DecomposedPrompt: bottleneck must be >= 1");
    if (a_.ndim() != 2 || a_.dim(0) != e || a_.dim(1) != b_ || b_mat_.ndim() != 2 ||
        b_mat_.dim(0) != b_ || b_mat_.dim(1) != c) {
        throw ConfigError("DecomposedPrompt: factor shapes " + shape_str(a_.shape()) + ", " +
                          shape_str(b_mat_.shape()) + " do not match e=" + std::to_string(e) +
                          " b=" + std::to_string(b_) + " c=" + std::to_string(c));
    }
    a_.set_requires_grad(true);
    b_mat_.set_requires_grad(true);
}

Tensor DecomposedPrompt::materialize() const { return matmul(a_, b_mat_); }

std::vector<std::pair<std::string, Tensor>> DecomposedPrompt::named_trainable() const {
    return {{"A", a_}, {"B", b_mat_}};
}

// ---------------------------------------------------------------------------
// Residual
// ---------------------------------------------------------------------------

ResidualPrompt::ResidualPrompt(int e, int c, int h, Tensor p, Tensor down_w, Tensor down_b,
                               Tensor up_w, Tensor up_b, Tensor ln_gain, Tensor ln_bias)
    : PromptParameterization(e, c),
      h_(h),
      p_(std::move(p)),
      down_w_(std::move(down_w)),
      down_b_(std::move(down_b)),
      up_w_(std::move(up_w)),
      up_b_(std::move(up_b)),
      ln_gain_(std::move(ln_gain)),
      ln_bias_(std::move(ln_bias)) {
    if (h_ < 1) throw ConfigError("ResidualPrompt: bottleneck must be >= 1");
    for (Tensor* t : {&p_, &down_w_, &down_b_, &up_w_, &up_b_, &ln_gain_, &ln_bias_})
        t->set_requires_grad(true);
}

Tensor ResidualPrompt::materialize() const {
    // rows of pt are prompt tokens; the shared MLP applies token-wise
    Tensor pt = transpose(p_);                                      // [c,e]
    Tensor hid = relu(add_rowvec(matmul(pt, transpose(down_w_)), down_b_));  // [c,h]
    Tensor up = add_rowvec(matmul(hid, transpose(up_w_)), up_b_);   // [c,e]
    Tensor normed = layer_norm(up, ln_gain_, ln_bias_);
    return transpose(add(normed, pt));
}

std::vector<std::pair<std::string, Tensor>> ResidualPrompt::named_trainable() const {
    return {{"P", p_},         {"down_w", down_w_}, {"down_b", down_b_}, {"up_w", up_w_},
            {"up_b", up_b_},   {"ln_gain", ln_gain_}, {"ln_bias", ln_bias_}};
}

// ---------------------------------------------------------------------------
// Rank probe
// ---------------------------------------------------------------------------

RankProbePrompt::RankProbePrompt(int e, int c, Tensor u, Tensor sigma_diag, Tensor v)
    : PromptParameterization(e, c), u_(std::move(u)), sigma_diag_(std::move(sigma_diag)), v_(std::move(v)) {
    if (c > e) {
        throw ConfigError("RankProbePrompt: requires c <= e, got c=" + std::to_string(c) +
                          " e=" + std::to_string(e));
    }
    for (Tensor* t : {&u_, &sigma_diag_, &v_}) t->set_requires_grad(true);
}

Tensor RankProbePrompt::materialize() const {
    Tensor sigma = diag_embed(relu(sigma_diag_), e_, c_);  // [e,c], off-diagonal exactly 0
    return matmul(matmul(u_, sigma), v_);
}

std::vector<std::pair<std::string, Tensor>> RankProbePrompt::named_trainable() const {
    return {{"U", u_}, {"sigma_diag", sigma_diag_}, {"V", v_}};
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

Tensor gaussian_tensor(Rng& rng, std::vector<int> shape, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_values()) v = rng.normal(0.0, stddev);
    return t;
}

// copy c distinct vocabulary-embedding rows into prompt columns; falls back to
// unit Gaussian when no table is given or it has fewer than c rows
Tensor init_prompt_matrix(Rng& rng, int e, int c, const Tensor* vocab_embedding) {
    if (vocab_embedding != nullptr && vocab_embedding->ndim() == 2 &&
        vocab_embedding->dim(0) >= c && vocab_embedding->dim(1) == e) {
        const int V = vocab_embedding->dim(0);
        std::vector<std::size_t> rows =
            rng.sample_indices(static_cast<std::size_t>(V), static_cast<std::size_t>(c));
        rng.shuffle(rows);  // column order independent of the ascending sample order
        Tensor p = Tensor::zeros({e, c});
        for (int j = 0; j < c; ++j) {
            const double* src = vocab_embedding->values().data() + rows[static_cast<std::size_t>(j)] * e;
            for (int i = 0; i < e; ++i)
                p.mutable_values()[static_cast<std::size_t>(i) * c + j] = src[i];
        }
        return p;
    }
    return gaussian_tensor(rng, {e, c}, 1.0);
}

}  // namespace

std::unique_ptr<PromptParameterization> make_prompt(const PromptInit& init) {
    if (init.e < 1 || init.c < 1) {
        throw ConfigError("make_prompt: e and c must be >= 1, got e=" + std::to_string(init.e) +
                          " c=" + std::to_string(init.c));
    }
    Rng rng(init.seed);
    switch (init.kind) {
        case PromptKind::vanilla: {
            Tensor p = init_prompt_matrix(rng, init.e, init.c, init.vocab_embedding);
            return std::make_unique<VanillaPrompt>(init.e, init.c, std::move(p));
        }
        case PromptKind::decomposed: {
            if (init.b < 1) throw ConfigError("make_prompt: bottleneck b must be >= 1");
            const double stddev = std::pow(1.0 / init.b, 0.25) * init.sigma_t;
            Tensor a = gaussian_tensor(rng, {init.e, init.b}, stddev);
            Tensor b = gaussian_tensor(rng, {init.b, init.c}, stddev);
            return std::make_unique<DecomposedPrompt>(init.e, init.c, init.b, std::move(a),
                                                      std::move(b));
        }
        case PromptKind::residual: {
            if (init.h < 1) throw ConfigError("make_prompt: bottleneck h must be >= 1");
            Tensor p = init_prompt_matrix(rng, init.e, init.c, init.vocab_embedding);
            Tensor down_w = gaussian_tensor(rng, {init.h, init.e}, 1.0 / std::sqrt(init.e));
            Tensor down_b = Tensor::zeros({init.h});
            Tensor up_w = gaussian_tensor(rng, {init.e, init.h}, 1.0 / std::sqrt(init.h));
            Tensor up_b = Tensor::zeros({init.e});
            Tensor ln_gain = Tensor::constant({init.e}, 1.0);
            Tensor ln_bias = Tensor::zeros({init.e});
            return std::make_unique<ResidualPrompt>(init.e, init.c, init.h, std::move(p),
                                                    std::move(down_w), std::move(down_b),
                                                    std::move(up_w), std::move(up_b),
                                                    std::move(ln_gain), std::move(ln_bias));
        }
        case PromptKind::rank_probe: {
            if (init.c > init.e) {
                throw ConfigError("make_prompt: rank probe requires c <= e, got c=" +
                                  std::to_string(init.c) + " e=" + std::to_string(init.e));
            }
            Tensor u = gaussian_tensor(rng, {init.e, init.e}, 1.0 / std::sqrt(init.e));
            Tensor sigma = Tensor::constant({init.c}, 1.0);  // positive diagonal start
            Tensor v = gaussian_tensor(rng, {init.c, init.c}, 1.0 / std::sqrt(init.c));
            return std::make_unique<RankProbePrompt>(init.e, init.c, std::move(u), std::move(sigma),
                                                     std::move(v));
        }
    }
    throw ConfigError("make_prompt: unknown kind");
}

std::size_t trainable_param_count(PromptKind kind, int e, int c, int b_or_h) {
    if (e < 1 || c < 1) throw ConfigError("trainable_param_count: e and c must be >= 1");
    const auto E = static_cast<std::size_t>(e);
    const auto C = static_cast<std::size_t>(c);
    const auto B = static_cast<std::size_t>(b_or_h);
    switch (kind) {
        case PromptKind::vanilla:
            return E * C;
        case PromptKind::decomposed:
            if (b_or_h < 1) throw ConfigError("trainable_param_count: b must be >= 1");
            return E * B + B * C;
        case PromptKind::residual:
            if (b_or_h < 1) throw ConfigError("trainable_param_count: h must be >= 1");
            // P + down (with bias) + up (with bias) + layer-norm gain/bias
            return E * C + 2 * E * B + B + E + 2 * E;
        case PromptKind::rank_probe:
            return E * E + C + C * C;
    }
    throw ConfigError("trainable_param_count: unknown kind");
}

std::string product_filename(PromptKind kind, int e, int c, int b, std::uint64_t seed) {
    std::string name = std::string("prompt_") + prompt_kind_name(kind) + "_e" + std::to_string(e) +
                       "_c" + std::to_string(c);
    if (kind == PromptKind::decomposed || kind == PromptKind::residual)
        name += "_b" + std::to_string(b);
    name += "_seed" + std::to_string(seed) + ".txt";
    return name;
}

void export_product(const DecomposedPrompt& param, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("export_product: cannot open " + path.string());
    Tensor product = param.materialize().detach();
    dump_tensor(os, "P_emb", product);
    os.flush();
    if (!os) throw IoError("export_product: write failed for " + path.string());
}

std::unique_ptr<VanillaPrompt> load_vanilla_prompt(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_vanilla_prompt: cannot open " + path.string());
    NamedTensor rec;
    if (!read_tensor_record(is, rec)) {
        throw ParseError("load_vanilla_prompt: no tensor record in " + path.string());
    }
    if (rec.tensor.ndim() != 2) {
        throw ParseError("load_vanilla_prompt: expected 2-D prompt, got " +
                         shape_str(rec.tensor.shape()));
    }
    return std::make_unique<VanillaPrompt>(rec.tensor.dim(0), rec.tensor.dim(1), rec.tensor);
}

}  // namespace dpt
