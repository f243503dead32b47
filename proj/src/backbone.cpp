#include "dpt/backbone.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "dpt/adamw.hpp"
#include "dpt/rng.hpp"

namespace dpt {

void BackboneConfig::validate() const {
    if (e < 1 || n_layers < 1 || n_heads < 1 || ffn_dim < 1 || max_len < 1) {
        throw ConfigError("BackboneConfig: all dimensions must be >= 1");
    }
    if (e % n_heads != 0) {
        throw ConfigError("BackboneConfig: e=" + std::to_string(e) +
                          " not divisible by n_heads=" + std::to_string(n_heads));
    }
    if (vocab_size <= tokens::eos) {
        throw ConfigError("BackboneConfig: vocab_size must cover reserved ids pad/bos/eos");
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

namespace {

Tensor gauss(Rng& rng, std::vector<int> shape, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.mutable_values()) v = rng.normal(0.0, stddev);
    return t;
}

AttentionWeights init_attention(Rng& rng, int e) {
    const double s = 1.0 / std::sqrt(static_cast<double>(e));
    AttentionWeights w;
    w.wq = gauss(rng, {e, e}, s);
    w.bq = Tensor::zeros({e});
    w.wk = gauss(rng, {e, e}, s);
    w.bk = Tensor::zeros({e});
    w.wv = gauss(rng, {e, e}, s);
    w.bv = Tensor::zeros({e});
    w.wo = gauss(rng, {e, e}, s);
    w.bo = Tensor::zeros({e});
    return w;
}

void init_ffn(Rng& rng, int e, int f, Tensor& w1, Tensor& b1, Tensor& w2, Tensor& b2) {
    w1 = gauss(rng, {e, f}, 1.0 / std::sqrt(static_cast<double>(e)));
    b1 = Tensor::zeros({f});
    w2 = gauss(rng, {f, e}, 1.0 / std::sqrt(static_cast<double>(f)));
    b2 = Tensor::zeros({e});
}

void append_attention(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                      const AttentionWeights& w) {
    out.emplace_back(prefix + ".wq", w.wq);
    out.emplace_back(prefix + ".bq", w.bq);
    out.emplace_back(prefix + ".wk", w.wk);
    out.emplace_back(prefix + ".bk", w.bk);
    out.emplace_back(prefix + ".wv", w.wv);
    out.emplace_back(prefix + ".bv", w.bv);
    out.emplace_back(prefix + ".wo", w.wo);
    out.emplace_back(prefix + ".bo", w.bo);
}

}  // namespace

Backbone::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int e = config_.e, f = config_.ffn_dim, V = config_.vocab_size;
    embedding_ = gauss(rng, {V, e}, 1.0 / std::sqrt(static_cast<double>(e)));
    for (int l = 0; l < config_.n_layers; ++l) {
        EncoderLayer layer;
        layer.ln1_gain = Tensor::constant({e}, 1.0);
        layer.ln1_bias = Tensor::zeros({e});
        layer.self_attn = init_attention(rng, e);
        layer.ln2_gain = Tensor::constant({e}, 1.0);
        layer.ln2_bias = Tensor::zeros({e});
        init_ffn(rng, e, f, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2);
        encoder_.push_back(std::move(layer));
    }
    for (int l = 0; l < config_.n_layers; ++l) {
        DecoderLayer layer;
        layer.ln1_gain = Tensor::constant({e}, 1.0);
        layer.ln1_bias = Tensor::zeros({e});
        layer.self_attn = init_attention(rng, e);
        layer.ln2_gain = Tensor::constant({e}, 1.0);
        layer.ln2_bias = Tensor::zeros({e});
        layer.cross_attn = init_attention(rng, e);
        layer.ln3_gain = Tensor::constant({e}, 1.0);
        layer.ln3_bias = Tensor::zeros({e});
        init_ffn(rng, e, f, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2);
        decoder_.push_back(std::move(layer));
    }
    enc_ln_gain_ = Tensor::constant({e}, 1.0);
    enc_ln_bias_ = Tensor::zeros({e});
    dec_ln_gain_ = Tensor::constant({e}, 1.0);
    dec_ln_bias_ = Tensor::zeros({e});
    pe_table_ = position_encoding(0, config_.max_len, e);
    unfreeze();
}

void Backbone::freeze() {
    for (auto& [name, t] : named_weights()) {
        Tensor w = t;
        w.set_requires_grad(false);
        w.zero_grad();
    }
    frozen_ = true;
}

void Backbone::unfreeze() {
    for (auto& [name, t] : named_weights()) {
        Tensor w = t;
        w.set_requires_grad(true);
    }
    frozen_ = false;
}

std::vector<std::pair<std::string, Tensor>> Backbone::named_weights() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embedding", embedding_);
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
        const std::string p = "enc" + std::to_string(l);
        const EncoderLayer& layer = encoder_[l];
        out.emplace_back(p + ".ln1_gain", layer.ln1_gain);
        out.emplace_back(p + ".ln1_bias", layer.ln1_bias);
        append_attention(out, p + ".attn", layer.self_attn);
        out.emplace_back(p + ".ln2_gain", layer.ln2_gain);
        out.emplace_back(p + ".ln2_bias", layer.ln2_bias);
        out.emplace_back(p + ".ffn_w1", layer.ffn_w1);
        out.emplace_back(p + ".ffn_b1", layer.ffn_b1);
        out.emplace_back(p + ".ffn_w2", layer.ffn_w2);
        out.emplace_back(p + ".ffn_b2", layer.ffn_b2);
    }
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
        const std::string p = "dec" + std::to_string(l);
        const DecoderLayer& layer = decoder_[l];
        out.emplace_back(p + ".ln1_gain", layer.ln1_gain);
        out.emplace_back(p + ".ln1_bias", layer.ln1_bias);
        append_attention(out, p + ".attn", layer.self_attn);
        out.emplace_back(p + ".ln2_gain", layer.ln2_gain);
        out.emplace_back(p + ".ln2_bias", layer.ln2_bias);
        append_attention(out, p + ".cross", layer.cross_attn);
        out.emplace_back(p + ".ln3_gain", layer.ln3_gain);
        out.emplace_back(p + ".ln3_bias", layer.ln3_bias);
        out.emplace_back(p + ".ffn_w1", layer.ffn_w1);
        out.emplace_back(p + ".ffn_b1", layer.ffn_b1);
        out.emplace_back(p + ".ffn_w2", layer.ffn_w2);
        out.emplace_back(p + ".ffn_b2", layer.ffn_b2);
    }
    out.emplace_back("enc_ln_gain", enc_ln_gain_);
    out.emplace_back("enc_ln_bias", enc_ln_bias_);
    out.emplace_back("dec_ln_gain", dec_ln_gain_);
    out.emplace_back("dec_ln_bias", dec_ln_bias_);
    return out;
}

std::vector<Tensor> Backbone::weights() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_weights()) out.push_back(t);
    return out;
}

std::uint64_t Backbone::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto& [name, t] : named_weights()) {
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.values(), h);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Forward pieces
// ---------------------------------------------------------------------------

Tensor concat_prompt(const Tensor& p_emb, const Tensor& x_emb) {
    if (p_emb.ndim() != 2 || x_emb.ndim() != 2 || p_emb.dim(0) != x_emb.dim(0)) {
        throw DimensionError("concat_prompt: row counts disagree, " + shape_str(p_emb.shape()) +
                             " vs " + shape_str(x_emb.shape()));
    }
    return hcat({p_emb, x_emb});
}

Tensor position_encoding(int start, int len, int e) {
    Tensor pe = Tensor::zeros({len, e});
    for (int p = 0; p < len; ++p) {
        const double pos = static_cast<double>(start + p);
        for (int i = 0; i < e; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / e);
            pe.mutable_values()[static_cast<std::size_t>(p) * e + i] = std::sin(pos * freq);
            if (i + 1 < e)
                pe.mutable_values()[static_cast<std::size_t>(p) * e + i + 1] = std::cos(pos * freq);
        }
    }
    return pe;
}

namespace {

// first len rows of the cached position table
Tensor pe_rows(const Tensor& table, int len) {
    const int e = table.dim(1);
    std::vector<double> v(table.values().begin(),
                          table.values().begin() + static_cast<std::size_t>(len) * e);
    return Tensor::from_values({len, e}, std::move(v));
}

Tensor causal_mask(int n) {
    Tensor m = Tensor::zeros({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            m.mutable_values()[static_cast<std::size_t>(i) * n + j] = -1e9;
    return m;
}

// rows of q_in/kv_in are token states; mask (optional) is additive on scores
Tensor attention(const Tensor& q_in, const Tensor& kv_in, const AttentionWeights& w, int n_heads,
                 const Tensor* mask) {
    const int e = q_in.dim(1);
    const int d = e / n_heads;
    Tensor q = add_rowvec(matmul(q_in, w.wq), w.bq);
    Tensor k = add_rowvec(matmul(kv_in, w.wk), w.bk);
    Tensor v = add_rowvec(matmul(kv_in, w.wv), w.bv);
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(n_heads));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (int hh = 0; hh < n_heads; ++hh) {
        Tensor qh = slice_cols(q, hh * d, d);
        Tensor kh = slice_cols(k, hh * d, d);
        Tensor vh = slice_cols(v, hh * d, d);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_d);
        if (mask != nullptr) scores = add(scores, *mask);
        heads.push_back(matmul(softmax_rows(scores), vh));
    }
    return add_rowvec(matmul(hcat(heads), w.wo), w.bo);
}

Tensor ffn(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
           const Tensor& b2) {
    return add_rowvec(matmul(relu(add_rowvec(matmul(x, w1), b1)), w2), b2);
}

Tensor run_encoder(const Backbone& bb, Tensor h) {
    const int n_heads = bb.config().n_heads;
    for (const EncoderLayer& layer : bb.encoder()) {
        Tensor normed = layer_norm(h, layer.ln1_gain, layer.ln1_bias);
        h = add(h, attention(normed, normed, layer.self_attn, n_heads, nullptr));
        Tensor normed2 = layer_norm(h, layer.ln2_gain, layer.ln2_bias);
        h = add(h, ffn(normed2, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2));
    }
    return layer_norm(h, bb.enc_ln_gain(), bb.enc_ln_bias());
}

Tensor run_decoder(const Backbone& bb, Tensor h, const Tensor& enc_out, const Tensor& mask) {
    const int n_heads = bb.config().n_heads;
    for (const DecoderLayer& layer : bb.decoder()) {
        Tensor normed = layer_norm(h, layer.ln1_gain, layer.ln1_bias);
        h = add(h, attention(normed, normed, layer.self_attn, n_heads, &mask));
        Tensor normed2 = layer_norm(h, layer.ln2_gain, layer.ln2_bias);
        h = add(h, attention(normed2, enc_out, layer.cross_attn, n_heads, nullptr));
        Tensor normed3 = layer_norm(h, layer.ln3_gain, layer.ln3_bias);
        h = add(h, ffn(normed3, layer.ffn_w1, layer.ffn_b1, layer.ffn_w2, layer.ffn_b2));
    }
    return layer_norm(h, bb.dec_ln_gain(), bb.dec_ln_bias());
}

Tensor decoder_logits(const Backbone& bb, const std::vector<int>& dec_in, const Tensor& enc_out) {
    Tensor d0 = add(transpose(embedding_lookup(bb.embedding(), dec_in)),
                    pe_rows(bb.position_table(), static_cast<int>(dec_in.size())));
    Tensor mask = causal_mask(static_cast<int>(dec_in.size()));
    Tensor dec_out = run_decoder(bb, d0, enc_out, mask);
    return matmul(dec_out, transpose(bb.embedding()));
}

}  // namespace

Tensor encode(const Backbone& bb, const Tensor& p_emb, const std::vector<int>& input_ids) {
    const BackboneConfig& cfg = bb.config();
    if (p_emb.ndim() != 2 || p_emb.dim(0) != cfg.e) {
        throw DimensionError("encode: prompt must have " + std::to_string(cfg.e) + " rows, got " +
                             shape_str(p_emb.shape()));
    }
    const int c = p_emb.dim(1);
    const int n = static_cast<int>(input_ids.size());
    if (c + n > cfg.max_len) {
        throw LengthError("encode: prompt+input length " + std::to_string(c + n) +
                          " exceeds max_len " + std::to_string(cfg.max_len));
    }
    if (c + n == 0) throw LengthError("encode: empty prompt and empty input");
    Tensor x_emb = embedding_lookup(bb.embedding(), input_ids);  // [e,n]
    Tensor full = concat_prompt(p_emb, x_emb);                   // [e,c+n]
    // prompt slots take positions 0..c-1, text continues at c
    Tensor h0 = add(transpose(full), pe_rows(bb.position_table(), c + n));
    return run_encoder(bb, h0);
}

ForwardResult backbone_forward(const Backbone& bb, const Tensor& p_emb,
                               const std::vector<int>& input_ids,
                               const std::vector<int>& target_ids) {
    const BackboneConfig& cfg = bb.config();
    const int t = static_cast<int>(target_ids.size());
    if (t + 1 > cfg.max_len) {
        throw LengthError("backbone_forward: target length " + std::to_string(t) +
                          " exceeds max_len " + std::to_string(cfg.max_len));
    }
    Tensor enc_out = encode(bb, p_emb, input_ids);
    std::vector<int> dec_in;
    dec_in.reserve(static_cast<std::size_t>(t) + 1);
    dec_in.push_back(tokens::bos);
    dec_in.insert(dec_in.end(), target_ids.begin(), target_ids.end());
    std::vector<int> predict = target_ids;
    predict.push_back(tokens::eos);
    Tensor logits = decoder_logits(bb, dec_in, enc_out);
    return ForwardResult{cross_entropy(logits, predict), logits};
}

std::vector<int> greedy_decode(const Backbone& bb, const Tensor& p_emb,
                               const std::vector<int>& input_ids, int max_steps) {
    if (max_steps < 1) throw UsageError("greedy_decode: max_steps must be >= 1");
    // decoding never needs gradients; drop whatever it records (unfrozen
    // weights record ops during full fine-tune evaluation)
    Tape& tape = Tape::active();
    const std::size_t watermark = tape.size();
    Tensor enc_out = encode(bb, p_emb.detach(), input_ids);
    const int V = bb.config().vocab_size;
    std::vector<int> out;
    std::vector<int> dec_in = {tokens::bos};
    for (int step = 0; step < max_steps; ++step) {
        Tensor logits = decoder_logits(bb, dec_in, enc_out);
        const double* row =
            logits.values().data() + (static_cast<std::size_t>(dec_in.size()) - 1) * V;
        int best = 0;
        for (int j = 1; j < V; ++j)
            if (row[j] > row[best]) best = j;  // strict: ties keep the lower id
        if (best == tokens::eos) break;
        out.push_back(best);
        dec_in.push_back(best);
        if (static_cast<int>(dec_in.size()) + 1 > bb.config().max_len) break;
    }
    tape.truncate(watermark);
    return out;
}

double exact_match_accuracy(const Backbone& bb, const Tensor& p_emb, const Dataset& ds,
                            int max_steps) {
    if (ds.empty()) return 0.0;
    Tensor p = p_emb.detach();
    std::size_t hits = 0;
    for (const TextToTextExample& ex : ds) {
        if (greedy_decode(bb, p, ex.input, max_steps) == ex.target) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

Backbone pretrain(const BackboneConfig& config, const Dataset& corpus, int steps,
                  std::uint64_t seed, const PretrainOptions& options) {
    if (corpus.empty()) throw UsageError("pretrain: corpus must be nonempty");
    if (steps < 1) throw UsageError("pretrain: steps must be >= 1");
    Backbone bb(config, seed);
    AdamWConfig opt_cfg;
    opt_cfg.lr = options.lr;
    opt_cfg.weight_decay = options.weight_decay;
    AdamW opt(bb.weights(), opt_cfg);
    const double lr0 = options.lr;
    const double lr1 = options.lr * options.lr_floor_fraction;

    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();  // triggers an initial shuffle

    Tensor empty_prompt = Tensor::zeros({config.e, 0});
    Tape& tape = Tape::active();
    for (int step = 0; step < steps; ++step) {
        double batch_loss = 0.0;
        for (int k = 0; k < options.batch_size; ++k) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            const TextToTextExample& ex = corpus[order[cursor++]];
            tape.clear();
            ForwardResult r = backbone_forward(bb, empty_prompt, ex.input, ex.target);
            batch_loss += r.loss.value();
            backward(scale(r.loss, 1.0 / options.batch_size));
        }
        tape.clear();
        // linear decay settles the multi-task mixture
        opt.set_lr(lr0 + (lr1 - lr0) * (static_cast<double>(step) / steps));
        opt.step();
        opt.zero_grad();
        if (options.verbose && (step + 1) % 100 == 0) {
            std::cerr << "pretrain step " << (step + 1) << "/" << steps << " loss "
                      << batch_loss / options.batch_size << "\n";
        }
        if (!std::isfinite(batch_loss)) {
            throw NumericalError("pretrain: non-finite loss at step " + std::to_string(step));
        }
    }
    bb.freeze();
    return bb;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Backbone& bb) {
    std::ofstream os(path);
    if (!os) throw IoError("save_checkpoint: cannot open " + path.string());
    const BackboneConfig& c = bb.config();
    os << "dptlab-checkpoint 1\n";
    os << "e " << c.e << "\n";
    os << "n_layers " << c.n_layers << "\n";
    os << "n_heads " << c.n_heads << "\n";
    os << "ffn_dim " << c.ffn_dim << "\n";
    os << "vocab_size " << c.vocab_size << "\n";
    os << "max_len " << c.max_len << "\n";
    os << "frozen " << (bb.frozen() ? 1 : 0) << "\n";
    auto named = bb.named_weights();
    os << "tensors " << named.size() << "\n";
    for (auto& [name, t] : named) dump_tensor(os, name, t);
    os.flush();
    if (!os) throw IoError("save_checkpoint: write failed for " + path.string());
}

Backbone load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_checkpoint: cannot open " + path.string());
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "dptlab-checkpoint" || version != 1) {
        throw ParseError("load_checkpoint: not a dptlab checkpoint: " + path.string());
    }
    BackboneConfig cfg;
    int frozen = 0;
    std::size_t n_tensors = 0;
    std::string key;
    while (is >> key) {
        if (key == "tensors") {
            is >> n_tensors;
            break;
        }
        long long value = 0;
        if (!(is >> value)) throw ParseError("load_checkpoint: bad header field " + key);
        if (key == "e") cfg.e = static_cast<int>(value);
        else if (key == "n_layers") cfg.n_layers = static_cast<int>(value);
        else if (key == "n_heads") cfg.n_heads = static_cast<int>(value);
        else if (key == "ffn_dim") cfg.ffn_dim = static_cast<int>(value);
        else if (key == "vocab_size") cfg.vocab_size = static_cast<int>(value);
        else if (key == "max_len") cfg.max_len = static_cast<int>(value);
        else if (key == "frozen") frozen = static_cast<int>(value);
        else throw ParseError("load_checkpoint: unknown header field " + key);
    }
    is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');

    Backbone bb(cfg, 0);
    auto named = bb.named_weights();
    if (named.size() != n_tensors) {
        throw ParseError("load_checkpoint: expected " + std::to_string(named.size()) +
                         " tensors, file declares " + std::to_string(n_tensors));
    }
    for (auto& [name, t] : named) {
        NamedTensor rec;
        if (!read_tensor_record(is, rec)) {
            throw ParseError("load_checkpoint: missing tensor record for " + name);
        }
        if (rec.name != name || rec.tensor.shape() != t.shape()) {
            throw ParseError("load_checkpoint: tensor mismatch, expected " + name + " " +
                             shape_str(t.shape()) + ", got " + rec.name + " " +
                             shape_str(rec.tensor.shape()));
        }
        Tensor dst = t;
        dst.mutable_values() = rec.tensor.values();
    }
    if (frozen != 0) bb.freeze();
    return bb;
}

}  // namespace dpt
