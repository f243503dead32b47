#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dpt/tasks.hpp"
#include "dpt/tensor.hpp"

namespace dpt {

struct BackboneConfig {
    int e = 32;          // embedding dimension
    int n_layers = 2;    // encoder and decoder layer count
    int n_heads = 2;
    int ffn_dim = 64;
    int vocab_size = 64;  // includes reserved pad=0, bos=1, eos=2
    int max_len = 256;

    void validate() const;
    bool operator==(const BackboneConfig&) const = default;
};

struct AttentionWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderLayer {
    Tensor ln1_gain, ln1_bias;
    AttentionWeights self_attn;
    Tensor ln2_gain, ln2_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct DecoderLayer {
    Tensor ln1_gain, ln1_bias;
    AttentionWeights self_attn;
    Tensor ln2_gain, ln2_bias;
    AttentionWeights cross_attn;
    Tensor ln3_gain, ln3_bias;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Tiny pre-LayerNorm encoder-decoder transformer. The output projection is
// tied to the embedding table. Once frozen it is immutable and safe to share
// across threads for inference.
class Backbone {
public:
    Backbone(const BackboneConfig& config, std::uint64_t seed);

    const BackboneConfig& config() const { return config_; }
    bool frozen() const { return frozen_; }

    // marks every weight non-trainable; prompt tuning runs on top of this
    void freeze();
    // re-enables gradients, used by the full fine-tune baseline
    void unfreeze();

    const Tensor& embedding() const { return embedding_; }
    const std::vector<EncoderLayer>& encoder() const { return encoder_; }
    const std::vector<DecoderLayer>& decoder() const { return decoder_; }
    const Tensor& enc_ln_gain() const { return enc_ln_gain_; }
    const Tensor& enc_ln_bias() const { return enc_ln_bias_; }
    const Tensor& dec_ln_gain() const { return dec_ln_gain_; }
    const Tensor& dec_ln_bias() const { return dec_ln_bias_; }
    // sinusoidal table for positions [0, max_len), built once
    const Tensor& position_table() const { return pe_table_; }

    // every weight tensor in a fixed canonical order
    std::vector<std::pair<std::string, Tensor>> named_weights() const;
    std::vector<Tensor> weights() const;

    // FNV-1a over all weight bytes in canonical order; the frozen-backbone
    // invariant compares this before and after every prompt-tuning run
    std::uint64_t checksum() const;

private:
    BackboneConfig config_;
    Tensor embedding_;  // [V,e]
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
    Tensor enc_ln_gain_, enc_ln_bias_;
    Tensor dec_ln_gain_, dec_ln_bias_;
    Tensor pe_table_;  // [max_len, e], constant
    bool frozen_ = false;

    friend Backbone load_checkpoint(const std::filesystem::path& path);
};

// first c columns are the prompt, the rest the input embeddings; gradients
// route back into both
Tensor concat_prompt(const Tensor& p_emb, const Tensor& x_emb);

// sinusoidal position encodings for positions [start, start+len) as [len,e]
Tensor position_encoding(int start, int len, int e);

struct ForwardResult {
    Tensor loss;    // scalar
    Tensor logits;  // [t+1, V] teacher-forced positions (targets plus eos)
};

// Teacher-forced loss of the target sequence given [P_emb; X_emb]. The
// decoder consumes bos + targets and predicts targets + eos.
ForwardResult backbone_forward(const Backbone& bb, const Tensor& p_emb,
                               const std::vector<int>& input_ids,
                               const std::vector<int>& target_ids);

// encoder states for [P_emb; X_emb]; reused across greedy decode steps
Tensor encode(const Backbone& bb, const Tensor& p_emb, const std::vector<int>& input_ids);

// argmax decoding from bos until eos or max_steps tokens; ties break toward
// the lower token id; never records gradients
std::vector<int> greedy_decode(const Backbone& bb, const Tensor& p_emb,
                               const std::vector<int>& input_ids, int max_steps);

// exact-match accuracy of greedy decodes against targets
double exact_match_accuracy(const Backbone& bb, const Tensor& p_emb, const Dataset& ds,
                            int max_steps);

struct PretrainOptions {
    int batch_size = 16;
    double lr = 1e-3;
    double lr_floor_fraction = 0.1;  // linear decay down to lr * this
    double weight_decay = 0.01;
    bool verbose = false;
};

// Trains all weights on the given corpus and returns the frozen backbone.
// Deterministic per seed.
Backbone pretrain(const BackboneConfig& config, const Dataset& corpus, int steps,
                  std::uint64_t seed, const PretrainOptions& options = {});

// checkpoint file: config header plus every named weight in dump format
void save_checkpoint(const std::filesystem::path& path, const Backbone& bb);
Backbone load_checkpoint(const std::filesystem::path& path);

}  // namespace dpt
