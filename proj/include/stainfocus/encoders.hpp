#pragma once

#include "stainfocus/autodiff.hpp"
#include "stainfocus/image.hpp"
#include "stainfocus/random.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <string>
#include <vector>

namespace stainfocus {

struct NamedParameter {
    std::string name;
    ad::Var var;
};
using ParameterList = std::vector<NamedParameter>;

void set_trainable(const ParameterList& params, bool trainable);

// ---- vision --------------------------------------------------------------

struct VisionConfig {
    int image_size = 64;
    std::array<int, 4> channels{8, 16, 32, 32};
    int embed_dim = 64;

    friend bool operator==(const VisionConfig&, const VisionConfig&) = default;
};

// Four stride-2 3x3 conv blocks with GELU, global average pooling, and a
// linear projection to the joint embedding space.
class VisionEncoder {
public:
    VisionEncoder() = default;
    VisionEncoder(const VisionConfig& config, Rng& rng);

    // images: [B,1,H,W]. Returns the un-normalized projection [B, embed_dim].
    [[nodiscard]] ad::Var features(const ad::Var& images) const;
    // Unit-norm embeddings [B, embed_dim].
    [[nodiscard]] ad::Var encode(const ad::Var& images) const;

    [[nodiscard]] const VisionConfig& config() const noexcept { return config_; }
    void collect(ParameterList& out, const std::string& prefix) const;

private:
    VisionConfig config_;
    std::array<ad::Var, 4> conv_w_, conv_b_;
    ad::Var proj_w_, proj_b_;
};

// Packs same-sized images into a [B,1,H,W] tensor; throws on size mismatch.
Tensor stack_images(const std::vector<const Image*>& images, int expected_size);
std::vector<double> encode_image(const VisionEncoder& encoder, const Image& image);

// ---- text ----------------------------------------------------------------

// Word-level tokenizer over a fixed vocabulary; unknown words hash into a
// reserved bucket range so arbitrary stain names still tokenize stably.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kStart = 1;
    static constexpr int kEnd = 2;

    explicit Tokenizer(int vocab_size = 512);
    [[nodiscard]] std::vector<int> encode(const std::string& text) const;
    [[nodiscard]] int vocab_size() const noexcept { return vocab_size_; }

private:
    int vocab_size_;
    std::vector<std::string> words_;
};

struct TextConfig {
    int vocab_size = 512;
    int token_dim = 64;
    int embed_dim = 64;
    int layers = 2;
    int heads = 4;
    int mlp_hidden = 128;
    int max_length = 77;

    friend bool operator==(const TextConfig&, const TextConfig&) = default;
};

// Pre-LN self-attention + MLP residual block on [N*T, d] sequences.
struct TransformerBlock {
    ad::Var ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    ad::Var ln2_g, ln2_b, w1, b1, w2, b2;
    int heads = 1;

    TransformerBlock() = default;
    TransformerBlock(int width, int hidden, int heads, Rng& rng);
    [[nodiscard]] ad::Var forward(const ad::Var& x, int sequences, int length, bool causal) const;
    void collect(ParameterList& out, const std::string& prefix) const;
};

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const TextConfig& config, Rng& rng);

    // Token embeddings for ids: [n, token_dim].
    [[nodiscard]] ad::Var embed_ids(const std::vector<int>& ids) const;
    // Adds positions, runs the causal layers and the final layer norm. seq: [N*T, token_dim].
    [[nodiscard]] ad::Var run(const ad::Var& seq, int sequences, int length) const;
    // End-of-sequence pooling (last position), projection, L2 normalization: [N, embed_dim].
    [[nodiscard]] ad::Var pool_project(const ad::Var& hidden, int sequences, int length) const;

    [[nodiscard]] const TextConfig& config() const noexcept { return config_; }
    void collect(ParameterList& out, const std::string& prefix) const;

private:
    TextConfig config_;
    ad::Var token_embedding_, positional_;
    std::vector<TransformerBlock> layers_;
    ad::Var ln_g_, ln_b_, projection_;
};

// One bidirectional self-attention layer and a two-layer MLP, both residual,
// applied to the text encoder's final token sequence before pooling.
class Adapter {
public:
    Adapter() = default;
    Adapter(int width, int hidden, int heads, Rng& rng);
    [[nodiscard]] ad::Var apply(const ad::Var& hidden, int sequences, int length) const;
    void collect(ParameterList& out, const std::string& prefix) const;

private:
    TransformerBlock block_;
};

// Frozen encoder -> adapter (optional) -> EOS pooling -> projection -> unit norm.
ad::Var encode_tokens(const TextEncoder& text, const Adapter* adapter, const ad::Var& seq, int sequences, int length);

// logit_scale * <v_b, t_m>; rows of both inputs are expected to be unit norm.
ad::Var cosine_logits(const ad::Var& image_embeddings, const ad::Var& text_embeddings, const ad::Var& logit_scale);

nlohmann::json to_json(const VisionConfig& c);
nlohmann::json to_json(const TextConfig& c);
VisionConfig vision_config_from_json(const nlohmann::json& j);
TextConfig text_config_from_json(const nlohmann::json& j);

}  // namespace stainfocus
