#pragma once

#include "stainfocus/encoders.hpp"

#include <string>
#include <vector>

namespace stainfocus {

// L learnable stain embeddings, each C tokens wide, stored as [L*C, token_dim].
class StainTable {
public:
    StainTable() = default;
    StainTable(std::vector<std::string> names, int tokens_per_stain, Tensor embeddings);

    [[nodiscard]] int num_stains() const noexcept { return static_cast<int>(names_.size()); }
    [[nodiscard]] int tokens_per_stain() const noexcept { return tokens_per_stain_; }
    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
    [[nodiscard]] int index_of(const std::string& name) const;  // -1 when unknown
    // Stain l's token block [C, token_dim].
    [[nodiscard]] ad::Var tokens(int stain_id) const;
    [[nodiscard]] const ad::Var& embeddings() const noexcept { return embeddings_; }
    ad::Var& embeddings() noexcept { return embeddings_; }

private:
    std::vector<std::string> names_;
    int tokens_per_stain_ = 0;
    ad::Var embeddings_;
};

// Token embeddings of each stain name, truncated or padded (with the word
// "stain") to C tokens; the untrained starting point of every stain table.
Tensor stain_name_embeddings(const TextEncoder& text, const Tokenizer& tokenizer, const std::vector<std::string>& names,
                             int tokens_per_stain);

// Row k holds the convex weights of rank k+1 over the anchors (1-based,
// strictly increasing, first = 1, last = K): linear between neighbours, one-hot at anchors.
Tensor interpolation_weights(int levels, const std::vector<int>& anchors);

// Base rank embeddings R^base, interpolation weights and the conditioning
// network f(R, S) = R + MLP([R ; mean_C(S)]) whose output layer starts at zero.
class RankSpace {
public:
    RankSpace() = default;
    RankSpace(int levels, std::vector<int> anchors, int rank_tokens, int token_dim, int hidden, Rng& rng);

    [[nodiscard]] int num_levels() const noexcept { return levels_; }
    [[nodiscard]] int num_base() const noexcept { return static_cast<int>(anchors_.size()); }
    [[nodiscard]] int rank_tokens() const noexcept { return rank_tokens_; }
    [[nodiscard]] const std::vector<int>& anchors() const noexcept { return anchors_; }
    [[nodiscard]] const Tensor& weights() const noexcept { return weights_; }
    [[nodiscard]] const ad::Var& base() const noexcept { return base_; }

    // stain_tokens [C, token_dim] -> K' conditioned embeddings [K'*C_r, token_dim].
    [[nodiscard]] ad::Var condition(const ad::Var& stain_tokens) const;
    // [K'*C_r, token_dim] -> [K*C_r, token_dim] via the fixed weights.
    [[nodiscard]] ad::Var interpolate(const ad::Var& conditioned) const;

    void collect_base(ParameterList& out, const std::string& prefix) const;
    void collect_conditioning(ParameterList& out, const std::string& prefix) const;

private:
    int levels_ = 0;
    std::vector<int> anchors_;
    int rank_tokens_ = 0;
    int token_dim_ = 0;
    Tensor weights_;
    ad::Var base_;
    ad::Var w1_, b1_, w2_, b2_;
};

// Learnable context segments; initialized from the embeddings of fixed phrases.
struct PromptContext {
    ad::Var stain_context;  // [n_s, token_dim]
    ad::Var rank_context;   // [n_r, token_dim]
};

// Token-position layout of one assembled prompt. Absent segments have length 0.
struct PromptLayout {
    int stain_context_begin = 0, stain_context_length = 0;
    int stain_begin = 0, stain_length = 0;
    int rank_context_begin = 0, rank_context_length = 0;
    int rank_begin = 0, rank_length = 0;
    int total = 0;  // includes start and end markers
};

PromptLayout stain_prompt_layout(int context_length, int stain_tokens);
PromptLayout rank_prompt_layout(int stain_context_length, int stain_tokens, int rank_context_length, int rank_tokens);

struct PromptBatch {
    ad::Var tokens;  // [count*length, token_dim]
    int count = 0;
    int length = 0;
    PromptLayout layout;
};

// [start][context][S_l][end] for every stain.
PromptBatch build_stain_prompts(const TextEncoder& text, const StainTable& table, const ad::Var& context);

// [start][stain-context][S_s][rank-context][R~_k][end] for k = 1..K. `ranks`
// holds the K interpolated rank embeddings [K*C_r, token_dim]. A null stain
// table drops the stain segments (rank-only prompts).
PromptBatch build_rank_prompts(const TextEncoder& text, const StainTable* table, int stain_id, const PromptContext& context,
                               const ad::Var& ranks, int levels);

}  // namespace stainfocus
