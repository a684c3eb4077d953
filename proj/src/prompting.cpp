#include "stainfocus/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace stainfocus {

StainTable::StainTable(std::vector<std::string> names, int tokens_per_stain, Tensor embeddings)
    : names_(std::move(names)), tokens_per_stain_(tokens_per_stain) {
    if (tokens_per_stain <= 0) throw std::invalid_argument("stain table: tokens per stain must be positive");
    if (std::set<std::string>(names_.begin(), names_.end()).size() != names_.size())
        throw std::invalid_argument("stain table: stain names must be unique");
    if (embeddings.rows() != num_stains() * tokens_per_stain)
        throw std::invalid_argument("stain table: embeddings " + embeddings.shape_string() + " do not hold " +
                                    std::to_string(num_stains()) + "x" + std::to_string(tokens_per_stain) + " tokens");
    for (double v : embeddings.values())
        if (!std::isfinite(v)) throw std::invalid_argument("stain table: non-finite embedding value");
    embeddings_ = ad::leaf(std::move(embeddings), true);
}

int StainTable::index_of(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

ad::Var StainTable::tokens(int stain_id) const {
    if (stain_id < 0 || stain_id >= num_stains())
        throw std::invalid_argument("stain id " + std::to_string(stain_id) + " outside [0, " + std::to_string(num_stains()) + ")");
    return ad::slice_rows(embeddings_, stain_id * tokens_per_stain_, tokens_per_stain_);
}

Tensor stain_name_embeddings(const TextEncoder& text, const Tokenizer& tokenizer, const std::vector<std::string>& names,
                             int tokens_per_stain) {
    const int filler = tokenizer.encode("stain").front();
    std::vector<int> ids;
    for (const auto& name : names) {
        auto t = tokenizer.encode(name);
        t.resize(static_cast<std::size_t>(tokens_per_stain), filler);
        ids.insert(ids.end(), t.begin(), t.end());
    }
    ad::NoGradGuard no_grad;
    return text.embed_ids(ids).value();
}

Tensor interpolation_weights(int levels, const std::vector<int>& anchors) {
    if (anchors.size() < 2) throw std::invalid_argument("interpolation needs at least two anchors");
    if (anchors.front() != 1 || anchors.back() != levels)
        throw std::invalid_argument("anchors must span [1, " + std::to_string(levels) + "]");
    for (std::size_t j = 1; j < anchors.size(); ++j)
        if (anchors[j] <= anchors[j - 1]) throw std::invalid_argument("anchors must be strictly increasing");

    const int base = static_cast<int>(anchors.size());
    Tensor w({levels, base}, 0.0);
    for (int k = 1; k <= levels; ++k) {
        std::size_t j = 0;
        while (j + 1 < anchors.size() && anchors[j + 1] < k) ++j;
        // anchors[j] <= k <= anchors[j+1]
        const double lo = anchors[j];
        const double hi = anchors[j + 1];
        const std::size_t row = static_cast<std::size_t>(k - 1) * base;
        if (k == anchors[j + 1]) {
            w[row + j + 1] = 1.0;
        } else if (k == anchors[j]) {
            w[row + j] = 1.0;
        } else {
            w[row + j] = (hi - k) / (hi - lo);
            w[row + j + 1] = (k - lo) / (hi - lo);
        }
    }
    return w;
}

RankSpace::RankSpace(int levels, std::vector<int> anchors, int rank_tokens, int token_dim, int hidden, Rng& rng)
    : levels_(levels), anchors_(std::move(anchors)), rank_tokens_(rank_tokens), token_dim_(token_dim) {
    weights_ = interpolation_weights(levels_, anchors_);
    std::normal_distribution<double> dist(0.0, 0.02);
    Tensor base({num_base() * rank_tokens, token_dim});
    for (auto& v : base.values()) v = dist(rng);
    base_ = ad::leaf(std::move(base), true);

    Tensor w1({2 * token_dim, hidden});
    std::normal_distribution<double> w1_dist(0.0, 1.0 / std::sqrt(2.0 * token_dim));
    for (auto& v : w1.values()) v = w1_dist(rng);
    w1_ = ad::leaf(std::move(w1), true);
    b1_ = ad::leaf(Tensor({hidden}, 0.0), true);
    w2_ = ad::leaf(Tensor({hidden, token_dim}, 0.0), true);
    b2_ = ad::leaf(Tensor({token_dim}, 0.0), true);
}

ad::Var RankSpace::condition(const ad::Var& stain_tokens) const {
    if (stain_tokens.value().cols() != token_dim_)
        throw std::invalid_argument("condition: stain tokens " + stain_tokens.value().shape_string() + " have the wrong width");
    const int rows = num_base() * rank_tokens_;
    const ad::Var pooled = ad::repeat_rows(ad::mean_rows(stain_tokens), rows);
    const ad::Var joint = ad::concat_cols(base_, pooled);
    const ad::Var delta = ad::linear(ad::gelu(ad::linear(joint, w1_, b1_)), w2_, b2_);
    return ad::add(base_, delta);
}

ad::Var RankSpace::interpolate(const ad::Var& conditioned) const {
    if (conditioned.value().rows() != num_base() * rank_tokens_ || conditioned.value().cols() != token_dim_)
        throw std::invalid_argument("interpolate: expected " + std::to_string(num_base() * rank_tokens_) + " rows of width " +
                                    std::to_string(token_dim_));
    const ad::Var flat = ad::reshape(conditioned, {num_base(), rank_tokens_ * token_dim_});
    const ad::Var mixed = ad::matmul(ad::constant(weights_), flat);
    return ad::reshape(mixed, {levels_ * rank_tokens_, token_dim_});
}

void RankSpace::collect_base(ParameterList& out, const std::string& prefix) const { out.push_back({prefix + "base", base_}); }

void RankSpace::collect_conditioning(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + "fc1.weight", w1_});
    out.push_back({prefix + "fc1.bias", b1_});
    out.push_back({prefix + "fc2.weight", w2_});
    out.push_back({prefix + "fc2.bias", b2_});
}

PromptLayout stain_prompt_layout(int context_length, int stain_tokens) {
    PromptLayout l;
    l.stain_context_begin = 1;
    l.stain_context_length = context_length;
    l.stain_begin = 1 + context_length;
    l.stain_length = stain_tokens;
    l.rank_context_begin = l.rank_begin = l.stain_begin + stain_tokens;
    l.total = l.stain_begin + stain_tokens + 1;
    return l;
}

PromptLayout rank_prompt_layout(int stain_context_length, int stain_tokens, int rank_context_length, int rank_tokens) {
    PromptLayout l;
    l.stain_context_begin = 1;
    l.stain_context_length = stain_context_length;
    l.stain_begin = 1 + stain_context_length;
    l.stain_length = stain_tokens;
    l.rank_context_begin = l.stain_begin + stain_tokens;
    l.rank_context_length = rank_context_length;
    l.rank_begin = l.rank_context_begin + rank_context_length;
    l.rank_length = rank_tokens;
    l.total = l.rank_begin + rank_tokens + 1;
    return l;
}

PromptBatch build_stain_prompts(const TextEncoder& text, const StainTable& table, const ad::Var& context) {
    const int ctx_len = context ? context.value().rows() : 0;
    PromptBatch batch;
    batch.layout = stain_prompt_layout(ctx_len, table.tokens_per_stain());
    batch.count = table.num_stains();
    batch.length = batch.layout.total;
    if (batch.length > text.config().max_length)
        throw std::invalid_argument("stain prompt length " + std::to_string(batch.length) + " exceeds maximum " +
                                    std::to_string(text.config().max_length));
    const ad::Var start = text.embed_ids({Tokenizer::kStart});
    const ad::Var end = text.embed_ids({Tokenizer::kEnd});
    std::vector<ad::Var> parts;
    for (int l = 0; l < table.num_stains(); ++l) {
        parts.push_back(start);
        if (ctx_len > 0) parts.push_back(context);
        parts.push_back(table.tokens(l));
        parts.push_back(end);
    }
    batch.tokens = ad::concat_rows(parts);
    return batch;
}

PromptBatch build_rank_prompts(const TextEncoder& text, const StainTable* table, int stain_id, const PromptContext& context,
                               const ad::Var& ranks, int levels) {
    if (levels <= 0 || ranks.value().rows() % levels != 0)
        throw std::invalid_argument("rank prompts: rank embeddings do not split into " + std::to_string(levels) + " levels");
    const int rank_tokens = ranks.value().rows() / levels;
    const bool with_stain = table != nullptr;
    const int sctx = with_stain && context.stain_context ? context.stain_context.value().rows() : 0;
    const int rctx = context.rank_context ? context.rank_context.value().rows() : 0;
    PromptBatch batch;
    batch.layout = rank_prompt_layout(sctx, with_stain ? table->tokens_per_stain() : 0, rctx, rank_tokens);
    batch.count = levels;
    batch.length = batch.layout.total;
    if (batch.length > text.config().max_length)
        throw std::invalid_argument("rank prompt length " + std::to_string(batch.length) + " exceeds maximum " +
                                    std::to_string(text.config().max_length));
    const ad::Var start = text.embed_ids({Tokenizer::kStart});
    const ad::Var end = text.embed_ids({Tokenizer::kEnd});
    ad::Var stain;
    if (with_stain) stain = table->tokens(stain_id);
    std::vector<ad::Var> parts;
    for (int k = 0; k < levels; ++k) {
        parts.push_back(start);
        if (sctx > 0) parts.push_back(context.stain_context);
        if (with_stain) parts.push_back(stain);
        if (rctx > 0) parts.push_back(context.rank_context);
        parts.push_back(ad::slice_rows(ranks, k * rank_tokens, rank_tokens));
        parts.push_back(end);
    }
    batch.tokens = ad::concat_rows(parts);
    return batch;
}

}  // namespace stainfocus
