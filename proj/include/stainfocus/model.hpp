#pragma once

#include "stainfocus/encoders.hpp"
#include "stainfocus/evaluation.hpp"
#include "stainfocus/prompting.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace stainfocus {

// Ablation ladder rungs.
//   A  rank prompts only, no stain segment
//   B  stain segment from the stain-name embeddings, frozen, no grounding stage
//   C  stain segment trainable during ranking only, no grounding stage
//   D  grounded stain segment (stage 1), frozen during ranking
//   E  D plus stain-conditioned rank embeddings
enum class Variant { A, B, C, D, E };

Variant parse_variant(const std::string& text);
std::string variant_name(Variant v);
[[nodiscard]] bool needs_grounding(Variant v) noexcept;

struct ModelConfig {
    VisionConfig vision;
    TextConfig text;
    int adapter_hidden = 128;
    int adapter_heads = 4;
    std::vector<std::string> stains;
    int num_levels = 10;
    int tokens_per_stain = 2;
    int rank_tokens = 2;
    std::vector<int> anchors;  // 1-based; empty means {1, K}
    int cond_hidden = 64;
    std::string stain_context = "a fluorescence image stained with";
    std::string rank_context = "with focus level";
    double logit_scale_init = 2.659260036932778;  // ln(1/0.07)
    double logit_scale_max = 4.605170185988092;   // ln(100)
    Variant variant = Variant::E;
    std::uint64_t seed = 0;

    void validate() const;
    [[nodiscard]] std::vector<int> resolved_anchors() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// D=8, K=4, two stains, 16x16 images: small enough for finite differences.
ModelConfig micro_model_config();

class StainRankModel final : public RankPredictor {
public:
    explicit StainRankModel(const ModelConfig& config);

    [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
    [[nodiscard]] Variant variant() const noexcept { return config_.variant; }
    // Switching rungs is allowed until the ranking stage has run.
    void set_variant(Variant v);
    [[nodiscard]] int completed_stage() const noexcept { return completed_stage_; }
    void mark_stage_completed(int stage);

    // Every parameter under its stable name.
    [[nodiscard]] ParameterList parameters() const;
    // Names updated by a stage for the current variant.
    [[nodiscard]] std::set<std::string> update_set(int stage) const;
    // Marks exactly update_set(stage) trainable and returns those parameters.
    ParameterList configure_stage(int stage);

    [[nodiscard]] ad::Var logit_scale() const;  // exp(min(p, max))
    [[nodiscard]] ad::Var encode_images(const ad::Var& images) const;
    // Unit-norm stain prompt embeddings [L, D].
    [[nodiscard]] ad::Var stain_text_embeddings() const;
    [[nodiscard]] ad::Var stain_logits(const ad::Var& image_embeddings) const;
    // The K interpolated rank embeddings fed into the prompts of one stain.
    [[nodiscard]] ad::Var rank_tokens_for(int stain_id) const;
    // Unit-norm rank prompt embeddings [K, D] for one stain.
    [[nodiscard]] ad::Var rank_text_embeddings(int stain_id) const;
    // [B, K] scaled rank logits, each row against its own stain's prompts.
    [[nodiscard]] ad::Var rank_logits(const ad::Var& image_embeddings, std::span<const int> stain_ids) const;

    // Inference path with per-stain caching of rank prompt embeddings.
    [[nodiscard]] Tensor rank_logits_inference(const Tensor& images, std::span<const int> stain_ids) const;
    void invalidate_cache() const { cache_.clear(); }
    [[nodiscard]] bool cached(int stain_id) const { return cache_.count(stain_id) != 0; }

    [[nodiscard]] int num_levels() const override { return config_.num_levels; }
    [[nodiscard]] int num_stains() const override { return static_cast<int>(config_.stains.size()); }
    [[nodiscard]] std::vector<Prediction> predict_batch(const Tensor& images, std::span<const int> stain_ids) const override;
    [[nodiscard]] std::string digest() const override;

    void save(const std::filesystem::path& path) const;
    static StainRankModel load(const std::filesystem::path& path);

    [[nodiscard]] const Tokenizer& tokenizer() const noexcept { return tokenizer_; }
    [[nodiscard]] const VisionEncoder& vision() const noexcept { return vision_; }
    [[nodiscard]] const TextEncoder& text() const noexcept { return text_; }
    [[nodiscard]] const Adapter& adapter() const noexcept { return adapter_; }
    [[nodiscard]] const StainTable& stain_table() const noexcept { return stains_; }
    [[nodiscard]] const RankSpace& rank_space() const noexcept { return ranks_; }
    [[nodiscard]] const PromptContext& context() const noexcept { return context_; }
    [[nodiscard]] bool uses_adapter_for_ranks() const noexcept;
    [[nodiscard]] bool uses_stain_segment() const noexcept { return config_.variant != Variant::A; }
    [[nodiscard]] bool uses_conditioning() const noexcept { return config_.variant == Variant::E; }

private:
    [[nodiscard]] int prompt_stain(int stain_id) const;

    ModelConfig config_;
    int completed_stage_ = 0;
    Tokenizer tokenizer_;
    VisionEncoder vision_;
    TextEncoder text_;
    Adapter adapter_;
    StainTable stains_;
    RankSpace ranks_;
    PromptContext context_;
    ad::Var logit_scale_param_;
    mutable std::map<int, Tensor> cache_;
};

}  // namespace stainfocus
