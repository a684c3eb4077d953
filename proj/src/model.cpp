#include "stainfocus/model.hpp"

#include "stainfocus/checkpoint.hpp"
#include "stainfocus/errors.hpp"

#include <algorithm>
#include <cmath>

namespace stainfocus {

Variant parse_variant(const std::string& text) {
    if (text.size() == 1) {
        switch (std::toupper(static_cast<unsigned char>(text[0]))) {
            case 'A': return Variant::A;
            case 'B': return Variant::B;
            case 'C': return Variant::C;
            case 'D': return Variant::D;
            case 'E': return Variant::E;
            default: break;
        }
    }
    throw ConfigError("unknown variant '" + text + "' (expected one of A, B, C, D, E)");
}

std::string variant_name(Variant v) { return std::string(1, static_cast<char>('A' + static_cast<int>(v))); }

bool needs_grounding(Variant v) noexcept { return v == Variant::D || v == Variant::E; }

void ModelConfig::validate() const {
    if (stains.empty()) throw ConfigError("model needs at least one stain");
    if (num_levels < 2) throw ConfigError("model needs at least two focus levels");
    if (tokens_per_stain < 1 || rank_tokens < 1) throw ConfigError("token counts must be positive");
    if (vision.embed_dim != text.embed_dim) throw ConfigError("vision and text embedding widths differ");
    if (text.token_dim % text.heads != 0 || text.token_dim % adapter_heads != 0)
        throw ConfigError("attention heads must divide the token width");
    if (logit_scale_init > logit_scale_max) throw ConfigError("initial logit scale exceeds its clamp");
}

std::vector<int> ModelConfig::resolved_anchors() const {
    return anchors.empty() ? std::vector<int>{1, num_levels} : anchors;
}

nlohmann::json to_json(const ModelConfig& c) {
    return {{"vision", to_json(c.vision)},
            {"text", to_json(c.text)},
            {"adapter_hidden", c.adapter_hidden},
            {"adapter_heads", c.adapter_heads},
            {"stains", c.stains},
            {"num_levels", c.num_levels},
            {"tokens_per_stain", c.tokens_per_stain},
            {"rank_tokens", c.rank_tokens},
            {"anchors", c.resolved_anchors()},
            {"cond_hidden", c.cond_hidden},
            {"stain_context", c.stain_context},
            {"rank_context", c.rank_context},
            {"logit_scale_init", c.logit_scale_init},
            {"logit_scale_max", c.logit_scale_max},
            {"variant", variant_name(c.variant)},
            {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vision = vision_config_from_json(j.at("vision"));
    c.text = text_config_from_json(j.at("text"));
    c.adapter_hidden = j.at("adapter_hidden").get<int>();
    c.adapter_heads = j.at("adapter_heads").get<int>();
    c.stains = j.at("stains").get<std::vector<std::string>>();
    c.num_levels = j.at("num_levels").get<int>();
    c.tokens_per_stain = j.at("tokens_per_stain").get<int>();
    c.rank_tokens = j.at("rank_tokens").get<int>();
    c.anchors = j.at("anchors").get<std::vector<int>>();
    c.cond_hidden = j.at("cond_hidden").get<int>();
    c.stain_context = j.at("stain_context").get<std::string>();
    c.rank_context = j.at("rank_context").get<std::string>();
    c.logit_scale_init = j.at("logit_scale_init").get<double>();
    c.logit_scale_max = j.at("logit_scale_max").get<double>();
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

ModelConfig micro_model_config() {
    ModelConfig c;
    c.vision.image_size = 16;
    c.vision.channels = {2, 3, 3, 4};
    c.vision.embed_dim = 8;
    c.text.vocab_size = 128;
    c.text.token_dim = 8;
    c.text.embed_dim = 8;
    c.text.layers = 1;
    c.text.heads = 2;
    c.text.mlp_hidden = 16;
    c.text.max_length = 24;
    c.adapter_hidden = 16;
    c.adapter_heads = 2;
    c.stains = {"hoechst", "cy3"};
    c.num_levels = 4;
    c.cond_hidden = 8;
    c.stain_context = "stained with";
    c.rank_context = "focus";
    return c;
}

namespace {

ad::Var phrase_tokens(const TextEncoder& text, const Tokenizer& tokenizer, const std::string& phrase) {
    ad::NoGradGuard no_grad;
    return ad::leaf(text.embed_ids(tokenizer.encode(phrase)).value(), true);
}

}  // namespace

StainRankModel::StainRankModel(const ModelConfig& config) : config_(config), tokenizer_(config.text.vocab_size) {
    config_.validate();
    Rng vision_rng(derive_seed(config_.seed, "vision"));
    Rng text_rng(derive_seed(config_.seed, "text"));
    Rng adapter_rng(derive_seed(config_.seed, "adapter"));
    Rng rank_rng(derive_seed(config_.seed, "rank"));
    vision_ = VisionEncoder(config_.vision, vision_rng);
    text_ = TextEncoder(config_.text, text_rng);
    adapter_ = Adapter(config_.text.token_dim, config_.adapter_hidden, config_.adapter_heads, adapter_rng);
    stains_ = StainTable(config_.stains, config_.tokens_per_stain,
                         stain_name_embeddings(text_, tokenizer_, config_.stains, config_.tokens_per_stain));
    ranks_ = RankSpace(config_.num_levels, config_.resolved_anchors(), config_.rank_tokens, config_.text.token_dim,
                       config_.cond_hidden, rank_rng);
    context_.stain_context = phrase_tokens(text_, tokenizer_, config_.stain_context);
    context_.rank_context = phrase_tokens(text_, tokenizer_, config_.rank_context);
    logit_scale_param_ = ad::leaf(Tensor::scalar(config_.logit_scale_init), true);
    set_trainable(parameters(), false);
}

void StainRankModel::set_variant(Variant v) {
    if (completed_stage_ >= 2) throw ConfigError("cannot change the variant of a model that finished the ranking stage");
    config_.variant = v;
    invalidate_cache();
}

void StainRankModel::mark_stage_completed(int stage) { completed_stage_ = std::max(completed_stage_, stage); }

ParameterList StainRankModel::parameters() const {
    ParameterList out;
    vision_.collect(out, "vision.");
    text_.collect(out, "text.");
    adapter_.collect(out, "adapter.");
    out.push_back({"stain.tokens", stains_.embeddings()});
    out.push_back({"context.stain", context_.stain_context});
    out.push_back({"context.rank", context_.rank_context});
    ranks_.collect_base(out, "rank.");
    ranks_.collect_conditioning(out, "rank.cond.");
    out.push_back({"logit_scale", logit_scale_param_});
    return out;
}

std::set<std::string> StainRankModel::update_set(int stage) const {
    std::set<std::string> names;
    auto has_prefix = [](const std::string& s, const char* p) { return s.rfind(p, 0) == 0; };
    for (const auto& [name, var] : parameters()) {
        bool include = false;
        if (stage == 1) {
            include = name == "stain.tokens" || has_prefix(name, "adapter.");
        } else if (stage == 2) {
            include = has_prefix(name, "vision.") || name == "rank.base" || name == "context.rank" ||
                      (name == "context.stain" && uses_stain_segment()) ||
                      (has_prefix(name, "rank.cond.") && uses_conditioning()) ||
                      (name == "stain.tokens" && config_.variant == Variant::C);
        } else {
            throw std::invalid_argument("stage must be 1 or 2");
        }
        if (include) names.insert(name);
    }
    return names;
}

ParameterList StainRankModel::configure_stage(int stage) {
    const auto names = update_set(stage);
    ParameterList trainable;
    for (const auto& p : parameters()) {
        const bool on = names.count(p.name) != 0;
        ad::Var v = p.var;
        v.set_requires_grad(on);
        if (on) trainable.push_back(p);
    }
    invalidate_cache();
    return trainable;
}

ad::Var StainRankModel::logit_scale() const { return ad::exp(ad::clamp_max(logit_scale_param_, config_.logit_scale_max)); }

ad::Var StainRankModel::encode_images(const ad::Var& images) const { return vision_.encode(images); }

ad::Var StainRankModel::stain_text_embeddings() const {
    const PromptBatch batch = build_stain_prompts(text_, stains_, context_.stain_context);
    return encode_tokens(text_, &adapter_, batch.tokens, batch.count, batch.length);
}

ad::Var StainRankModel::stain_logits(const ad::Var& image_embeddings) const {
    return cosine_logits(image_embeddings, stain_text_embeddings(), logit_scale());
}

bool StainRankModel::uses_adapter_for_ranks() const noexcept { return needs_grounding(config_.variant); }

int StainRankModel::prompt_stain(int stain_id) const {
    if (stain_id < 0 || stain_id >= num_stains())
        throw std::invalid_argument("stain id " + std::to_string(stain_id) + " outside [0, " + std::to_string(num_stains()) + ")");
    return uses_stain_segment() ? stain_id : 0;
}

ad::Var StainRankModel::rank_tokens_for(int stain_id) const {
    const ad::Var anchors = uses_conditioning() ? ranks_.condition(stains_.tokens(stain_id)) : ranks_.base();
    return ranks_.interpolate(anchors);
}

ad::Var StainRankModel::rank_text_embeddings(int stain_id) const {
    const int s = prompt_stain(stain_id);
    const PromptBatch batch = build_rank_prompts(text_, uses_stain_segment() ? &stains_ : nullptr, s, context_,
                                                 rank_tokens_for(s), config_.num_levels);
    return encode_tokens(text_, uses_adapter_for_ranks() ? &adapter_ : nullptr, batch.tokens, batch.count, batch.length);
}

ad::Var StainRankModel::rank_logits(const ad::Var& image_embeddings, std::span<const int> stain_ids) const {
    const int blocks = uses_stain_segment() ? num_stains() : 1;
    std::vector<ad::Var> per_stain;
    for (int s = 0; s < blocks; ++s) per_stain.push_back(rank_text_embeddings(s));
    const ad::Var full = cosine_logits(image_embeddings, ad::concat_rows(per_stain), logit_scale());
    std::vector<int> ids;
    for (int id : stain_ids) ids.push_back(prompt_stain(id));
    return ad::gather_blocks(full, ids, config_.num_levels);
}

Tensor StainRankModel::rank_logits_inference(const Tensor& images, std::span<const int> stain_ids) const {
    if (images.rows() != static_cast<int>(stain_ids.size())) throw std::invalid_argument("one stain id per image required");
    ad::NoGradGuard no_grad;
    const ad::Var v = encode_images(ad::constant(images));
    const double scale = logit_scale().value()[0];
    const int k = config_.num_levels;
    Tensor out({images.rows(), k});
    for (int b = 0; b < images.rows(); ++b) {
        const int s = prompt_stain(stain_ids[static_cast<std::size_t>(b)]);
        auto it = cache_.find(s);
        if (it == cache_.end()) it = cache_.emplace(s, rank_text_embeddings(s).value()).first;
        out.matrix().row(b) = scale * (it->second.matrix() * v.value().matrix().row(b).transpose()).transpose();
    }
    return out;
}

std::vector<Prediction> StainRankModel::predict_batch(const Tensor& images, std::span<const int> stain_ids) const {
    const Tensor logits = rank_logits_inference(images, stain_ids);
    std::vector<Prediction> out;
    const int k = config_.num_levels;
    for (int b = 0; b < logits.rows(); ++b)
        out.push_back(prediction_from_logits(std::span<const double>(logits.data() + static_cast<std::size_t>(b) * k, k)));
    return out;
}

std::string StainRankModel::digest() const {
    std::uint64_t h = fnv1a(to_json(config_).dump());
    for (const auto& [name, d] : parameter_digests(parameters())) h = splitmix64(h ^ fnv1a(name) ^ d);
    return hex_digest(h);
}

void StainRankModel::save(const std::filesystem::path& path) const {
    nlohmann::json header{{"kind", "stain_rank"}, {"config", to_json(config_)}, {"completed_stage", completed_stage_}};
    write_checkpoint(path, header, parameters());
}

StainRankModel StainRankModel::load(const std::filesystem::path& path) {
    CheckpointData data = read_checkpoint(path);
    if (data.config.value("kind", "") != "stain_rank")
        throw ValidationError("checkpoint " + path.string() + " does not hold a stain-rank model");
    StainRankModel model(model_config_from_json(data.config.at("config")));
    assign_parameters(model.parameters(), data.tensors);
    model.completed_stage_ = data.config.at("completed_stage").get<int>();
    return model;
}

}  // namespace stainfocus
