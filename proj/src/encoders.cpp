#include "stainfocus/encoders.hpp"

#include <algorithm>
#include <cassert>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace stainfocus {

void set_trainable(const ParameterList& params, bool trainable) {
    for (const auto& p : params) {
        ad::Var v = p.var;
        v.set_requires_grad(trainable);
    }
}

namespace {

ad::Var normal_param(std::vector<int> shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.values()) v = dist(rng);
    return ad::leaf(std::move(t), true);
}

ad::Var filled_param(std::vector<int> shape, double value) { return ad::leaf(Tensor(std::move(shape), value), true); }

}  // namespace

// ---- vision --------------------------------------------------------------

VisionEncoder::VisionEncoder(const VisionConfig& config, Rng& rng) : config_(config) {
    int in = 1;
    for (std::size_t i = 0; i < 4; ++i) {
        const int out = config.channels[i];
        conv_w_[i] = normal_param({out, in, 3, 3}, std::sqrt(2.0 / (in * 9)), rng);
        conv_b_[i] = filled_param({out}, 0.0);
        in = out;
    }
    proj_w_ = normal_param({in, config.embed_dim}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    proj_b_ = filled_param({config.embed_dim}, 0.0);
}

ad::Var VisionEncoder::features(const ad::Var& images) const {
    const auto& shape = images.value().shape();
    if (shape.size() != 4 || shape[1] != 1 || shape[2] != config_.image_size || shape[3] != config_.image_size)
        throw std::invalid_argument("vision encoder expects [B,1," + std::to_string(config_.image_size) + "," +
                                    std::to_string(config_.image_size) + "], got " + images.value().shape_string());
    ad::Var x = ad::scale(ad::shift(images, -0.25), 4.0);
    for (std::size_t i = 0; i < 4; ++i) x = ad::gelu(ad::conv2d(x, conv_w_[i], conv_b_[i], 2, 1));
    return ad::linear(ad::global_avg_pool(x), proj_w_, proj_b_);
}

ad::Var VisionEncoder::encode(const ad::Var& images) const { return ad::l2_normalize_rows(features(images)); }

void VisionEncoder::collect(ParameterList& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < 4; ++i) {
        out.push_back({prefix + "conv" + std::to_string(i) + ".weight", conv_w_[i]});
        out.push_back({prefix + "conv" + std::to_string(i) + ".bias", conv_b_[i]});
    }
    out.push_back({prefix + "proj.weight", proj_w_});
    out.push_back({prefix + "proj.bias", proj_b_});
}

Tensor stack_images(const std::vector<const Image*>& images, int expected_size) {
    const int b = static_cast<int>(images.size());
    Tensor t({b, 1, expected_size, expected_size});
    const std::size_t area = static_cast<std::size_t>(expected_size) * expected_size;
    for (int i = 0; i < b; ++i) {
        const Image& img = *images[static_cast<std::size_t>(i)];
        if (img.height != expected_size || img.width != expected_size)
            throw std::invalid_argument("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                                        ", encoder expects " + std::to_string(expected_size) + "x" + std::to_string(expected_size));
        std::copy(img.pixels.begin(), img.pixels.end(), t.data() + static_cast<std::size_t>(i) * area);
    }
    return t;
}

std::vector<double> encode_image(const VisionEncoder& encoder, const Image& image) {
    ad::NoGradGuard no_grad;
    const ad::Var v = encoder.encode(ad::constant(stack_images({&image}, encoder.config().image_size)));
    return v.value().storage();
}

// ---- text ----------------------------------------------------------------

Tokenizer::Tokenizer(int vocab_size) : vocab_size_(vocab_size) {
    words_ = {"a",      "an",     "the",    "image",     "fluorescence", "fluorescent", "microscopy", "stained",
              "with",   "stain",  "focus",  "level",     "of",           "photo",       "cell",       "tissue",
              "nuclei", "nucleus", "dye",   "channel",   "blurred",      "sharp",       "in",         "out",
              "hoechst", "dapi",  "alexa",  "488",       "555",          "568",         "594",        "647",
              "cy3",    "cy5",    "fitc",   "tritc",     "gfp",          "rfp",         "phalloidin", "brain",
              "lung",   "liver",  "0",      "1",         "2",            "3",           "4",          "5",
              "6",      "7",      "8",      "9"};
    if (vocab_size_ < static_cast<int>(words_.size()) + 3 + 64)
        throw std::invalid_argument("tokenizer vocabulary too small");
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        const auto it = std::find(words_.begin(), words_.end(), word);
        if (it != words_.end()) {
            ids.push_back(3 + static_cast<int>(it - words_.begin()));
        } else {
            const int first_hashed = 3 + static_cast<int>(words_.size());
            ids.push_back(first_hashed + static_cast<int>(fnv1a(word) % static_cast<std::uint64_t>(vocab_size_ - first_hashed)));
        }
        word.clear();
    };
    // letters and digits form separate words: "alexa488" -> "alexa", "488"
    bool in_digits = false;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalpha(u) || std::isdigit(u)) {
            const bool digit = std::isdigit(u) != 0;
            if (!word.empty() && digit != in_digits) flush();
            in_digits = digit;
            word += static_cast<char>(std::tolower(u));
        } else {
            flush();
        }
    }
    flush();
    return ids;
}

TransformerBlock::TransformerBlock(int width, int hidden, int heads_, Rng& rng) : heads(heads_) {
    const double s = 1.0 / std::sqrt(static_cast<double>(width));
    ln1_g = filled_param({width}, 1.0);
    ln1_b = filled_param({width}, 0.0);
    wq = normal_param({width, width}, s, rng);
    bq = filled_param({width}, 0.0);
    wk = normal_param({width, width}, s, rng);
    bk = filled_param({width}, 0.0);
    wv = normal_param({width, width}, s, rng);
    bv = filled_param({width}, 0.0);
    wo = normal_param({width, width}, s, rng);
    bo = filled_param({width}, 0.0);
    ln2_g = filled_param({width}, 1.0);
    ln2_b = filled_param({width}, 0.0);
    w1 = normal_param({width, hidden}, s, rng);
    b1 = filled_param({hidden}, 0.0);
    w2 = normal_param({hidden, width}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    b2 = filled_param({width}, 0.0);
}

ad::Var TransformerBlock::forward(const ad::Var& x, int sequences, int length, bool causal) const {
    const ad::Var h = ad::layer_norm(x, ln1_g, ln1_b);
    const ad::Var att = ad::attention(ad::linear(h, wq, bq), ad::linear(h, wk, bk), ad::linear(h, wv, bv), sequences, length,
                                      heads, causal);
    const ad::Var x1 = ad::add(x, ad::linear(att, wo, bo));
    const ad::Var h2 = ad::layer_norm(x1, ln2_g, ln2_b);
    return ad::add(x1, ad::linear(ad::gelu(ad::linear(h2, w1, b1)), w2, b2));
}

void TransformerBlock::collect(ParameterList& out, const std::string& prefix) const {
    const std::pair<const char*, const ad::Var*> items[] = {
        {"ln1.gamma", &ln1_g}, {"ln1.beta", &ln1_b}, {"attn.q.weight", &wq}, {"attn.q.bias", &bq},
        {"attn.k.weight", &wk}, {"attn.k.bias", &bk}, {"attn.v.weight", &wv}, {"attn.v.bias", &bv},
        {"attn.out.weight", &wo}, {"attn.out.bias", &bo}, {"ln2.gamma", &ln2_g}, {"ln2.beta", &ln2_b},
        {"mlp.fc1.weight", &w1}, {"mlp.fc1.bias", &b1}, {"mlp.fc2.weight", &w2}, {"mlp.fc2.bias", &b2}};
    for (const auto& [name, var] : items) out.push_back({prefix + name, *var});
}

TextEncoder::TextEncoder(const TextConfig& config, Rng& rng) : config_(config) {
    token_embedding_ = normal_param({config.vocab_size, config.token_dim}, 0.02, rng);
    positional_ = normal_param({config.max_length, config.token_dim}, 0.01, rng);
    for (int i = 0; i < config.layers; ++i) layers_.emplace_back(config.token_dim, config.mlp_hidden, config.heads, rng);
    ln_g_ = filled_param({config.token_dim}, 1.0);
    ln_b_ = filled_param({config.token_dim}, 0.0);
    projection_ = normal_param({config.token_dim, config.embed_dim}, 1.0 / std::sqrt(static_cast<double>(config.token_dim)), rng);
}

ad::Var TextEncoder::embed_ids(const std::vector<int>& ids) const {
    for (int id : ids)
        if (id < 0 || id >= config_.vocab_size) throw std::invalid_argument("token id " + std::to_string(id) + " out of vocabulary");
    return ad::gather_rows(token_embedding_, ids);
}

ad::Var TextEncoder::run(const ad::Var& seq, int sequences, int length) const {
    if (length > config_.max_length)
        throw std::invalid_argument("token sequence of length " + std::to_string(length) + " exceeds the maximum of " +
                                    std::to_string(config_.max_length) + " by " + std::to_string(length - config_.max_length));
    if (seq.value().rows() != sequences * length || seq.value().cols() != config_.token_dim)
        throw std::invalid_argument("text encoder input " + seq.value().shape_string() + " does not match " +
                                    std::to_string(sequences) + " sequences of length " + std::to_string(length));
    ad::Var x = ad::add_tiled(seq, ad::slice_rows(positional_, 0, length));
    for (const auto& layer : layers_) x = layer.forward(x, sequences, length, true);
    return ad::layer_norm(x, ln_g_, ln_b_);
}

ad::Var TextEncoder::pool_project(const ad::Var& hidden, int sequences, int length) const {
    std::vector<int> eos(static_cast<std::size_t>(sequences));
    for (int s = 0; s < sequences; ++s) eos[static_cast<std::size_t>(s)] = s * length + length - 1;
    return ad::l2_normalize_rows(ad::matmul(ad::gather_rows(hidden, eos), projection_));
}

void TextEncoder::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + "token_embedding", token_embedding_});
    out.push_back({prefix + "positional", positional_});
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + "layer" + std::to_string(i) + ".");
    out.push_back({prefix + "ln_final.gamma", ln_g_});
    out.push_back({prefix + "ln_final.beta", ln_b_});
    out.push_back({prefix + "projection", projection_});
}

Adapter::Adapter(int width, int hidden, int heads, Rng& rng) : block_(width, hidden, heads, rng) {}

ad::Var Adapter::apply(const ad::Var& hidden, int sequences, int length) const {
    return block_.forward(hidden, sequences, length, false);
}

void Adapter::collect(ParameterList& out, const std::string& prefix) const { block_.collect(out, prefix); }

ad::Var encode_tokens(const TextEncoder& text, const Adapter* adapter, const ad::Var& seq, int sequences, int length) {
    ad::Var hidden = text.run(seq, sequences, length);
    if (adapter) hidden = adapter->apply(hidden, sequences, length);
    return text.pool_project(hidden, sequences, length);
}

ad::Var cosine_logits(const ad::Var& image_embeddings, const ad::Var& text_embeddings, const ad::Var& logit_scale) {
    if (image_embeddings.value().cols() != text_embeddings.value().cols())
        throw std::invalid_argument("cosine_logits: embedding widths differ");
#ifndef NDEBUG
    for (const Tensor* t : {&image_embeddings.value(), &text_embeddings.value()})
        for (int r = 0; r < t->rows(); ++r) assert(std::abs(t->matrix().row(r).norm() - 1.0) < 1e-6 && "rows must be unit norm");
#endif
    return ad::mul_scalar(ad::matmul_nt(image_embeddings, text_embeddings), logit_scale);
}

nlohmann::json to_json(const VisionConfig& c) {
    return {{"image_size", c.image_size}, {"channels", c.channels}, {"embed_dim", c.embed_dim}};
}

nlohmann::json to_json(const TextConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"token_dim", c.token_dim}, {"embed_dim", c.embed_dim}, {"layers", c.layers},
            {"heads", c.heads},           {"mlp_hidden", c.mlp_hidden}, {"max_length", c.max_length}};
}

VisionConfig vision_config_from_json(const nlohmann::json& j) {
    VisionConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.channels = j.at("channels").get<std::array<int, 4>>();
    c.embed_dim = j.at("embed_dim").get<int>();
    return c;
}

TextConfig text_config_from_json(const nlohmann::json& j) {
    TextConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.max_length = j.at("max_length").get<int>();
    return c;
}

}  // namespace stainfocus
