#include "stainfocus/training.hpp"

#include "stainfocus/checkpoint.hpp"
#include "stainfocus/errors.hpp"
#include "stainfocus/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stainfocus {

void TrainConfig::validate() const {
    if (stage1_epochs < 1 || stage2_epochs < 1 || baseline_epochs < 1) throw ConfigError("epoch counts must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (alpha < 0 || beta < 0) throw ConfigError("loss weights must be non-negative");
    if (!(kl_temperature > 0)) throw ConfigError("KL temperature must be positive");
    if (stage1_lr < 0 || stage2_lr < 0 || baseline_lr < 0) throw ConfigError("learning rates must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"stage1_epochs", c.stage1_epochs}, {"stage2_epochs", c.stage2_epochs}, {"batch_size", c.batch_size},
            {"stage1_lr", c.stage1_lr},         {"stage2_lr", c.stage2_lr},         {"alpha", c.alpha},
            {"beta", c.beta},                   {"kl_temperature", c.kl_temperature}, {"stage1_kl", c.stage1_kl},
            {"baseline_epochs", c.baseline_epochs}, {"baseline_lr", c.baseline_lr}, {"augment", c.augment},
            {"seed", c.seed}};
}

std::string baseline_name(BaselineKind k) { return k == BaselineKind::CE ? "CE" : "OE"; }

BaselineKind parse_baseline(const std::string& text) {
    if (text == "CE" || text == "ce") return BaselineKind::CE;
    if (text == "OE" || text == "oe") return BaselineKind::OE;
    throw ConfigError("unknown baseline '" + text + "' (expected CE or OE)");
}

// ---- losses ----------------------------------------------------------------

ad::Var ce_loss(const ad::Var& logits, std::span<const int> labels) {
    const int rows = logits.value().rows(), cols = logits.value().cols();
    if (static_cast<int>(labels.size()) != rows) throw std::invalid_argument("ce_loss: one label per row required");
    Tensor target({rows, cols}, 0.0);
    for (int b = 0; b < rows; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= cols)
            throw std::invalid_argument("ce_loss: label " + std::to_string(y) + " outside [0, " + std::to_string(cols) + ")");
        target[static_cast<std::size_t>(b) * cols + y] = 1.0;
    }
    return ad::soft_cross_entropy(logits, target);
}

std::vector<double> ordinal_target(int levels, int rank, double tau) {
    if (!(tau > 0)) throw std::invalid_argument("ordinal target: temperature must be positive");
    if (rank < 0 || rank >= levels) throw std::invalid_argument("ordinal target: rank outside [0, K)");
    std::vector<double> q(static_cast<std::size_t>(levels));
    for (int k = 0; k < levels; ++k) q[static_cast<std::size_t>(k)] = std::exp(-std::abs(k - rank) / tau);
    const double z = std::accumulate(q.begin(), q.end(), 0.0);
    for (auto& v : q) v /= z;
    return q;
}

std::vector<double> stain_target(int stains, int stain, double tau) {
    if (!(tau > 0)) throw std::invalid_argument("stain target: temperature must be positive");
    if (stain < 0 || stain >= stains) throw std::invalid_argument("stain target: stain outside [0, L)");
    std::vector<double> q(static_cast<std::size_t>(stains), std::exp(-1.0 / tau));
    q[static_cast<std::size_t>(stain)] = 1.0;
    const double z = std::accumulate(q.begin(), q.end(), 0.0);
    for (auto& v : q) v /= z;
    return q;
}

ad::Var kl_loss(const ad::Var& logits, const Tensor& targets) {
    if (!targets.same_shape(logits.value())) throw std::invalid_argument("kl_loss: target shape differs from logits");
    // KL(q || p) = CE(q, p) - H(q); H(q) is a constant offset.
    double entropy = 0.0;
    for (double q : targets.values())
        if (q > 0) entropy -= q * std::log(q);
    entropy /= logits.value().rows();
    return ad::shift(ad::soft_cross_entropy(logits, targets), -entropy);
}

ad::Var ordinal_kl_loss(const ad::Var& logits, std::span<const int> ranks, double tau) {
    const int rows = logits.value().rows(), cols = logits.value().cols();
    if (static_cast<int>(ranks.size()) != rows) throw std::invalid_argument("ordinal_kl_loss: one rank per row required");
    Tensor target({rows, cols});
    for (int b = 0; b < rows; ++b) {
        const auto q = ordinal_target(cols, ranks[static_cast<std::size_t>(b)], tau);
        std::copy(q.begin(), q.end(), target.data() + static_cast<std::size_t>(b) * cols);
    }
    return kl_loss(logits, target);
}

namespace {

ad::Var combine(const TrainConfig& cfg, const ad::Var& ce, const ad::Var& kl) {
    if (!kl) return ad::scale(ce, cfg.alpha);
    return ad::add(ad::scale(ce, cfg.alpha), ad::scale(kl, cfg.beta));
}

std::pair<ad::Var, ad::Var> stage1_forward(const StainRankModel& model, const ad::Var& image_embeddings,
                                           std::span<const int> stain_ids, const TrainConfig& cfg) {
    const ad::Var logits = model.stain_logits(image_embeddings);
    const ad::Var ce = ce_loss(logits, stain_ids);
    ad::Var kl;
    if (cfg.stage1_kl) {
        const int rows = logits.value().rows(), cols = logits.value().cols();
        Tensor target({rows, cols});
        for (int b = 0; b < rows; ++b) {
            const auto q = stain_target(cols, stain_ids[static_cast<std::size_t>(b)], cfg.kl_temperature);
            std::copy(q.begin(), q.end(), target.data() + static_cast<std::size_t>(b) * cols);
        }
        kl = kl_loss(logits, target);
    }
    return {combine(cfg, ce, kl), logits};
}

std::pair<ad::Var, ad::Var> stage2_forward(const StainRankModel& model, const ad::Var& images, std::span<const int> stain_ids,
                                           std::span<const int> ranks, const TrainConfig& cfg) {
    const ad::Var logits = model.rank_logits(model.encode_images(images), stain_ids);
    return {combine(cfg, ce_loss(logits, ranks), ordinal_kl_loss(logits, ranks, cfg.kl_temperature)), logits};
}

int argmax_hits(const Tensor& logits, std::span<const int> labels) {
    int hits = 0;
    for (int b = 0; b < logits.rows(); ++b) {
        Eigen::Index best = 0;
        logits.matrix().row(b).maxCoeff(&best);
        if (static_cast<int>(best) == labels[static_cast<std::size_t>(b)]) ++hits;
    }
    return hits;
}

struct Batch {
    Tensor images;
    std::vector<int> stains, ranks;
};

// One of the 8 symmetries of the square; labels are invariant because the blur is isotropic.
void apply_dihedral(double* pixels, int n, int op) {
    std::vector<double> src(pixels, pixels + static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            int sy = y, sx = x;
            if (op & 1) sx = n - 1 - sx;
            if (op & 2) sy = n - 1 - sy;
            if (op & 4) std::swap(sx, sy);
            pixels[static_cast<std::size_t>(y) * n + x] = src[static_cast<std::size_t>(sy) * n + sx];
        }
}

Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> idx, Rng* augment) {
    Batch b;
    std::vector<const Image*> images;
    for (std::size_t i : idx) {
        images.push_back(&samples[i].image);
        b.stains.push_back(samples[i].stain_id);
        b.ranks.push_back(samples[i].rank);
    }
    b.images = stack_images(images, images.front()->height);
    if (augment) {
        const int n = b.images.dim(2);
        std::uniform_int_distribution<int> pick(0, 7);
        for (int k = 0; k < b.images.rows(); ++k) apply_dihedral(b.images.data() + static_cast<std::size_t>(k) * n * n, n, pick(*augment));
    }
    return b;
}

// Shuffled mini-batches of index positions; the tail batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, int batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size))
        out.emplace_back(order.begin() + static_cast<long>(i),
                         order.begin() + static_cast<long>(std::min(n, i + static_cast<std::size_t>(batch_size))));
    return out;
}

long total_steps(std::size_t n, int batch_size, int epochs) {
    return static_cast<long>((n + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size)) * epochs;
}

void require_finite(double loss, const char* stage) {
    if (!std::isfinite(loss)) throw std::runtime_error(std::string(stage) + ": loss became non-finite");
}

}  // namespace

ad::Var stage1_loss(const StainRankModel& model, const ad::Var& image_embeddings, std::span<const int> stain_ids,
                    const TrainConfig& cfg) {
    return stage1_forward(model, image_embeddings, stain_ids, cfg).first;
}

ad::Var stage2_loss(const StainRankModel& model, const ad::Var& images, std::span<const int> stain_ids,
                    std::span<const int> ranks, const TrainConfig& cfg) {
    return stage2_forward(model, images, stain_ids, ranks, cfg).first;
}

nlohmann::json to_json(const EpochRecord& r) {
    nlohmann::json j{{"stage", r.stage}, {"epoch", r.epoch}, {"loss", r.loss}, {"train_accuracy", r.train_accuracy}, {"lr", r.lr}};
    j["val_accuracy"] = r.val_accuracy ? nlohmann::json(*r.val_accuracy) : nlohmann::json();
    j["val_mae"] = r.val_mae ? nlohmann::json(*r.val_mae) : nlohmann::json();
    return j;
}

// ---- stage 1 ---------------------------------------------------------------

namespace {

Tensor embed_all(const StainRankModel& model, const std::vector<Sample>& samples) {
    ad::NoGradGuard no_grad;
    const int d = model.config().vision.embed_dim;
    Tensor out({static_cast<int>(samples.size()), d});
    for (std::size_t begin = 0; begin < samples.size(); begin += 64) {
        const std::size_t end = std::min(samples.size(), begin + 64);
        std::vector<const Image*> images;
        for (std::size_t i = begin; i < end; ++i) images.push_back(&samples[i].image);
        const ad::Var v = model.encode_images(ad::constant(stack_images(images, model.config().vision.image_size)));
        std::copy(v.value().data(), v.value().data() + v.value().size(), out.data() + begin * static_cast<std::size_t>(d));
    }
    return out;
}

}  // namespace

double stain_accuracy(const StainRankModel& model, const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("stain accuracy of an empty set");
    ad::NoGradGuard no_grad;
    const Tensor v = embed_all(model, samples);
    const ad::Var logits = model.stain_logits(ad::constant(v));
    std::vector<int> labels;
    for (const auto& s : samples) labels.push_back(s.stain_id);
    return static_cast<double>(argmax_hits(logits.value(), labels)) / static_cast<double>(samples.size());
}

StageResult stage1_train(StainRankModel& model, const std::vector<Sample>& train, const std::vector<Sample>* val,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (!needs_grounding(model.variant()))
        throw ConfigError("variant " + variant_name(model.variant()) + " skips stain grounding; use D or E for stage 1");
    if (model.completed_stage() >= 2) throw ConfigError("stage 1 cannot run after stage 2");
    std::set<int> seen;
    for (const auto& s : train) {
        if (s.stain_id < 0 || s.stain_id >= model.num_stains())
            throw ValidationError("sample stain id " + std::to_string(s.stain_id) + " unknown to the model");
        seen.insert(s.stain_id);
    }
    if (seen.size() < 2) throw ValidationError("stain grounding needs samples from at least two stains");

    RAdam opt(model.configure_stage(1));
    const Tensor features = embed_all(model, train);
    Rng rng(derive_seed(cfg.seed, "stage1"));
    const long total = total_steps(train.size(), cfg.batch_size, cfg.stage1_epochs);
    StageResult result;
    for (int epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
        double loss_sum = 0;
        int hits = 0;
        const auto batches = epoch_batches(train.size(), cfg.batch_size, rng);
        double lr = 0;
        for (const auto& idx : batches) {
            std::vector<int> rows(idx.begin(), idx.end()), ids;
            for (std::size_t i : idx) ids.push_back(train[i].stain_id);
            auto [loss, logits] = stage1_forward(model, ad::gather_rows(ad::constant(features), rows), ids, cfg);
            const double value = loss.value()[0];
            require_finite(value, "stage 1");
            result.step_losses.push_back(value);
            loss_sum += value * static_cast<double>(idx.size());
            hits += argmax_hits(logits.value(), ids);
            opt.zero_grad();
            ad::backward(loss);
            lr = cosine_lr(cfg.stage1_lr, opt.steps(), total);
            opt.step(lr);
        }
        EpochRecord rec;
        rec.stage = 1;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(train.size());
        rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(train.size());
        rec.lr = lr;
        if (val && !val->empty()) rec.val_accuracy = stain_accuracy(model, *val);
        result.log.push_back(rec);
    }
    opt.zero_grad();
    set_trainable(model.parameters(), false);
    model.mark_stage_completed(1);
    model.invalidate_cache();
    return result;
}

// ---- stage 2 ---------------------------------------------------------------

StageResult stage2_train(StainRankModel& model, const std::vector<Sample>& train, const std::vector<Sample>* val,
                         const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw ValidationError("stage 2 needs training samples");
    const Variant v = model.variant();
    if (needs_grounding(v) && model.completed_stage() < 1)
        throw ConfigError("variant " + variant_name(v) + " needs a grounded model; run stage 1 first or load its checkpoint");
    if (!needs_grounding(v) && model.completed_stage() >= 1)
        throw ConfigError("variant " + variant_name(v) + " must start from an ungrounded model");
    for (const auto& s : train)
        if (s.rank < 0 || s.rank >= model.num_levels())
            throw ValidationError("sample rank " + std::to_string(s.rank) + " outside the model's levels");

    RAdam opt(model.configure_stage(2));
    Rng rng(derive_seed(cfg.seed, "stage2"));
    Rng aug(derive_seed(cfg.seed, "stage2.augment"));
    const long total = total_steps(train.size(), cfg.batch_size, cfg.stage2_epochs);
    StageResult result;
    for (int epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
        double loss_sum = 0;
        int hits = 0;
        double lr = 0;
        for (const auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
            const Batch b = make_batch(train, idx, cfg.augment ? &aug : nullptr);
            auto [loss, logits] = stage2_forward(model, ad::constant(b.images), b.stains, b.ranks, cfg);
            const double value = loss.value()[0];
            require_finite(value, "stage 2");
            result.step_losses.push_back(value);
            loss_sum += value * static_cast<double>(idx.size());
            hits += argmax_hits(logits.value(), b.ranks);
            opt.zero_grad();
            ad::backward(loss);
            lr = cosine_lr(cfg.stage2_lr, opt.steps(), total);
            opt.step(lr);
            model.invalidate_cache();
        }
        EpochRecord rec;
        rec.stage = 2;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(train.size());
        rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(train.size());
        rec.lr = lr;
        if (val && !val->empty()) {
            const MetricsReport m = evaluate_samples(model, *val, model.config().stains);
            rec.val_accuracy = m.accuracy;
            rec.val_mae = m.mae;
        }
        result.log.push_back(rec);
    }
    opt.zero_grad();
    set_trainable(model.parameters(), false);
    model.mark_stage_completed(2);
    model.invalidate_cache();
    return result;
}

// ---- baselines -------------------------------------------------------------

BaselineModel::BaselineModel(BaselineKind kind, const VisionConfig& vision, int levels, int stains, std::uint64_t seed)
    : kind_(kind), levels_(levels), stains_(stains) {
    if (levels < 2) throw std::invalid_argument("baseline needs at least two levels");
    Rng vision_rng(derive_seed(seed, "vision"));
    Rng head_rng(derive_seed(seed, "head"));
    vision_ = VisionEncoder(vision, vision_rng);
    const int outputs = kind == BaselineKind::CE ? levels : levels - 1;
    Tensor w({vision.embed_dim, outputs});
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(vision.embed_dim)));
    for (auto& x : w.values()) x = dist(head_rng);
    head_w_ = ad::leaf(std::move(w), true);
    head_b_ = ad::leaf(Tensor({outputs}, 0.0), true);
}

ad::Var BaselineModel::head_logits(const ad::Var& images) const {
    return ad::linear(vision_.features(images), head_w_, head_b_);
}

ParameterList BaselineModel::parameters() const {
    ParameterList out;
    vision_.collect(out, "vision.");
    out.push_back({"head.weight", head_w_});
    out.push_back({"head.bias", head_b_});
    return out;
}

std::vector<Prediction> BaselineModel::predict_batch(const Tensor& images, std::span<const int> stain_ids) const {
    if (images.rows() != static_cast<int>(stain_ids.size())) throw std::invalid_argument("one stain id per image required");
    ad::NoGradGuard no_grad;
    const ad::Var logits = head_logits(ad::constant(images));
    const int cols = logits.value().cols();
    std::vector<Prediction> out;
    for (int b = 0; b < logits.value().rows(); ++b) {
        std::span<const double> row(logits.value().data() + static_cast<std::size_t>(b) * cols, static_cast<std::size_t>(cols));
        if (kind_ == BaselineKind::CE) {
            out.push_back(prediction_from_logits(row));
        } else {
            std::vector<double> probs;
            for (double z : row) probs.push_back(1.0 / (1.0 + std::exp(-z)));
            out.push_back(decode_ordinal(probs));
        }
    }
    return out;
}

std::string BaselineModel::digest() const {
    std::uint64_t h = fnv1a(baseline_name(kind_));
    for (const auto& [name, d] : parameter_digests(parameters())) h = splitmix64(h ^ fnv1a(name) ^ d);
    return hex_digest(h);
}

void BaselineModel::save(const std::filesystem::path& path) const {
    nlohmann::json header{{"kind", "baseline"},       {"baseline", baseline_name(kind_)}, {"vision", to_json(vision_.config())},
                          {"levels", levels_},        {"stains", stains_}};
    write_checkpoint(path, header, parameters());
}

BaselineModel BaselineModel::load(const std::filesystem::path& path) {
    CheckpointData data = read_checkpoint(path);
    if (data.config.value("kind", "") != "baseline") throw ValidationError("checkpoint " + path.string() + " does not hold a baseline");
    BaselineModel model(parse_baseline(data.config.at("baseline").get<std::string>()),
                        vision_config_from_json(data.config.at("vision")), data.config.at("levels").get<int>(),
                        data.config.at("stains").get<int>(), 0);
    assign_parameters(model.parameters(), data.tensors);
    set_trainable(model.parameters(), false);
    return model;
}

StageResult baseline_train(BaselineModel& model, const std::vector<Sample>& train, const std::vector<Sample>* val,
                           const TrainConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw ValidationError("baseline training needs samples");
    const ParameterList params = model.parameters();
    set_trainable(params, true);
    RAdam opt(params);
    Rng rng(derive_seed(cfg.seed, "baseline"));
    Rng aug(derive_seed(cfg.seed, "baseline.augment"));
    const long total = total_steps(train.size(), cfg.batch_size, cfg.baseline_epochs);
    const int levels = model.num_levels();
    StageResult result;
    for (int epoch = 1; epoch <= cfg.baseline_epochs; ++epoch) {
        double loss_sum = 0;
        int hits = 0;
        double lr = 0;
        for (const auto& idx : epoch_batches(train.size(), cfg.batch_size, rng)) {
            const Batch b = make_batch(train, idx, cfg.augment ? &aug : nullptr);
            const ad::Var logits = model.head_logits(ad::constant(b.images));
            ad::Var loss;
            if (model.kind() == BaselineKind::CE) {
                loss = ce_loss(logits, b.ranks);
                hits += argmax_hits(logits.value(), b.ranks);
            } else {
                const int rows = static_cast<int>(idx.size());
                Tensor target({rows, levels - 1}, 0.0);
                for (int r = 0; r < rows; ++r) {
                    int decoded = 0;
                    for (int k = 0; k < levels - 1; ++k) {
                        const std::size_t at = static_cast<std::size_t>(r) * (levels - 1) + k;
                        target[at] = b.ranks[static_cast<std::size_t>(r)] > k ? 1.0 : 0.0;
                        if (logits.value()[at] > 0) ++decoded;
                    }
                    if (decoded == b.ranks[static_cast<std::size_t>(r)]) ++hits;
                }
                loss = ad::binary_cross_entropy_logits(logits, target);
            }
            const double value = loss.value()[0];
            require_finite(value, "baseline");
            result.step_losses.push_back(value);
            loss_sum += value * static_cast<double>(idx.size());
            opt.zero_grad();
            ad::backward(loss);
            lr = cosine_lr(cfg.baseline_lr, opt.steps(), total);
            opt.step(lr);
        }
        EpochRecord rec;
        rec.stage = 0;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(train.size());
        rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(train.size());
        rec.lr = lr;
        if (val && !val->empty()) {
            const MetricsReport m = evaluate_samples(model, *val, std::vector<std::string>(static_cast<std::size_t>(model.num_stains()), ""));
            rec.val_accuracy = m.accuracy;
            rec.val_mae = m.mae;
        }
        result.log.push_back(rec);
    }
    opt.zero_grad();
    set_trainable(params, false);
    return result;
}

// ---- ablation ladder ---------------------------------------------------------

namespace {

const char* const kMetricNames[] = {"accuracy", "plcc", "srcc", "mae"};

double metric_of(const MetricsReport& m, const std::string& name) {
    if (name == "accuracy") return m.accuracy;
    if (name == "plcc") return m.plcc;
    if (name == "srcc") return m.srcc;
    return m.mae;
}

bool is_baseline(const std::string& tag) { return tag == "CE" || tag == "OE"; }

}  // namespace

AblationTable run_ablation_ladder(const std::vector<Sample>& train, const std::vector<Sample>& test,
                                  const ModelConfig& base_model, const TrainConfig& cfg, const std::vector<std::string>& tags,
                                  const std::vector<std::uint64_t>& seeds, const AblationObserver& observer) {
    if (seeds.empty()) throw ConfigError("the ablation ladder needs at least one seed");
    if (tags.empty()) throw ConfigError("the ablation ladder needs at least one variant");
    AblationTable table;
    for (const auto& tag : tags) {
        if (!is_baseline(tag)) (void)parse_variant(tag);
        AblationRow row;
        row.tag = tag;
        for (std::uint64_t seed : seeds) {
            TrainConfig run_cfg = cfg;
            run_cfg.seed = seed;
            AblationRun run;
            run.tag = tag;
            run.seed = seed;
            if (is_baseline(tag)) {
                BaselineModel model(parse_baseline(tag), base_model.vision, base_model.num_levels,
                                    static_cast<int>(base_model.stains.size()), seed);
                baseline_train(model, train, nullptr, run_cfg);
                run.metrics = evaluate_samples(model, test, base_model.stains);
            } else {
                ModelConfig mc = base_model;
                mc.variant = parse_variant(tag);
                mc.seed = seed;
                StainRankModel model(mc);
                if (needs_grounding(mc.variant)) stage1_train(model, train, nullptr, run_cfg);
                stage2_train(model, train, nullptr, run_cfg);
                run.metrics = evaluate_samples(model, test, base_model.stains);
            }
            if (observer) observer(run);
            row.runs.push_back(std::move(run));
        }
        for (const char* metric : kMetricNames) {
            std::vector<double> values;
            for (const auto& r : row.runs) values.push_back(metric_of(r.metrics, metric));
            const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
            double var = 0;
            for (double x : values) var += (x - mean) * (x - mean);
            row.stats[metric] = {mean, std::sqrt(var / static_cast<double>(values.size()))};
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

nlohmann::json to_json(const AblationTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        nlohmann::json r{{"variant", row.tag}, {"seeds", row.runs.size()}};
        for (const auto& [metric, ms] : row.stats) r[metric] = {{"mean", ms.first}, {"std", ms.second}};
        if (table.rows.size() > 1 && i > 0)
            r["accuracy_gain"] = row.stats.at("accuracy").first - table.rows[i - 1].stats.at("accuracy").first;
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& run : row.runs) runs.push_back({{"seed", run.seed}, {"metrics", to_json(run.metrics)}});
        r["runs"] = runs;
        rows.push_back(r);
    }
    nlohmann::json j{{"rows", rows}};
    if (table.rows.size() > 1)
        j["total_accuracy_gain"] = table.rows.back().stats.at("accuracy").first - table.rows.front().stats.at("accuracy").first;
    // Full-scale accuracies (percent) from pretrained backbones on real data; kept for orientation only.
    j["reference"] = {{"accuracy_percent", {{"A", 83.12}, {"D", 84.28}, {"E", 85.21}}},
                      {"reproduced", false},
                      {"note", "published full-scale values; not reproducible with desk-scale random-init encoders"}};
    return j;
}

std::string ablation_csv(const AblationTable& table) {
    std::ostringstream out;
    out.precision(10);
    out << "variant,seeds";
    for (const char* m : kMetricNames) out << ',' << m << "_mean," << m << "_std";
    const bool gains = table.rows.size() > 1;
    if (gains) out << ",accuracy_gain";
    out << '\n';
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        out << row.tag << ',' << row.runs.size();
        for (const char* m : kMetricNames) out << ',' << row.stats.at(m).first << ',' << row.stats.at(m).second;
        if (gains) {
            out << ',';
            if (i > 0) out << row.stats.at("accuracy").first - table.rows[i - 1].stats.at("accuracy").first;
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace stainfocus
