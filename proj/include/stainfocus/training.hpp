#pragma once

#include "stainfocus/dataset.hpp"
#include "stainfocus/evaluation.hpp"
#include "stainfocus/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stainfocus {

struct TrainConfig {
    int stage1_epochs = 10;
    int stage2_epochs = 100;
    int batch_size = 32;
    double stage1_lr = 1e-3;
    double stage2_lr = 5e-4;
    double alpha = 1.0;  // cross-entropy weight
    double beta = 1.0;   // ordinal KL weight
    double kl_temperature = 1.0;
    bool stage1_kl = true;
    int baseline_epochs = 30;
    double baseline_lr = 1e-3;
    bool augment = true;  // random flips/transposes of training images (stage 2, baselines)
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);

enum class BaselineKind { CE, OE };
std::string baseline_name(BaselineKind k);
BaselineKind parse_baseline(const std::string& text);

// ---- losses ----------------------------------------------------------------

// Mean over rows of -log softmax(logits)[label].
ad::Var ce_loss(const ad::Var& logits, std::span<const int> labels);
// q_k proportional to exp(-|k - r| / tau).
std::vector<double> ordinal_target(int levels, int rank, double tau);
// q_l proportional to exp(-[l != s] / tau): label smoothing over unordered classes.
std::vector<double> stain_target(int stains, int stain, double tau);
// Mean over rows of KL(target_b || softmax(logits_b)).
ad::Var kl_loss(const ad::Var& logits, const Tensor& targets);
ad::Var ordinal_kl_loss(const ad::Var& logits, std::span<const int> ranks, double tau);

// alpha * CE + beta * KL on stain logits (stage 1) or rank logits (stage 2).
ad::Var stage1_loss(const StainRankModel& model, const ad::Var& image_embeddings, std::span<const int> stain_ids,
                    const TrainConfig& cfg);
ad::Var stage2_loss(const StainRankModel& model, const ad::Var& images, std::span<const int> stain_ids,
                    std::span<const int> ranks, const TrainConfig& cfg);

// ---- training --------------------------------------------------------------

struct EpochRecord {
    int stage = 0;  // 1, 2, or 0 for baselines
    int epoch = 0;
    double loss = 0;
    double train_accuracy = 0;
    std::optional<double> val_accuracy;
    std::optional<double> val_mae;
    double lr = 0;
};

nlohmann::json to_json(const EpochRecord& r);

struct StageResult {
    std::vector<EpochRecord> log;
    std::vector<double> step_losses;
};

// Stage 1 trains stain tokens and the adapter against stain labels; the vision
// encoder is frozen, so image embeddings are computed once up front.
StageResult stage1_train(StainRankModel& model, const std::vector<Sample>& train, const std::vector<Sample>* val,
                         const TrainConfig& cfg);
double stain_accuracy(const StainRankModel& model, const std::vector<Sample>& samples);

// Stage 2 trains the per-variant update set against rank labels.
StageResult stage2_train(StainRankModel& model, const std::vector<Sample>& train, const std::vector<Sample>* val,
                         const TrainConfig& cfg);

// Vision encoder with a K-way softmax head (CE) or K-1 cumulative sigmoid heads (OE).
class BaselineModel final : public RankPredictor {
public:
    BaselineModel(BaselineKind kind, const VisionConfig& vision, int levels, int stains, std::uint64_t seed);

    [[nodiscard]] BaselineKind kind() const noexcept { return kind_; }
    [[nodiscard]] ad::Var head_logits(const ad::Var& images) const;
    [[nodiscard]] ParameterList parameters() const;

    [[nodiscard]] int num_levels() const override { return levels_; }
    [[nodiscard]] int num_stains() const override { return stains_; }
    [[nodiscard]] std::vector<Prediction> predict_batch(const Tensor& images, std::span<const int> stain_ids) const override;
    [[nodiscard]] std::string digest() const override;

    void save(const std::filesystem::path& path) const;
    static BaselineModel load(const std::filesystem::path& path);

private:
    BaselineKind kind_;
    int levels_;
    int stains_;
    VisionEncoder vision_;
    ad::Var head_w_, head_b_;
};

StageResult baseline_train(BaselineModel& model, const std::vector<Sample>& train, const std::vector<Sample>* val,
                           const TrainConfig& cfg);

// ---- ablation ladder ---------------------------------------------------------

struct AblationRun {
    std::string tag;  // "A".."E", "CE", "OE"
    std::uint64_t seed = 0;
    MetricsReport metrics;
};

struct AblationRow {
    std::string tag;
    std::map<std::string, std::pair<double, double>> stats;  // metric -> (mean, population std)
    std::vector<AblationRun> runs;
};

struct AblationTable {
    std::vector<AblationRow> rows;
};

// Called after every finished run, e.g. to report progress.
using AblationObserver = std::function<void(const AblationRun&)>;

// Trains each tag once per seed on `train`, evaluates on `test`. Tags are
// variants A-E or baselines CE/OE.
AblationTable run_ablation_ladder(const std::vector<Sample>& train, const std::vector<Sample>& test,
                                  const ModelConfig& base_model, const TrainConfig& cfg, const std::vector<std::string>& tags,
                                  const std::vector<std::uint64_t>& seeds, const AblationObserver& observer = {});

nlohmann::json to_json(const AblationTable& table);
std::string ablation_csv(const AblationTable& table);

}  // namespace stainfocus
