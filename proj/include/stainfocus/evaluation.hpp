#pragma once

#include "stainfocus/dataset.hpp"
#include "stainfocus/tensor.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace stainfocus {

struct Prediction {
    int rank = 0;                // decoded class, 0-based
    std::vector<double> probs;   // per-rank probabilities (softmax) or per-head probabilities (ordinal)
    double expected = 0.0;       // continuous estimate used for PLCC/SRCC/MAE
};

// Anything that maps (image, stain) to a focus-rank prediction.
class RankPredictor {
public:
    virtual ~RankPredictor() = default;
    [[nodiscard]] virtual int num_levels() const = 0;
    [[nodiscard]] virtual int num_stains() const = 0;
    // images: [B,1,H,W]
    [[nodiscard]] virtual std::vector<Prediction> predict_batch(const Tensor& images, std::span<const int> stain_ids) const = 0;
    // Identifies the parameters and configuration the predictions came from.
    [[nodiscard]] virtual std::string digest() const = 0;
};

// softmax(logits), argmax and the expectation sum_j p_j * j.
Prediction prediction_from_logits(std::span<const double> logits);
// Count of head probabilities above 0.5; expectation = sum of head probabilities.
Prediction decode_ordinal(std::span<const double> head_probs);

Prediction predict(const RankPredictor& model, const Image& image, int stain_id, int expected_levels);

struct StainMetrics {
    double accuracy = 0, plcc = 0, srcc = 0, mae = 0;
    std::size_t count = 0;
};

struct MetricsReport {
    double accuracy = 0;
    double plcc = 0;  // NaN when undefined (constant predictions or labels)
    double srcc = 0;
    double mae = 0;
    std::size_t count = 0;
    std::map<std::string, StainMetrics> per_stain;
    std::string config_digest;

    [[nodiscard]] bool has_nan() const;
};

// Accuracy on argmax ranks; PLCC/SRCC/MAE on expected ranks.
MetricsReport compute_metrics(const std::vector<Prediction>& predictions, std::span<const int> labels,
                              std::span<const int> stain_ids, const std::vector<std::string>& stain_names);

// Loads every manifest image and evaluates in batches.
MetricsReport evaluate(const RankPredictor& model, const DatasetManifest& manifest, int batch_size = 64);
MetricsReport evaluate_samples(const RankPredictor& model, const std::vector<Sample>& samples,
                               const std::vector<std::string>& stain_names, int batch_size = 64);

nlohmann::json to_json(const MetricsReport& report);

}  // namespace stainfocus
