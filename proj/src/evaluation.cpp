#include "stainfocus/evaluation.hpp"

#include "stainfocus/encoders.hpp"
#include "stainfocus/focus_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace stainfocus {

Prediction prediction_from_logits(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("prediction needs at least one logit");
    const double top = *std::max_element(logits.begin(), logits.end());
    Prediction p;
    p.probs.resize(logits.size());
    double total = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) total += p.probs[j] = std::exp(logits[j] - top);
    for (std::size_t j = 0; j < logits.size(); ++j) {
        p.probs[j] /= total;
        p.expected += p.probs[j] * static_cast<double>(j);
    }
    p.rank = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    p.expected = std::clamp(p.expected, 0.0, static_cast<double>(logits.size() - 1));
    return p;
}

Prediction decode_ordinal(std::span<const double> head_probs) {
    Prediction p;
    p.probs.assign(head_probs.begin(), head_probs.end());
    for (double h : head_probs) {
        if (h > 0.5) ++p.rank;
        p.expected += h;
    }
    return p;
}

Prediction predict(const RankPredictor& model, const Image& image, int stain_id, int expected_levels) {
    if (expected_levels != model.num_levels())
        throw std::invalid_argument("model predicts " + std::to_string(model.num_levels()) + " levels, request expects " +
                                    std::to_string(expected_levels));
    if (stain_id < 0 || stain_id >= model.num_stains())
        throw std::invalid_argument("stain id " + std::to_string(stain_id) + " is not known to the model");
    const Tensor images = stack_images({&image}, image.height);
    const int ids[] = {stain_id};
    return model.predict_batch(images, ids).front();
}

bool MetricsReport::has_nan() const {
    auto bad = [](double v) { return std::isnan(v); };
    if (bad(accuracy) || bad(plcc) || bad(srcc) || bad(mae)) return true;
    return std::any_of(per_stain.begin(), per_stain.end(), [&](const auto& kv) {
        const auto& m = kv.second;
        return bad(m.accuracy) || bad(m.plcc) || bad(m.srcc) || bad(m.mae);
    });
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <typename F>
double or_nan(F&& f) {
    try {
        return f();
    } catch (const UndefinedCorrelation&) {
        return kNaN;
    }
}

StainMetrics metrics_over(const std::vector<const Prediction*>& preds, const std::vector<double>& labels) {
    StainMetrics m;
    m.count = preds.size();
    std::vector<double> expected;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        expected.push_back(preds[i]->expected);
        if (preds[i]->rank == static_cast<int>(labels[i])) ++hits;
    }
    m.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
    m.mae = mae(expected, labels);
    if (preds.size() >= 2) {
        m.plcc = or_nan([&] { return plcc(expected, labels); });
        m.srcc = or_nan([&] { return srcc(expected, labels); });
    } else {
        m.plcc = m.srcc = kNaN;
    }
    return m;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<Prediction>& predictions, std::span<const int> labels,
                              std::span<const int> stain_ids, const std::vector<std::string>& stain_names) {
    if (predictions.empty()) throw std::invalid_argument("cannot compute metrics on zero predictions");
    if (labels.size() != predictions.size() || stain_ids.size() != predictions.size())
        throw std::invalid_argument("predictions, labels and stain ids differ in length");

    std::vector<const Prediction*> all;
    std::vector<double> all_labels;
    std::map<int, std::pair<std::vector<const Prediction*>, std::vector<double>>> by_stain;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        all.push_back(&predictions[i]);
        all_labels.push_back(labels[i]);
        auto& [p, l] = by_stain[stain_ids[i]];
        p.push_back(&predictions[i]);
        l.push_back(labels[i]);
    }
    const StainMetrics total = metrics_over(all, all_labels);
    MetricsReport report;
    report.accuracy = total.accuracy;
    report.plcc = total.plcc;
    report.srcc = total.srcc;
    report.mae = total.mae;
    report.count = total.count;
    for (const auto& [id, pl] : by_stain) {
        if (id < 0 || id >= static_cast<int>(stain_names.size()))
            throw std::invalid_argument("stain id " + std::to_string(id) + " has no name");
        report.per_stain[stain_names[static_cast<std::size_t>(id)]] = metrics_over(pl.first, pl.second);
    }
    return report;
}

MetricsReport evaluate_samples(const RankPredictor& model, const std::vector<Sample>& samples,
                               const std::vector<std::string>& stain_names, int batch_size) {
    if (samples.empty()) throw std::invalid_argument("evaluation set is empty");
    std::vector<Prediction> predictions;
    std::vector<int> labels, stains;
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<const Image*> images;
        std::vector<int> ids;
        for (std::size_t i = begin; i < end; ++i) {
            const Sample& s = samples[i];
            if (s.rank < 0 || s.rank >= model.num_levels())
                throw std::invalid_argument("label " + std::to_string(s.rank) + " outside the model's " +
                                            std::to_string(model.num_levels()) + " levels");
            images.push_back(&s.image);
            ids.push_back(s.stain_id);
            labels.push_back(s.rank);
            stains.push_back(s.stain_id);
        }
        auto batch = model.predict_batch(stack_images(images, images.front()->height), ids);
        for (auto& p : batch) predictions.push_back(std::move(p));
    }
    MetricsReport report = compute_metrics(predictions, labels, stains, stain_names);
    report.config_digest = model.digest();
    return report;
}

MetricsReport evaluate(const RankPredictor& model, const DatasetManifest& manifest, int batch_size) {
    if (manifest.entries.empty()) throw std::invalid_argument("evaluation manifest is empty");
    return evaluate_samples(model, load_samples(manifest), manifest.stain_vocabulary, batch_size);
}

nlohmann::json to_json(const MetricsReport& report) {
    auto metrics = [](double acc, double plcc_v, double srcc_v, double mae_v, std::size_t n) {
        return nlohmann::json{{"accuracy", acc}, {"plcc", plcc_v}, {"srcc", srcc_v}, {"mae", mae_v}, {"count", n}};
    };
    nlohmann::json j = metrics(report.accuracy, report.plcc, report.srcc, report.mae, report.count);
    j["per_stain"] = nlohmann::json::object();
    for (const auto& [name, m] : report.per_stain) j["per_stain"][name] = metrics(m.accuracy, m.plcc, m.srcc, m.mae, m.count);
    j["config_digest"] = report.config_digest;
    return j;
}

}  // namespace stainfocus
