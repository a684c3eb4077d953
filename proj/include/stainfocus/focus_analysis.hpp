#pragma once

#include "stainfocus/dataset.hpp"
#include "stainfocus/image.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stainfocus {

// Correlation requested on an input without variance.
class UndefinedCorrelation : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Gradient-energy sharpness: SF = sqrt(RF^2 + CF^2), where RF is the RMS of
// vertical neighbour differences and CF the RMS of horizontal ones.
double spatial_frequency(const Image& image);

double srcc(std::span<const double> a, std::span<const double> b);  // average ranks on ties
double plcc(std::span<const double> a, std::span<const double> b);
double mae(std::span<const double> a, std::span<const double> b);
std::vector<double> average_ranks(std::span<const double> values);

struct BoxStats {
    double q1 = 0, median = 0, q3 = 0;
    double whisker_low = 0, whisker_high = 0;  // extreme points within 1.5 IQR
    double mean = 0, std = 0;
    std::size_t count = 0;
};
BoxStats box_stats(std::vector<double> values);

struct RankBucket {
    int rank = 0;
    double mean = 0;
    double std = 0;  // population std; 0 for singleton buckets
    std::size_t count = 0;
};

struct AnalysisReport {
    std::vector<RankBucket> per_rank_mean_sf;
    std::map<std::string, std::vector<RankBucket>> per_stain_rank_curve;
    std::map<std::string, BoxStats> per_stain_sf;
    // nullopt when a stain covers fewer than two distinct ranks.
    std::map<std::string, std::optional<double>> per_stain_srcc;
    double mean_srcc = 0;
    double std_srcc = 0;
    double mean_abs_srcc = 0;
    double std_abs_srcc = 0;
    std::size_t image_count = 0;
};

struct FocusMeasurement {
    std::string stain;
    int rank = 0;
    double sf = 0;
};

AnalysisReport analyze_measurements(const std::vector<FocusMeasurement>& measurements);
AnalysisReport analyze_dataset(const DatasetManifest& manifest);

nlohmann::json to_json(const AnalysisReport& report);
// rank_curve.csv (stain,rank,mean_sf,std_sf,count; stain "all" for the pooled curve)
// and stain_boxplot.csv (stain,q1,median,q3,whisker_low,whisker_high,mean,std,count,srcc).
void write_analysis_outputs(const AnalysisReport& report, const std::filesystem::path& out_dir);

}  // namespace stainfocus
