#include "stainfocus/focus_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

namespace stainfocus {

double spatial_frequency(const Image& image) {
    const int m = image.height;
    const int n = image.width;
    if (m < 2 || n < 2) throw std::invalid_argument("spatial_frequency: image must be at least 2x2");
    double row_energy = 0.0;
    for (int i = 0; i + 1 < m; ++i)
        for (int j = 0; j < n; ++j) {
            const double d = image.at(i + 1, j) - image.at(i, j);
            row_energy += d * d;
        }
    double col_energy = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j + 1 < n; ++j) {
            const double d = image.at(i, j + 1) - image.at(i, j);
            col_energy += d * d;
        }
    const double rf2 = row_energy / (static_cast<double>(m - 1) * n);
    const double cf2 = col_energy / (static_cast<double>(m) * (n - 1));
    return std::sqrt(rf2 + cf2);
}

namespace {

void require_pair(std::span<const double> a, std::span<const double> b, const char* name) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(name) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    if (a.size() < 2) throw std::invalid_argument(std::string(name) + ": need at least two values");
}

double pearson(std::span<const double> a, std::span<const double> b, const char* name) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelation(std::string(name) + ": constant input has no correlation");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

double population_std(const std::vector<double>& v, double mean) {
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / static_cast<double>(v.size()));
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<RankBucket> bucket_by_rank(const std::vector<std::pair<int, double>>& points) {
    std::map<int, std::vector<double>> by_rank;
    for (const auto& [rank, sf] : points) by_rank[rank].push_back(sf);
    std::vector<RankBucket> out;
    for (const auto& [rank, values] : by_rank) {
        const double m = mean_of(values);
        out.push_back({rank, m, population_std(values, m), values.size()});
    }
    return out;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double srcc(std::span<const double> a, std::span<const double> b) {
    require_pair(a, b, "srcc");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    return pearson(ra, rb, "srcc");
}

double plcc(std::span<const double> a, std::span<const double> b) {
    require_pair(a, b, "plcc");
    return pearson(a, b, "plcc");
}

double mae(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("mae: length mismatch");
    if (a.empty()) throw std::invalid_argument("mae: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

BoxStats box_stats(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("box_stats: empty input");
    std::sort(values.begin(), values.end());
    BoxStats s;
    s.count = values.size();
    s.q1 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.5);
    s.q3 = quantile_sorted(values, 0.75);
    const double iqr = s.q3 - s.q1;
    const double lo_fence = s.q1 - 1.5 * iqr;
    const double hi_fence = s.q3 + 1.5 * iqr;
    s.whisker_low = *std::find_if(values.begin(), values.end(), [&](double v) { return v >= lo_fence; });
    s.whisker_high = *std::find_if(values.rbegin(), values.rend(), [&](double v) { return v <= hi_fence; });
    s.mean = mean_of(values);
    s.std = population_std(values, s.mean);
    return s;
}

AnalysisReport analyze_measurements(const std::vector<FocusMeasurement>& measurements) {
    if (measurements.empty()) throw std::invalid_argument("analyze: no measurements");
    AnalysisReport report;
    report.image_count = measurements.size();

    std::vector<std::pair<int, double>> pooled;
    std::map<std::string, std::vector<std::pair<int, double>>> by_stain;
    for (const auto& m : measurements) {
        pooled.emplace_back(m.rank, m.sf);
        by_stain[m.stain].emplace_back(m.rank, m.sf);
    }
    report.per_rank_mean_sf = bucket_by_rank(pooled);

    std::vector<double> rhos;
    for (const auto& [stain, points] : by_stain) {
        report.per_stain_rank_curve[stain] = bucket_by_rank(points);
        std::vector<double> ranks, sfs;
        for (const auto& [r, sf] : points) {
            ranks.push_back(r);
            sfs.push_back(sf);
        }
        report.per_stain_sf[stain] = box_stats(sfs);
        std::set<int> distinct(ranks.begin(), ranks.end());
        std::optional<double> rho;
        if (distinct.size() >= 2) {
            try {
                rho = srcc(ranks, sfs);
            } catch (const UndefinedCorrelation&) {
                rho.reset();  // constant SF across ranks
            }
        }
        report.per_stain_srcc[stain] = rho;
        if (rho) rhos.push_back(*rho);
    }
    if (!rhos.empty()) {
        report.mean_srcc = mean_of(rhos);
        report.std_srcc = population_std(rhos, report.mean_srcc);
        std::vector<double> abs_rhos;
        for (double r : rhos) abs_rhos.push_back(std::abs(r));
        report.mean_abs_srcc = mean_of(abs_rhos);
        report.std_abs_srcc = population_std(abs_rhos, report.mean_abs_srcc);
    }
    return report;
}

AnalysisReport analyze_dataset(const DatasetManifest& manifest) {
    if (manifest.entries.empty()) throw std::invalid_argument("analyze: manifest is empty");
    std::vector<FocusMeasurement> measurements;
    measurements.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries)
        measurements.push_back({e.stain, e.rank, spatial_frequency(read_pgm(manifest.resolve(e)))});
    return analyze_measurements(measurements);
}

namespace {
nlohmann::json buckets_json(const std::vector<RankBucket>& buckets) {
    auto arr = nlohmann::json::array();
    for (const auto& b : buckets) arr.push_back({{"rank", b.rank}, {"mean", b.mean}, {"std", b.std}, {"count", b.count}});
    return arr;
}
}  // namespace

nlohmann::json to_json(const AnalysisReport& report) {
    nlohmann::json j;
    j["image_count"] = report.image_count;
    j["per_rank_mean_sf"] = buckets_json(report.per_rank_mean_sf);
    for (const auto& [stain, curve] : report.per_stain_rank_curve) j["per_stain_rank_curve"][stain] = buckets_json(curve);
    for (const auto& [stain, s] : report.per_stain_sf) {
        j["per_stain_sf"][stain] = {{"q1", s.q1},       {"median", s.median},
                                    {"q3", s.q3},       {"whisker_low", s.whisker_low},
                                    {"whisker_high", s.whisker_high},
                                    {"mean", s.mean},   {"std", s.std},
                                    {"count", s.count}};
    }
    for (const auto& [stain, rho] : report.per_stain_srcc)
        j["per_stain_srcc"][stain] = rho ? nlohmann::json(*rho) : nlohmann::json(nullptr);
    j["summary"] = {{"mean_srcc", report.mean_srcc},
                    {"std_srcc", report.std_srcc},
                    {"mean_abs_srcc", report.mean_abs_srcc},
                    {"std_abs_srcc", report.std_abs_srcc}};
    return j;
}

void write_analysis_outputs(const AnalysisReport& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    {
        std::ofstream out(out_dir / "report.json");
        out << to_json(report).dump(2) << '\n';
    }
    {
        std::ofstream out(out_dir / "rank_curve.csv");
        out << "stain,rank,mean_sf,std_sf,count\n";
        out.precision(17);
        for (const auto& b : report.per_rank_mean_sf) out << "all," << b.rank << ',' << b.mean << ',' << b.std << ',' << b.count << '\n';
        for (const auto& [stain, curve] : report.per_stain_rank_curve)
            for (const auto& b : curve) out << stain << ',' << b.rank << ',' << b.mean << ',' << b.std << ',' << b.count << '\n';
    }
    {
        std::ofstream out(out_dir / "stain_boxplot.csv");
        out << "stain,q1,median,q3,whisker_low,whisker_high,mean,std,count,srcc\n";
        out.precision(17);
        for (const auto& [stain, s] : report.per_stain_sf) {
            const auto& rho = report.per_stain_srcc.at(stain);
            out << stain << ',' << s.q1 << ',' << s.median << ',' << s.q3 << ',' << s.whisker_low << ',' << s.whisker_high
                << ',' << s.mean << ',' << s.std << ',' << s.count << ',' << (rho ? std::to_string(*rho) : std::string("nan"))
                << '\n';
        }
    }
}

}  // namespace stainfocus
