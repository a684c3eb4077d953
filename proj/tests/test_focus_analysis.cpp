#include "stainfocus/focus_analysis.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace stainfocus;

TEST_SUITE("analysis.sf") {
    TEST_CASE("constant image has zero SF") { CHECK(spatial_frequency(Image(6, 9, 0.4)) == 0.0); }

    TEST_CASE("worked 2x2 example") {
        Image img(2, 2);
        img.pixels = {0, 1, 2, 3};
        CHECK(spatial_frequency(img) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-15));
    }

    TEST_CASE("matches the double-loop oracle, transpose and homogeneity") {
        std::mt19937_64 rng(5);
        for (int t = 0; t < 100; ++t) {
            const Image img = sftest::random_image(8, 8, rng);
            const double sf = spatial_frequency(img);
            CHECK(std::fabs(sf - sftest::naive_sf(img)) < 1e-12);
            CHECK(std::fabs(spatial_frequency(img.transposed()) - sf) < 1e-12);
            Image scaled = img;
            for (auto& p : scaled.pixels) p *= -2.5;
            CHECK(spatial_frequency(scaled) == doctest::Approx(2.5 * sf).epsilon(1e-12));
            CHECK(sf > 0);
        }
        const Image rect = sftest::random_image(5, 11, rng);
        CHECK(std::fabs(spatial_frequency(rect) - sftest::naive_sf(rect)) < 1e-12);
        CHECK(std::fabs(spatial_frequency(rect.transposed()) - spatial_frequency(rect)) < 1e-12);
    }

    TEST_CASE("too small images are rejected") {
        CHECK_THROWS_AS(spatial_frequency(Image(1, 5)), std::invalid_argument);
        CHECK_THROWS_AS(spatial_frequency(Image(5, 1)), std::invalid_argument);
    }
}

TEST_SUITE("analysis.correlation") {
    TEST_CASE("worked examples") {
        const std::vector<double> a{1, 2, 3}, b{6, 5, 4};
        CHECK(srcc(a, b) == doctest::Approx(-1.0));
        const std::vector<double> c{2, 7, 1, 9};
        CHECK(mae(c, c) == 0.0);
        CHECK(srcc(c, c) == doctest::Approx(1.0));
        const std::vector<double> d{1, 2, 3, 4}, e{1, 3, 2, 4};
        CHECK(srcc(d, e) == doctest::Approx(0.8).epsilon(1e-14));
        CHECK(sftest::rank_difference_spearman(d, e) == doctest::Approx(0.8).epsilon(1e-14));
    }

    TEST_CASE("average ranks on ties") {
        const std::vector<double> v{3, 1, 3, 2};
        const auto r = average_ranks(v);
        CHECK(r == std::vector<double>{3.5, 1, 3.5, 2});
        CHECK(r == sftest::naive_ranks(v));
    }

    TEST_CASE("random sequences agree with brute-force oracles, ties included") {
        std::mt19937_64 rng(8);
        std::uniform_int_distribution<int> small(0, 5);
        std::normal_distribution<double> normal(0, 1);
        for (int t = 0; t < 200; ++t) {
            const int n = 2 + t % 30;
            std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                a[static_cast<std::size_t>(i)] = t % 2 ? small(rng) : normal(rng);
                b[static_cast<std::size_t>(i)] = normal(rng);
            }
            bool a_constant = std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; });
            if (a_constant) continue;
            CHECK(std::fabs(srcc(a, b) - sftest::naive_spearman(a, b)) < 1e-12);
            CHECK(std::fabs(plcc(a, b) - sftest::naive_pearson(a, b)) < 1e-12);
            CHECK(std::fabs(mae(a, b) - sftest::naive_mae(a, b)) < 1e-12);
        }
    }

    TEST_CASE("monotone transforms and affine invariance") {
        std::mt19937_64 rng(9);
        std::normal_distribution<double> normal(0, 1);
        for (int t = 0; t < 50; ++t) {
            std::vector<double> a(20), b(20), a_inc(20), a_dec(20), a_aff(20);
            for (std::size_t i = 0; i < 20; ++i) {
                a[i] = normal(rng);
                b[i] = normal(rng);
                a_inc[i] = std::exp(a[i]);
                a_dec[i] = -a[i] * a[i] * a[i];
                a_aff[i] = 3.0 * a[i] + 7.0;
            }
            CHECK(srcc(a_inc, b) == doctest::Approx(srcc(a, b)).epsilon(1e-12));
            CHECK(srcc(a_dec, b) == doctest::Approx(-srcc(a, b)).epsilon(1e-12));
            CHECK(plcc(a_aff, b) == doctest::Approx(plcc(a, b)).epsilon(1e-12));
            CHECK(std::fabs(srcc(a, b)) <= 1.0);
            CHECK(std::fabs(plcc(a, b)) <= 1.0);
        }
    }

    TEST_CASE("errors") {
        const std::vector<double> a{1, 2, 3}, b{1, 2}, flat{4, 4, 4};
        CHECK_THROWS_AS(srcc(a, b), std::invalid_argument);
        CHECK_THROWS_AS(plcc(a, b), std::invalid_argument);
        CHECK_THROWS_AS(mae(a, b), std::invalid_argument);
        CHECK_THROWS_AS(plcc(flat, a), UndefinedCorrelation);
        CHECK_THROWS_AS(srcc(a, flat), UndefinedCorrelation);
    }
}

TEST_SUITE("analysis.report") {
    TEST_CASE("strictly decreasing SF in rank gives rho = -1") {
        std::vector<FocusMeasurement> m;
        for (int r = 0; r < 10; ++r) m.push_back({"cy3", r, 10.0 - r});
        const auto report = analyze_measurements(m);
        REQUIRE(report.per_stain_srcc.at("cy3").has_value());
        CHECK(*report.per_stain_srcc.at("cy3") == doctest::Approx(-1.0));
    }

    TEST_CASE("two images give one bucket each with zero std") {
        const auto report = analyze_measurements({{"a", 0, 2.0}, {"a", 3, 1.0}});
        REQUIRE(report.per_rank_mean_sf.size() == 2);
        for (const auto& b : report.per_rank_mean_sf) {
            CHECK(b.count == 1);
            CHECK(b.std == 0.0);
        }
    }

    TEST_CASE("stain with one rank is reported undefined, not dropped") {
        const auto report = analyze_measurements({{"a", 0, 2.0}, {"a", 1, 1.0}, {"b", 2, 1.0}, {"b", 2, 3.0}});
        REQUIRE(report.per_stain_srcc.count("b") == 1);
        CHECK_FALSE(report.per_stain_srcc.at("b").has_value());
        const auto j = to_json(report);
        CHECK(j["per_stain_srcc"]["b"].is_null());
    }

    TEST_CASE("per-stain rho and summary match brute-force oracle") {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> noise(0, 1);
        std::vector<FocusMeasurement> m;
        std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by;
        for (const char* s : {"p", "q", "r"})
            for (int i = 0; i < 60; ++i) {
                const int rank = i % 10;
                const double sf = 5.0 - 0.3 * rank + noise(rng);
                m.push_back({s, rank, sf});
                by[s].first.push_back(rank);
                by[s].second.push_back(sf);
            }
        const auto report = analyze_measurements(m);
        std::vector<double> abs_rho;
        for (const auto& [s, v] : by) {
            const double oracle = sftest::naive_spearman(v.first, v.second);
            CHECK(std::fabs(*report.per_stain_srcc.at(s) - oracle) < 1e-12);
            abs_rho.push_back(std::fabs(oracle));
        }
        double mean = 0, var = 0;
        for (double x : abs_rho) mean += x / 3;
        for (double x : abs_rho) var += (x - mean) * (x - mean) / 3;
        CHECK(report.mean_abs_srcc == doctest::Approx(mean).epsilon(1e-12));
        CHECK(report.std_abs_srcc == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
        for (const auto& [s, b] : report.per_stain_sf) {
            CHECK(b.q1 <= b.median);
            CHECK(b.median <= b.q3);
            CHECK(b.whisker_low <= b.q1);
            CHECK(b.whisker_high >= b.q3);
            CHECK(b.std >= 0);
        }
    }

    TEST_CASE("box statistics on a known sample") {
        const auto b = box_stats({1, 2, 3, 4, 5, 6, 7, 8, 100});
        CHECK(b.median == 5);
        CHECK(b.q1 == 3);
        CHECK(b.q3 == 7);
        CHECK(b.whisker_high == 8);
        CHECK(b.whisker_low == 1);
        CHECK(b.count == 9);
    }

    TEST_CASE("outputs are written") {
        const auto dir = sftest::temp_dir("analysis_out");
        write_analysis_outputs(analyze_measurements({{"a", 0, 2.0}, {"a", 1, 1.0}}), dir);
        CHECK(std::filesystem::exists(dir / "report.json"));
        std::ifstream curve(dir / "rank_curve.csv");
        std::string header;
        std::getline(curve, header);
        CHECK(header == "stain,rank,mean_sf,std_sf,count");
        CHECK(std::filesystem::exists(dir / "stain_boxplot.csv"));
    }

    TEST_CASE("empty manifest is rejected") { CHECK_THROWS_AS(analyze_dataset(DatasetManifest{}), std::invalid_argument); }
}
