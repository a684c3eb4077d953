#pragma once

// Independent reference implementations and fixtures shared by the test suites.
// Oracles here are deliberately naive and never call the code under test.

#include "stainfocus/autodiff.hpp"
#include "stainfocus/encoders.hpp"
#include "stainfocus/image.hpp"
#include "stainfocus/random.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

namespace sftest {

using stainfocus::Image;

inline Image random_image(int h, int w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(h, w);
    for (auto& p : img.pixels) p = u(rng);
    return img;
}

// Row/column frequency by explicit double loops over neighbour differences.
inline double naive_sf(const Image& img) {
    const int m = img.height, n = img.width;
    double rf = 0, cf = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 1; j < n; ++j) {
            const double d = img.at(i, j) - img.at(i, j - 1);
            cf += d * d;
        }
    for (int i = 1; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const double d = img.at(i, j) - img.at(i - 1, j);
            rf += d * d;
        }
    rf = std::sqrt(rf / (static_cast<double>(m - 1) * n));
    cf = std::sqrt(cf / (static_cast<double>(m) * (n - 1)));
    return std::sqrt(rf * rf + cf * cf);
}

// O(n^2) average ranks: 1 + #smaller + (#equal others) / 2.
inline std::vector<double> naive_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double smaller = 0, equal = 0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            if (j == i) continue;
            if (v[j] < v[i]) smaller += 1;
            else if (v[j] == v[i]) equal += 1;
        }
        r[i] = 1 + smaller + equal / 2;
    }
    return r;
}

inline double naive_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa += a[i];
        sb += b[i];
        saa += a[i] * a[i];
        sbb += b[i] * b[i];
        sab += a[i] * b[i];
    }
    return (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
}

inline double naive_spearman(const std::vector<double>& a, const std::vector<double>& b) {
    return naive_pearson(naive_ranks(a), naive_ranks(b));
}

// 1 - 6 sum d^2 / (n (n^2 - 1)); valid without ties.
inline double rank_difference_spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = naive_ranks(a), rb = naive_ranks(b);
    double d2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    const double n = static_cast<double>(a.size());
    return 1 - 6 * d2 / (n * (n * n - 1));
}

inline double naive_mae(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

struct GradCheck {
    std::string worst_name;
    double worst_rel = 0;   // max over groups of |analytic - numeric| / max(|analytic|, |numeric|)
    double min_norm = 1e300;  // smallest analytic gradient norm among checked groups
};

// Compares backward() against central differences on up to `per_group`
// coordinates of every parameter in `params`. Relative error is measured per
// group on the sampled coordinates as ||a - n|| / max(||a||, ||n||).
inline GradCheck check_gradients(const stainfocus::ParameterList& params, const std::function<stainfocus::ad::Var()>& loss_fn,
                                 int per_group = 12, double h = 1e-6, std::uint64_t seed = 1) {
    for (const auto& p : params) {
        stainfocus::ad::Var v = p.var;
        v.zero_grad();
    }
    stainfocus::ad::backward(loss_fn());
    std::vector<stainfocus::Tensor> analytic;
    for (const auto& p : params) analytic.push_back(p.var.grad());

    GradCheck out;
    std::mt19937_64 rng(seed);
    for (std::size_t g = 0; g < params.size(); ++g) {
        stainfocus::ad::Var var = params[g].var;
        const std::size_t n = var.value().size();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min<std::size_t>(n, static_cast<std::size_t>(per_group)));
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t i : idx) {
            double& x = var.mutable_value()[i];
            const double x0 = x;
            x = x0 + h;
            const double up = loss_fn().value()[0];
            x = x0 - h;
            const double down = loss_fn().value()[0];
            x = x0;
            const double num = (up - down) / (2 * h);
            const double ana = analytic[g][i];
            diff2 += (ana - num) * (ana - num);
            a2 += ana * ana;
            n2 += num * num;
        }
        // Floor keeps structurally zero gradients (e.g. attention key bias) from dividing noise by noise.
        const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-4});
        const double rel = std::sqrt(diff2) / scale;
        if (rel > out.worst_rel) {
            out.worst_rel = rel;
            out.worst_name = params[g].name;
        }
        out.min_norm = std::min(out.min_norm, std::sqrt(a2));
    }
    return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("stainfocus_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace sftest
