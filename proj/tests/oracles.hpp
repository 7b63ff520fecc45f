#pragma once

// Test-only reference implementations, kept deliberately independent of the
// library code paths they check: gradients by central finite differences,
// silhouette by direct per-cluster enumeration, softmax by naive summation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "mupfl/nn.hpp"
#include "mupfl/tensor.hpp"

namespace oracle {

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

/// Central finite differences of cross_entropy(forward(params)) over every
/// parameter coordinate.
inline std::vector<double> fd_gradient(const mupfl::nn::ModelSpec& spec,
                                       const mupfl::nn::ModelParams& params,
                                       const mupfl::Tensor& batch,
                                       const std::vector<int>& labels,
                                       const mupfl::Tensor* mask = nullptr,
                                       double eps = 1e-6) {
    auto flat = mupfl::nn::flatten(params);
    std::vector<double> grad(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
        const double keep = flat[i];
        flat[i] = keep + eps;
        const auto up = mupfl::nn::forward(spec, mupfl::nn::unflatten(spec, flat),
                                           batch, mask);
        const double lp = mupfl::nn::cross_entropy(up.logits, labels);
        flat[i] = keep - eps;
        const auto dn = mupfl::nn::forward(spec, mupfl::nn::unflatten(spec, flat),
                                           batch, mask);
        const double lm = mupfl::nn::cross_entropy(dn.logits, labels);
        flat[i] = keep;
        grad[i] = (lp - lm) / (2.0 * eps);
    }
    return grad;
}

/// Worst per-coordinate relative error between analytic and finite-difference
/// gradients.
inline double max_grad_err(const mupfl::nn::ModelSpec& spec,
                           const mupfl::nn::ModelParams& params,
                           const mupfl::Tensor& batch,
                           const std::vector<int>& labels,
                           const mupfl::Tensor* mask = nullptr) {
    const auto analytic =
        mupfl::nn::flatten(mupfl::nn::backward(spec, params, batch, labels, mask).grads);
    const auto fd = fd_gradient(spec, params, batch, labels, mask);
    double worst = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, rel_err(analytic[i], fd[i]));
    return worst;
}

/// Naive row softmax, no max-shift trick.
inline std::vector<double> naive_softmax_row(const std::vector<double>& logits) {
    double sum = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i]);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

/// Silhouette computed straight from per-cluster member lists. Input is a
/// dense n x n distance matrix.
inline double brute_silhouette(const std::vector<int>& labels,
                               const std::vector<double>& dist, std::size_t n) {
    std::set<int> ids(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> same;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) same.push_back(j);
        if (same.empty()) continue;  // singleton: S(i) = 0

        double a = 0.0;
        for (std::size_t j : same) a += dist[i * n + j];
        a /= static_cast<double>(same.size());

        double b = std::numeric_limits<double>::infinity();
        for (int cl : ids) {
            if (cl == labels[i]) continue;
            double sum = 0.0;
            std::size_t cnt = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (labels[j] == cl) {
                    sum += dist[i * n + j];
                    ++cnt;
                }
            b = std::min(b, sum / static_cast<double>(cnt));
        }
        if (std::max(a, b) > 0.0) total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

/// All partitions of {0..n-1} into exactly k non-empty blocks, as label
/// vectors (restricted growth strings).
inline void enumerate_partitions(std::size_t n, int k,
                                 std::vector<std::vector<int>>& out) {
    std::vector<int> labels(n, 0);
    auto rec = [&](auto&& self, std::size_t i, int used) -> void {
        if (i == n) {
            if (used == k) out.push_back(labels);
            return;
        }
        for (int l = 0; l < std::min(used + 1, k); ++l) {
            labels[i] = l;
            self(self, i + 1, std::max(used, l + 1));
        }
    };
    rec(rec, 0, 0);
}

}  // namespace oracle
