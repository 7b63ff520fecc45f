#pragma once

// Biased activation-value dropout. Each client keeps a spatial activation
// map that accumulates batch-mean activations weighted by the step-to-step
// loss difference; positions whose normalized map value falls below the map
// mean (or outside the top-k) are zeroed in later forward passes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mupfl/tensor.hpp"

namespace mupfl::bavd {

enum class SignConvention { AsWritten, Negated };
enum class MaskMode { MeanThreshold, TopK };

struct BavdConfig {
    bool enabled = false;
    SignConvention sign = SignConvention::AsWritten;
    MaskMode mode = MaskMode::MeanThreshold;
    std::size_t top_k = 0;        // required iff mode == TopK
    bool persist_map = false;     // keep the map across communication rounds

    void validate() const {
        if (mode == MaskMode::TopK && top_k == 0)
            throw std::invalid_argument("bavd: top-k mode needs top_k >= 1");
        if (mode == MaskMode::MeanThreshold && top_k != 0)
            throw std::invalid_argument("bavd: top_k is only valid in top-k mode");
    }
};

struct ActivationMap {
    Tensor map;                 // {H, W}
    double last_loss = 0.0;
    bool has_last_loss = false;
    std::size_t iteration = 0;  // completed updates

    explicit ActivationMap(std::vector<std::size_t> spatial = {})
        : map(spatial.empty() ? Tensor() : Tensor::zeros(std::move(spatial))) {}

    void reset() {
        for (auto& v : map.data) v = 0.0;
        last_loss = 0.0;
        has_last_loss = false;
        iteration = 0;
    }
};

/// Loss difference between consecutive batches; the raw coefficient is
/// current minus previous, optionally negated by convention.
inline double psi_coefficient(double loss_curr, double loss_prev,
                              SignConvention sign = SignConvention::AsWritten) {
    const double d = loss_curr - loss_prev;
    return sign == SignConvention::Negated ? -d : d;
}

/// Mean of h over batch and channel dimensions, {H, W}.
inline Tensor reduce_mean_bc(const Tensor& h) {
    if (h.rank() != 4)
        throw std::invalid_argument("reduce_mean_bc: expected B x C x H x W");
    const std::size_t b = h.shape[0], c = h.shape[1], hw = h.shape[2] * h.shape[3];
    Tensor out({h.shape[2], h.shape[3]});
    const double inv = 1.0 / static_cast<double>(b * c);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* slice = h.data.data() + (n * c + ch) * hw;
            for (std::size_t p = 0; p < hw; ++p) out.data[p] += slice[p] * inv;
        }
    return out;
}

/// One recurrence step: the first update seeds the map with the batch/channel
/// mean of h, later updates add psi times that mean.
inline ActivationMap update_activation_map(ActivationMap m, const Tensor& h,
                                           double psi) {
    Tensor mean = reduce_mean_bc(h);
    if (m.map.size() == 0) m.map = Tensor::zeros(mean.shape);
    if (!m.map.same_shape(mean))
        throw std::invalid_argument("activation map: spatial shape mismatch");
    if (m.iteration == 0) {
        m.map = std::move(mean);
    } else {
        for (std::size_t i = 0; i < m.map.size(); ++i)
            m.map.data[i] += psi * mean.data[i];
    }
    ++m.iteration;
    return m;
}

struct NormalizedMap {
    Tensor map_norm;  // min-max scaled to [0, 1]
    double mu = 0.0;  // mean of the normalized map
};

/// Min-max normalization. An all-equal map normalizes to 0.5 everywhere
/// (and mu 0.5), which masks nothing.
inline NormalizedMap normalize_map(const ActivationMap& m) {
    NormalizedMap out;
    out.map_norm = m.map;
    const double lo = m.map.min(), hi = m.map.max();
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (auto& v : out.map_norm.data) v = (v - lo) * inv;
    } else {
        for (auto& v : out.map_norm.data) v = 0.5;
    }
    out.mu = out.map_norm.mean();
    return out;
}

/// 1.0 where map_norm >= mu, else 0.0.
inline Tensor threshold_mask(const Tensor& map_norm, double mu) {
    Tensor mask(map_norm.shape);
    for (std::size_t i = 0; i < map_norm.size(); ++i)
        mask.data[i] = map_norm.data[i] < mu ? 0.0 : 1.0;
    return mask;
}

/// Keeps the k largest map positions (ties resolved toward lower index).
inline Tensor topk_mask(const Tensor& map_norm, std::size_t k) {
    std::vector<std::size_t> order(map_norm.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return map_norm.data[a] > map_norm.data[b];
    });
    Tensor mask = Tensor::zeros(map_norm.shape);
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i)
        mask.data[order[i]] = 1.0;
    return mask;
}

inline Tensor make_mask(const Tensor& map_norm, double mu, const BavdConfig& cfg) {
    return cfg.mode == MaskMode::TopK ? topk_mask(map_norm, cfg.top_k)
                                      : threshold_mask(map_norm, mu);
}

/// Zeroes h wherever the normalized map is below the threshold; the same
/// spatial mask is broadcast over batch and channels. Surviving entries are
/// returned bit-identical.
inline Tensor apply_bavd_mask(const Tensor& h, const Tensor& map_norm, double mu) {
    if (h.rank() != 4)
        throw std::invalid_argument("apply_bavd_mask: expected B x C x H x W");
    if (map_norm.rank() != 2 || map_norm.shape[0] != h.shape[2] ||
        map_norm.shape[1] != h.shape[3])
        throw std::invalid_argument("apply_bavd_mask: spatial shape mismatch");
    Tensor out = h;
    const std::size_t hw = map_norm.size();
    for (std::size_t n = 0; n < h.shape[0]; ++n)
        for (std::size_t c = 0; c < h.shape[1]; ++c) {
            double* slice = out.data.data() + (n * h.shape[1] + c) * hw;
            for (std::size_t p = 0; p < hw; ++p)
                if (map_norm.data[p] < mu) slice[p] = 0.0;
        }
    return out;
}

}  // namespace mupfl::bavd
