#pragma once

// Adaptive cluster-based model update. Client weight deltas and activation
// maps are compared by a mixed cosine similarity; k-means over the
// similarity rows plus silhouette scoring picks the cluster count; deltas
// are averaged within clusters before the size-weighted global average.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mupfl/common.hpp"
#include "mupfl/nn.hpp"
#include "mupfl/rng.hpp"

namespace mupfl::acmu {

struct DeltaVector {
    int client_id = 0;
    std::vector<double> values;      // flat weight delta
    std::vector<double> map_values;  // flattened activation map
};

/// flat(w_t) - flat(w_prev) in the stable flattening order.
inline std::vector<double> delta_weights(const nn::ModelParams& w_t,
                                         const nn::ModelParams& w_prev) {
    const auto a = nn::flatten(w_t);
    const auto b = nn::flatten(w_prev);
    if (a.size() != b.size())
        throw std::invalid_argument("delta_weights: parameter size mismatch");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

/// Cosine similarity; either vector having zero norm yields 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("cosine: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<double> entries;  // n x n, symmetric, diagonal 1
    double sim_mix = 0.5;

    double at(std::size_t i, std::size_t j) const { return entries[i * n + j]; }
    double& at(std::size_t i, std::size_t j) { return entries[i * n + j]; }
};

/// Dist(i,j) = sim_mix * cos(delta_i, delta_j) + (1-sim_mix) * cos(M_i, M_j).
/// Zero-norm deltas or maps contribute 0 to their cosine term and are
/// reported through the warning channel.
inline SimilarityMatrix pairwise_similarity(const std::vector<DeltaVector>& deltas,
                                            double sim_mix,
                                            const WarnFn& warn_fn = {}) {
    if (deltas.size() < 2)
        throw std::invalid_argument("pairwise_similarity: need >= 2 clients");
    if (!(sim_mix >= 0.0 && sim_mix <= 1.0))
        throw std::invalid_argument("pairwise_similarity: sim_mix outside [0, 1]");
    const std::size_t n = deltas.size();
    for (std::size_t i = 1; i < n; ++i) {
        if (deltas[i].values.size() != deltas[0].values.size() ||
            deltas[i].map_values.size() != deltas[0].map_values.size())
            throw std::invalid_argument("pairwise_similarity: ragged delta vectors");
    }
    auto norm2 = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return s;
    };
    for (std::size_t i = 0; i < n; ++i) {
        if (norm2(deltas[i].values) == 0.0)
            warn(warn_fn, "client " + std::to_string(deltas[i].client_id) +
                              ": zero-norm weight delta, cosine term set to 0");
        if (norm2(deltas[i].map_values) == 0.0)
            warn(warn_fn, "client " + std::to_string(deltas[i].client_id) +
                              ": zero-norm activation map, cosine term set to 0");
    }

    SimilarityMatrix sim;
    sim.n = n;
    sim.sim_mix = sim_mix;
    sim.entries.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        sim.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = sim_mix * cosine(deltas[i].values, deltas[j].values) +
                             (1.0 - sim_mix) * cosine(deltas[i].map_values,
                                                      deltas[j].map_values);
            sim.at(i, j) = s;
            sim.at(j, i) = s;
        }
    }
    return sim;
}

/// d(i,j) = 1 - Dist(i,j), the dissimilarity the silhouette consumes.
inline std::vector<double> distance_from_similarity(const SimilarityMatrix& sim) {
    std::vector<double> d(sim.entries.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = 1.0 - sim.entries[i];
    return d;
}

/// Mean silhouette value over all points: S(i) = (b - a) / max(a, b) with
/// a(i) the mean in-cluster distance, b(i) the smallest mean distance to
/// another cluster, and S(i) = 0 for singleton clusters (or when a = b = 0).
inline double silhouette(const std::vector<int>& labels,
                         std::span<const double> dist, std::size_t n) {
    if (labels.size() != n || dist.size() != n * n)
        throw std::invalid_argument("silhouette: size mismatch");
    int k = 0;
    for (int l : labels) {
        if (l < 0) throw std::invalid_argument("silhouette: negative label");
        k = std::max(k, l + 1);
    }
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++count[static_cast<std::size_t>(l)];
    for (std::size_t c = 0; c < count.size(); ++c)
        if (count[c] == 0)
            throw std::invalid_argument("silhouette: empty cluster " + std::to_string(c));
    if (k < 2)
        throw std::invalid_argument("silhouette: needs at least two clusters");

    double total = 0.0;
    std::vector<double> mean_to(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t li = static_cast<std::size_t>(labels[i]);
        if (count[li] == 1) continue;  // singleton scores 0
        std::fill(mean_to.begin(), mean_to.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j)
            mean_to[static_cast<std::size_t>(labels[j])] += dist[i * n + j];
        const double a = mean_to[li] / static_cast<double>(count[li] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < mean_to.size(); ++c)
            if (c != li) b = std::min(b, mean_to[c] / static_cast<double>(count[c]));
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

namespace detail {

// Lloyd's k-means with k-means++ seeding over the rows of the similarity
// matrix, treated as n-dimensional feature vectors. Deterministic for a
// fixed seed: ties go to the lowest index, empty clusters steal the point
// farthest from its centroid.
inline std::vector<int> kmeans_rows(const SimilarityMatrix& sim, std::size_t k,
                                    std::uint64_t seed, std::size_t max_iter = 100) {
    const std::size_t n = sim.n;
    if (k < 1 || k > n) throw std::invalid_argument("kmeans: bad cluster count");
    Rng rng(seed);

    auto row = [&](std::size_t i) {
        return std::span<const double>(sim.entries.data() + i * n, n);
    };
    auto dist2 = [n](std::span<const double> a, std::span<const double> b) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        return s;
    };

    // k-means++ seeding
    std::vector<std::vector<double>> centroids;
    centroids.reserve(k);
    std::vector<char> chosen(n, 0);
    {
        const std::size_t first = static_cast<std::size_t>(rng.below(n));
        centroids.emplace_back(row(first).begin(), row(first).end());
        chosen[first] = 1;
    }
    std::vector<double> d2(n);
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centroids) best = std::min(best, dist2(row(i), c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = n;
        if (total > 0.0) {
            const double r = rng.next_double() * total;
            double cum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (r < cum) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) pick = n - 1;
        } else {
            // all remaining points coincide with a centroid
            for (std::size_t i = 0; i < n; ++i)
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            if (pick == n) pick = static_cast<std::size_t>(rng.below(n));
        }
        chosen[pick] = 1;
        centroids.emplace_back(row(pick).begin(), row(pick).end());
    }

    std::vector<int> labels(n, 0);
    std::vector<std::size_t> count(k, 0);
    auto assign_all = [&]() {
        std::fill(count.begin(), count.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = dist2(row(i), centroids[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = dist2(row(i), centroids[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            labels[i] = static_cast<int>(best);
            ++count[best];
        }
        // repair empty clusters
        for (std::size_t e = 0; e < k; ++e) {
            if (count[e] != 0) continue;
            std::size_t steal = n;
            double worst = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t li = static_cast<std::size_t>(labels[i]);
                if (count[li] <= 1) continue;
                const double d = dist2(row(i), centroids[li]);
                if (d > worst) {
                    worst = d;
                    steal = i;
                }
            }
            if (steal == n) break;  // nothing stealable
            --count[static_cast<std::size_t>(labels[steal])];
            labels[steal] = static_cast<int>(e);
            ++count[e];
        }
    };

    std::vector<int> prev;
    for (std::size_t it = 0; it < max_iter; ++it) {
        assign_all();
        if (labels == prev) break;
        prev = labels;
        for (std::size_t c = 0; c < k; ++c)
            std::fill(centroids[c].begin(), centroids[c].end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = row(i);
            auto& cent = centroids[static_cast<std::size_t>(labels[i])];
            for (std::size_t j = 0; j < n; ++j) cent[j] += r[j];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (count[c] > 0)
                for (auto& v : centroids[c]) v /= static_cast<double>(count[c]);
    }
    return labels;
}

}  // namespace detail

struct ClusterAssignment {
    std::size_t kappa = 1;
    std::vector<int> labels;
    double silhouette = 0.0;
};

/// Runs k-means for every cluster count in [kappa_min, kappa_max], scores
/// each with the silhouette on d = 1 - Dist, and keeps the best; ties go to
/// the smaller count. Fewer than 3 clients degenerate to a single cluster.
inline ClusterAssignment select_clusters(const SimilarityMatrix& sim,
                                         std::size_t kappa_min,
                                         std::size_t kappa_max,
                                         std::uint64_t seed) {
    const std::size_t n = sim.n;
    if (n < 3) return {1, std::vector<int>(n, 0), 0.0};
    if (kappa_min < 2 || kappa_min > kappa_max || kappa_max > n - 1)
        throw std::invalid_argument("select_clusters: need 2 <= kappa_min <= kappa_max <= n-1");

    const auto dist = distance_from_similarity(sim);
    ClusterAssignment best;
    bool have = false;
    for (std::size_t k = kappa_min; k <= kappa_max; ++k) {
        auto labels = detail::kmeans_rows(sim, k, derive_seed(seed, k));
        const double s = silhouette(labels, dist, n);
        if (!have || s > best.silhouette) {
            best = {k, std::move(labels), s};
            have = true;
        }
    }
    return best;
}

/// w~_i = w_prev_i + mean of the deltas in i's cluster. `w_prev` holds one
/// shared broadcast vector or one vector per client.
inline std::vector<std::vector<double>> cluster_aggregate(
    const std::vector<std::vector<double>>& w_prev,
    const std::vector<DeltaVector>& deltas, const std::vector<int>& labels) {
    const std::size_t n = deltas.size();
    if (labels.size() != n)
        throw std::invalid_argument("cluster_aggregate: label count mismatch");
    if (w_prev.empty() || (w_prev.size() != 1 && w_prev.size() != n))
        throw std::invalid_argument("cluster_aggregate: need 1 or n previous weights");
    int k = 0;
    for (int l : labels) {
        if (l < 0) throw std::invalid_argument("cluster_aggregate: negative label");
        k = std::max(k, l + 1);
    }
    const std::size_t dim = deltas.empty() ? 0 : deltas[0].values.size();
    std::vector<std::vector<double>> mean(static_cast<std::size_t>(k),
                                          std::vector<double>(dim, 0.0));
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (deltas[i].values.size() != dim)
            throw std::invalid_argument("cluster_aggregate: ragged deltas");
        auto& m = mean[static_cast<std::size_t>(labels[i])];
        for (std::size_t j = 0; j < dim; ++j) m[j] += deltas[i].values[j];
        ++count[static_cast<std::size_t>(labels[i])];
    }
    for (std::size_t c = 0; c < mean.size(); ++c) {
        if (count[c] == 0)
            throw std::invalid_argument("cluster_aggregate: empty cluster " +
                                        std::to_string(c));
        for (auto& v : mean[c]) v /= static_cast<double>(count[c]);
    }
    std::vector<std::vector<double>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& prev = w_prev.size() == 1 ? w_prev[0] : w_prev[i];
        if (prev.size() != dim)
            throw std::invalid_argument("cluster_aggregate: weight/delta size mismatch");
        const auto& m = mean[static_cast<std::size_t>(labels[i])];
        out[i].resize(dim);
        for (std::size_t j = 0; j < dim; ++j) out[i][j] = prev[j] + m[j];
    }
    return out;
}

inline std::vector<nn::ModelParams> cluster_aggregate(
    const nn::ModelSpec& spec, const nn::ModelParams& broadcast,
    const std::vector<DeltaVector>& deltas, const std::vector<int>& labels) {
    auto flats = cluster_aggregate(std::vector<std::vector<double>>{nn::flatten(broadcast)},
                                   deltas, labels);
    std::vector<nn::ModelParams> out;
    out.reserve(flats.size());
    for (const auto& f : flats) out.push_back(nn::unflatten(spec, f));
    return out;
}

/// Size-weighted mean: sum_i (n_i / n) w~_i, reduced in client order.
inline std::vector<double> global_aggregate(
    const std::vector<std::vector<double>>& w_tilde,
    const std::vector<std::size_t>& sizes) {
    if (w_tilde.empty() || w_tilde.size() != sizes.size())
        throw std::invalid_argument("global_aggregate: size/weight count mismatch");
    std::size_t total = 0;
    for (std::size_t s : sizes) {
        if (s == 0) throw std::invalid_argument("global_aggregate: zero client size");
        total += s;
    }
    std::vector<double> out(w_tilde[0].size(), 0.0);
    for (std::size_t i = 0; i < w_tilde.size(); ++i) {
        if (w_tilde[i].size() != out.size())
            throw std::invalid_argument("global_aggregate: ragged weights");
        const double wgt = static_cast<double>(sizes[i]) / static_cast<double>(total);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += wgt * w_tilde[i][j];
    }
    return out;
}

inline nn::ModelParams global_aggregate(const nn::ModelSpec& spec,
                                        const std::vector<nn::ModelParams>& w_tilde,
                                        const std::vector<std::size_t>& sizes) {
    std::vector<std::vector<double>> flats;
    flats.reserve(w_tilde.size());
    for (const auto& p : w_tilde) flats.push_back(nn::flatten(p));
    return nn::unflatten(spec, global_aggregate(flats, sizes));
}

}  // namespace mupfl::acmu
