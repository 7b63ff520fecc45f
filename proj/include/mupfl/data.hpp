#pragma once

// Datasets and partitioning: synthetic Gaussian-blob generation, the
// exponential long-tail profile, Dirichlet label-skew partitioning across
// clients, and an IDX (MNIST format) loader.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mupfl/rng.hpp"
#include "mupfl/serialize.hpp"
#include "mupfl/tensor.hpp"

namespace mupfl::data {

struct Dataset {
    Tensor samples;            // {N, feature...}
    std::vector<int> labels;   // size N, values in [0, class_count)
    std::size_t class_count = 0;

    std::size_t size() const { return samples.shape.empty() ? 0 : samples.shape[0]; }

    std::vector<std::size_t> feature_shape() const {
        return {samples.shape.begin() + 1, samples.shape.end()};
    }

    std::size_t feature_size() const { return Tensor::product(feature_shape()); }

    void validate() const {
        if (labels.size() != size())
            throw std::invalid_argument("dataset: label count mismatch");
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= class_count)
                throw std::invalid_argument("dataset: label out of range");
    }

    std::vector<std::size_t> class_histogram() const {
        std::vector<std::size_t> h(class_count, 0);
        for (int y : labels) ++h[static_cast<std::size_t>(y)];
        return h;
    }

    /// Row-copies of the given sample indices, labels preserved.
    Dataset subset(const std::vector<std::size_t>& idx) const {
        const std::size_t fs = feature_size();
        std::vector<std::size_t> shape = samples.shape;
        shape[0] = idx.size();
        Dataset out;
        out.samples = Tensor(shape);
        out.labels.reserve(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(samples.data.begin() + static_cast<std::ptrdiff_t>(idx[r] * fs), fs,
                        out.samples.data.begin() + static_cast<std::ptrdiff_t>(r * fs));
            out.labels.push_back(labels[idx[r]]);
        }
        out.class_count = class_count;
        return out;
    }

    /// Same data viewed with a different per-sample shape.
    Dataset reshaped_features(const std::vector<std::size_t>& fshape) const {
        if (Tensor::product(fshape) != feature_size())
            throw std::invalid_argument("dataset: feature reshape size mismatch");
        Dataset out = *this;
        std::vector<std::size_t> shape = {size()};
        shape.insert(shape.end(), fshape.begin(), fshape.end());
        out.samples = samples.reshaped(shape);
        return out;
    }
};

struct PartitionSpec {
    std::size_t n_clients = 1;
    double dirichlet_alpha = 0.5;
    double imbalance_factor = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_clients < 1) throw std::invalid_argument("partition: n_clients must be >= 1");
        if (!(dirichlet_alpha > 0.0))
            throw std::invalid_argument("partition: dirichlet_alpha must be > 0");
        if (!(imbalance_factor >= 1.0))
            throw std::invalid_argument("partition: imbalance_factor must be >= 1");
    }
};

/// Gaussian blobs, one per class. Class k is centered on coordinate axis
/// k mod dim at a fixed separation that grows with each wrap, so means stay
/// distinct for any K.
inline Dataset make_synthetic(std::size_t classes, std::size_t dim,
                              std::size_t n_per_class, double spread,
                              std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("make_synthetic: need >= 2 classes");
    if (dim < 1) throw std::invalid_argument("make_synthetic: need dim >= 1");
    constexpr double kSeparation = 5.0;
    Rng rng(seed);
    Dataset ds;
    ds.class_count = classes;
    ds.samples = Tensor({classes * n_per_class, dim});
    ds.labels.reserve(classes * n_per_class);
    std::size_t row = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        const std::size_t axis = k % dim;
        const double scale = kSeparation * (1.0 + static_cast<double>(k / dim));
        for (std::size_t i = 0; i < n_per_class; ++i, ++row) {
            double* out = ds.samples.data.data() + row * dim;
            for (std::size_t j = 0; j < dim; ++j)
                out[j] = (j == axis ? scale : 0.0) + spread * rng.normal();
            ds.labels.push_back(static_cast<int>(k));
        }
    }
    return ds;
}

/// Subsamples classes to the exponential profile
/// n_r = round(n_max * IF^(-r / (K-1))) over the head-to-tail rank r, then
/// relabels so class index equals rank (0 = head). Rank order is original
/// count descending, label ascending on ties.
inline Dataset apply_long_tail(const Dataset& ds, double imbalance_factor,
                               std::uint64_t seed) {
    if (!(imbalance_factor >= 1.0))
        throw std::invalid_argument("apply_long_tail: IF must be >= 1");
    ds.validate();
    const std::size_t k = ds.class_count;
    if (k < 2) return ds;

    const auto hist = ds.class_histogram();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return hist[a] != hist[b] ? hist[a] > hist[b] : a < b;
    });
    const std::size_t n_max = hist[order[0]];

    std::vector<std::vector<std::size_t>> per_class(k);
    for (std::size_t i = 0; i < ds.size(); ++i)
        per_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> keep;
    std::vector<int> new_labels;
    for (std::size_t r = 0; r < k; ++r) {
        const std::size_t cls = order[r];
        const double frac = std::pow(imbalance_factor,
                                     -static_cast<double>(r) / static_cast<double>(k - 1));
        std::size_t want = static_cast<std::size_t>(
            std::llround(static_cast<double>(n_max) * frac));
        want = std::max<std::size_t>(want, 1);
        if (per_class[cls].size() < want)
            throw std::invalid_argument(
                "apply_long_tail: class " + std::to_string(cls) + " has " +
                std::to_string(per_class[cls].size()) + " samples, needs " +
                std::to_string(want));
        auto picks = rng.sample_indices(per_class[cls].size(), want);
        std::sort(picks.begin(), picks.end());
        for (std::size_t pi : picks) {
            keep.push_back(per_class[cls][pi]);
            new_labels.push_back(static_cast<int>(r));
        }
    }
    Dataset out = ds.subset(keep);
    out.labels = std::move(new_labels);
    return out;
}

/// Splits every class across clients with proportions drawn from
/// Dir(alpha * 1_N). Partitions are disjoint and cover the input; a client
/// may end up with no samples of some class (or none at all).
inline std::vector<Dataset> dirichlet_partition(const Dataset& ds,
                                                const PartitionSpec& spec) {
    spec.validate();
    ds.validate();
    if (spec.n_clients == 1) return {ds};

    std::vector<std::vector<std::size_t>> per_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i)
        per_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    Rng rng(spec.seed);
    std::vector<std::vector<std::size_t>> client_idx(spec.n_clients);
    for (std::size_t cls = 0; cls < ds.class_count; ++cls) {
        auto& idx = per_class[cls];
        rng.shuffle(idx);
        const auto p = rng.dirichlet(spec.dirichlet_alpha, spec.n_clients);
        const std::size_t n = idx.size();
        double cum = 0.0;
        std::size_t start = 0;
        for (std::size_t c = 0; c < spec.n_clients; ++c) {
            cum += p[c];
            std::size_t end = (c + 1 == spec.n_clients)
                                  ? n
                                  : std::min<std::size_t>(
                                        n, static_cast<std::size_t>(
                                               std::floor(cum * static_cast<double>(n))));
            end = std::max(end, start);
            for (std::size_t i = start; i < end; ++i)
                client_idx[c].push_back(idx[i]);
            start = end;
        }
    }

    std::vector<Dataset> out;
    out.reserve(spec.n_clients);
    for (auto& idx : client_idx) {
        std::sort(idx.begin(), idx.end());
        out.push_back(ds.subset(idx));
    }
    return out;
}

/// Up to `cap` samples of every class, uniform without replacement.
inline Dataset class_capped_sample(const Dataset& ds, std::size_t cap, Rng& rng) {
    std::vector<std::vector<std::size_t>> per_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i)
        per_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::vector<std::size_t> keep;
    for (auto& idx : per_class) {
        if (idx.empty()) continue;
        const std::size_t take = std::min(cap, idx.size());
        auto picks = rng.sample_indices(idx.size(), take);
        std::sort(picks.begin(), picks.end());
        for (std::size_t pi : picks) keep.push_back(idx[pi]);
    }
    return ds.subset(keep);
}

/// Exactly `per_class` samples of every class (error if any class is short).
inline Dataset balanced_subsample(const Dataset& ds, std::size_t per_class,
                                  std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        if (by_class[c].size() < per_class)
            throw std::invalid_argument("balanced_subsample: class " + std::to_string(c) +
                                        " has only " + std::to_string(by_class[c].size()) +
                                        " samples");
        auto picks = rng.sample_indices(by_class[c].size(), per_class);
        std::sort(picks.begin(), picks.end());
        for (std::size_t pi : picks) keep.push_back(by_class[c][pi]);
    }
    return ds.subset(keep);
}

// ---------------------------------------------------------------------------
// IDX (MNIST) format

namespace detail {

inline std::uint32_t read_be_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("idx: truncated file (" + what + ")");
    return (static_cast<std::uint32_t>(b[0]) << 24) |
           (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

}  // namespace detail

/// Loads an IDX image/label file pair. Pixels are scaled to [0, 1] and
/// samples get shape {1, rows, cols}.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imf(images_path, std::ios::binary);
    if (!imf) throw std::runtime_error("idx: cannot open " + images_path);
    if (detail::read_be_u32(imf, "image magic") != 0x00000803u)
        throw std::runtime_error("idx: bad image magic in " + images_path);
    const std::uint32_t n = detail::read_be_u32(imf, "image count");
    const std::uint32_t rows = detail::read_be_u32(imf, "rows");
    const std::uint32_t cols = detail::read_be_u32(imf, "cols");

    std::ifstream lbf(labels_path, std::ios::binary);
    if (!lbf) throw std::runtime_error("idx: cannot open " + labels_path);
    if (detail::read_be_u32(lbf, "label magic") != 0x00000801u)
        throw std::runtime_error("idx: bad label magic in " + labels_path);
    const std::uint32_t nl = detail::read_be_u32(lbf, "label count");
    if (n != nl)
        throw std::runtime_error("idx: image/label count mismatch (" +
                                 std::to_string(n) + " vs " + std::to_string(nl) + ")");

    const std::size_t pixels = static_cast<std::size_t>(n) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    if (pixels > 0 && !imf.read(reinterpret_cast<char*>(raw.data()),
                                static_cast<std::streamsize>(pixels)))
        throw std::runtime_error("idx: truncated pixel data in " + images_path);

    std::vector<unsigned char> lab(n);
    if (n > 0 && !lbf.read(reinterpret_cast<char*>(lab.data()),
                           static_cast<std::streamsize>(n)))
        throw std::runtime_error("idx: truncated label data in " + labels_path);

    Dataset ds;
    ds.samples = Tensor({n, 1, rows, cols});
    for (std::size_t i = 0; i < pixels; ++i)
        ds.samples.data[i] = static_cast<double>(raw[i]) / 255.0;
    ds.labels.reserve(n);
    int max_label = 0;
    for (unsigned char y : lab) {
        ds.labels.push_back(static_cast<int>(y));
        max_label = std::max(max_label, static_cast<int>(y));
    }
    ds.class_count = static_cast<std::size_t>(max_label) + 1;
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// dataset blob

constexpr std::uint32_t kDatasetMagic = 0x3153444dU;  // "MDS1"

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    io::write_u32(os, kDatasetMagic);
    io::write_u64(os, ds.class_count);
    io::write_u64(os, ds.labels.size());
    for (int y : ds.labels) io::write_u32(os, static_cast<std::uint32_t>(y));
    io::write_tensor(os, ds.samples);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + path);
    if (io::read_u32(is) != kDatasetMagic)
        throw std::runtime_error("dataset blob: bad magic in " + path);
    Dataset ds;
    ds.class_count = io::read_u64(is);
    const std::uint64_t n = io::read_u64(is);
    ds.labels.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i)
        ds.labels.push_back(static_cast<int>(io::read_u32(is)));
    ds.samples = io::read_tensor(is);
    ds.validate();
    return ds;
}

}  // namespace mupfl::data
