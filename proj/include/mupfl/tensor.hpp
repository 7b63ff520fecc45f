#pragma once

// Dense row-major f64 tensor. The whole project runs double precision;
// finite-difference checks and silhouette tie-breaking are too fragile
// at f32.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mupfl/rng.hpp"

namespace mupfl {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;  // row-major, size == product(shape)

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s)
        : shape(std::move(s)), data(product(shape), 0.0) {}

    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (product(shape) != data.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static std::size_t product(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               std::multiplies<>());
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    /// I.i.d. normal entries with the given standard deviation.
    static Tensor randn(std::vector<std::size_t> s, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = stddev * rng.normal();
        return t;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at2(std::size_t i, std::size_t j) {
        assert(rank() == 2);
        return data[i * shape[1] + j];
    }
    double at2(std::size_t i, std::size_t j) const {
        assert(rank() == 2);
        return data[i * shape[1] + j];
    }

    double& at4(std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
        assert(rank() == 4);
        return data[((b * shape[1] + c) * shape[2] + i) * shape[3] + j];
    }
    double at4(std::size_t b, std::size_t c, std::size_t i, std::size_t j) const {
        assert(rank() == 4);
        return data[((b * shape[1] + c) * shape[2] + i) * shape[3] + j];
    }

    /// Same data, new shape; element count must be preserved.
    Tensor reshaped(std::vector<std::size_t> s) const {
        if (product(s) != data.size())
            throw std::invalid_argument("Tensor::reshaped: element count mismatch");
        return Tensor(std::move(s), data);
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double min() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::fmin(m, v);
        return m;
    }
    double max() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::fmax(m, v);
        return m;
    }
    double mean() const {
        if (data.empty()) return 0.0;
        double s = 0.0;
        for (double v : data) s += v;
        return s / static_cast<double>(data.size());
    }
};

inline bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

}  // namespace mupfl
