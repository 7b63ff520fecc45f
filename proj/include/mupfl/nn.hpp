#pragma once

// Minimal neural-network engine: dense and 2-d convolution layers, ReLU,
// softmax cross-entropy and hand-written reverse-mode gradients. Two fixed
// architectures are provided, an MLP and a small two-conv net; the final
// dense layer is always the classifier, everything before it the feature
// extractor.
//
// All operations are pure functions of their inputs. An optional spatial
// mask (0/1 per position, broadcast over batch and channels) can be applied
// to the activation right after the extractor's last ReLU; masked positions
// propagate zero gradient, like dropout.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mupfl/rng.hpp"
#include "mupfl/tensor.hpp"

namespace mupfl::nn {

enum class LayerKind { Dense, Relu, Conv2d, Flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t in = 0;      // Dense: in features,  Conv2d: in channels
    std::size_t out = 0;     // Dense: out features, Conv2d: out channels
    std::size_t kernel = 0;  // Conv2d only (square, stride 1, no padding)
};

struct ModelSpec {
    std::vector<LayerSpec> layers;        // last layer must be Dense
    std::vector<std::size_t> input_shape; // per-sample, {D} or {C,H,W}
    std::size_t classes = 0;
    int mask_layer = -1;  // activations masked after this layer index

    /// flatten -> dense -> ReLU -> dense. Mask point is the hidden ReLU,
    /// treating the hidden vector as a 1 x hidden map.
    static ModelSpec mlp(std::vector<std::size_t> input_shape,
                         std::size_t hidden, std::size_t classes) {
        ModelSpec s;
        s.input_shape = std::move(input_shape);
        s.classes = classes;
        const std::size_t in_dim = Tensor::product(s.input_shape);
        s.layers = {
            {LayerKind::Flatten},
            {LayerKind::Dense, in_dim, hidden},
            {LayerKind::Relu},
            {LayerKind::Dense, hidden, classes},
        };
        s.mask_layer = 2;
        return s;
    }

    /// conv5x5 -> ReLU -> conv5x5 -> ReLU -> flatten -> dense. Mask point
    /// is the ReLU after the second conv.
    static ModelSpec tiny_conv(std::size_t in_ch, std::size_t height,
                               std::size_t width, std::size_t c1,
                               std::size_t c2, std::size_t classes,
                               std::size_t kernel = 5) {
        if (height < 2 * (kernel - 1) + 1 || width < 2 * (kernel - 1) + 1)
            throw std::invalid_argument("tiny_conv: input too small for two " +
                                        std::to_string(kernel) + "x" +
                                        std::to_string(kernel) + " convs");
        ModelSpec s;
        s.input_shape = {in_ch, height, width};
        s.classes = classes;
        const std::size_t h2 = height - 2 * (kernel - 1);
        const std::size_t w2 = width - 2 * (kernel - 1);
        s.layers = {
            {LayerKind::Conv2d, in_ch, c1, kernel},
            {LayerKind::Relu},
            {LayerKind::Conv2d, c1, c2, kernel},
            {LayerKind::Relu},
            {LayerKind::Flatten},
            {LayerKind::Dense, c2 * h2 * w2, classes},
        };
        s.mask_layer = 3;
        return s;
    }

    /// Per-sample activation shape after layer `upto` (exclusive of batch dim).
    std::vector<std::size_t> shape_after(int upto) const {
        std::vector<std::size_t> cur = input_shape;
        for (int i = 0; i <= upto && i < static_cast<int>(layers.size()); ++i) {
            const LayerSpec& l = layers[static_cast<std::size_t>(i)];
            switch (l.kind) {
                case LayerKind::Dense:
                    cur = {l.out};
                    break;
                case LayerKind::Relu:
                    break;
                case LayerKind::Flatten:
                    cur = {Tensor::product(cur)};
                    break;
                case LayerKind::Conv2d:
                    cur = {l.out, cur.at(1) - l.kernel + 1, cur.at(2) - l.kernel + 1};
                    break;
            }
        }
        return cur;
    }

    /// Spatial {H, W} of the mask point; a flat hidden vector of width H
    /// is treated as a 1 x H map.
    std::vector<std::size_t> mask_shape() const {
        if (mask_layer < 0)
            throw std::logic_error("mask_shape: model has no mask point");
        const auto s = shape_after(mask_layer);
        if (s.size() == 3) return {s[1], s[2]};
        if (s.size() == 1) return {1, s[0]};
        throw std::logic_error("mask_shape: unsupported activation rank");
    }

    /// Width of the classifier input.
    std::size_t feature_dim() const {
        return layers.back().in;
    }
};

/// Parameters split into extractor tensors (everything before the final
/// dense layer, in layer order, weight then bias) and the classifier's
/// {weight, bias}. flatten() order is extractor tensors then classifier.
struct ModelParams {
    std::vector<Tensor> extractor;
    std::vector<Tensor> classifier;
};

using Gradients = ModelParams;

namespace detail {

inline std::vector<std::size_t> weight_shape(const LayerSpec& l) {
    if (l.kind == LayerKind::Dense) return {l.out, l.in};
    return {l.out, l.in, l.kernel, l.kernel};  // Conv2d
}

inline bool has_params(const LayerSpec& l) {
    return l.kind == LayerKind::Dense || l.kind == LayerKind::Conv2d;
}

}  // namespace detail

inline void check_congruent(const ModelSpec& spec, const ModelParams& p) {
    std::size_t n_param_layers = 0;
    for (const auto& l : spec.layers)
        if (detail::has_params(l)) ++n_param_layers;
    if (n_param_layers == 0 || spec.layers.back().kind != LayerKind::Dense)
        throw std::invalid_argument("model spec must end in a dense classifier");
    if (p.classifier.size() != 2 ||
        p.extractor.size() != 2 * (n_param_layers - 1))
        throw std::invalid_argument("params do not match model spec");
    std::size_t ei = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (!detail::has_params(l)) continue;
        const bool is_classifier = (i + 1 == spec.layers.size());
        const Tensor& w = is_classifier ? p.classifier[0] : p.extractor[ei];
        const Tensor& b = is_classifier ? p.classifier[1] : p.extractor[ei + 1];
        if (w.shape != detail::weight_shape(l) ||
            b.shape != std::vector<std::size_t>{l.out})
            throw std::invalid_argument("parameter tensor shape mismatch at layer " +
                                        std::to_string(i));
        if (!is_classifier) ei += 2;
    }
}

/// All-zero parameters with the spec's shapes.
inline ModelParams zero_params(const ModelSpec& spec) {
    ModelParams p;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (!detail::has_params(l)) continue;
        auto& dst = (i + 1 == spec.layers.size()) ? p.classifier : p.extractor;
        dst.emplace_back(Tensor::zeros(detail::weight_shape(l)));
        dst.emplace_back(Tensor::zeros({l.out}));
    }
    check_congruent(spec, p);
    return p;
}

/// He initialization for extractor layers, smaller uniform-scale normal for
/// the classifier, zero biases.
inline ModelParams init_params(const ModelSpec& spec, Rng& rng) {
    ModelParams p;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (!detail::has_params(l)) continue;
        const std::size_t fan_in = l.kind == LayerKind::Dense
                                       ? l.in
                                       : l.in * l.kernel * l.kernel;
        const bool is_classifier = (i + 1 == spec.layers.size());
        const double stddev = is_classifier
                                  ? std::sqrt(1.0 / static_cast<double>(fan_in))
                                  : std::sqrt(2.0 / static_cast<double>(fan_in));
        Tensor w = Tensor::randn(detail::weight_shape(l), rng, stddev);
        Tensor b = Tensor::zeros({l.out});
        if (is_classifier) {
            p.classifier.push_back(std::move(w));
            p.classifier.push_back(std::move(b));
        } else {
            p.extractor.push_back(std::move(w));
            p.extractor.push_back(std::move(b));
        }
    }
    check_congruent(spec, p);
    return p;
}

inline std::size_t param_count(const ModelParams& p) {
    std::size_t n = 0;
    for (const auto& t : p.extractor) n += t.size();
    for (const auto& t : p.classifier) n += t.size();
    return n;
}

/// Stable flattening order: extractor tensors then classifier tensors.
inline std::vector<double> flatten(const ModelParams& p) {
    std::vector<double> out;
    out.reserve(param_count(p));
    for (const auto& t : p.extractor) out.insert(out.end(), t.data.begin(), t.data.end());
    for (const auto& t : p.classifier) out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

inline ModelParams unflatten(const ModelSpec& spec, std::span<const double> flat) {
    ModelParams p = zero_params(spec);
    std::size_t off = 0;
    auto fill = [&](Tensor& t) {
        if (off + t.size() > flat.size())
            throw std::invalid_argument("unflatten: vector too short");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                  flat.begin() + static_cast<std::ptrdiff_t>(off + t.size()),
                  t.data.begin());
        off += t.size();
    };
    for (auto& t : p.extractor) fill(t);
    for (auto& t : p.classifier) fill(t);
    if (off != flat.size())
        throw std::invalid_argument("unflatten: vector length mismatch");
    return p;
}

// ---------------------------------------------------------------------------
// softmax / cross-entropy

inline Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2)
        throw std::invalid_argument("softmax_rows: expected B x K logits");
    const std::size_t b = logits.shape[0], k = logits.shape[1];
    Tensor p({b, k});
    for (std::size_t i = 0; i < b; ++i) {
        double mx = logits.at2(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::fmax(mx, logits.at2(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            p.at2(i, j) = std::exp(logits.at2(i, j) - mx);
            sum += p.at2(i, j);
        }
        for (std::size_t j = 0; j < k; ++j) p.at2(i, j) /= sum;
    }
    return p;
}

inline void check_labels(const std::vector<int>& labels, std::size_t batch,
                         std::size_t classes) {
    if (labels.size() != batch)
        throw std::invalid_argument("labels: batch size mismatch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw std::invalid_argument("label out of range: " + std::to_string(y));
}

/// Mean of -log softmax(logits)[label] over the batch.
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("cross_entropy: expected B x K logits");
    const std::size_t b = logits.shape[0], k = logits.shape[1];
    check_labels(labels, b, k);
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        double mx = logits.at2(i, 0);
        for (std::size_t j = 1; j < k; ++j) mx = std::fmax(mx, logits.at2(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits.at2(i, j) - mx);
        total += mx + std::log(sum) - logits.at2(i, static_cast<std::size_t>(labels[i]));
    }
    return total / static_cast<double>(b);
}

// ---------------------------------------------------------------------------
// layer kernels

namespace detail {

inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t bs = x.shape[0], in = w.shape[1], out = w.shape[0];
    if (x.shape.size() != 2 || x.shape[1] != in)
        throw std::invalid_argument("dense: input width mismatch");
    Tensor y({bs, out});
    for (std::size_t i = 0; i < bs; ++i)
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            const double* xrow = x.data.data() + i * in;
            const double* wrow = w.data.data() + o * in;
            for (std::size_t j = 0; j < in; ++j) acc += wrow[j] * xrow[j];
            y.at2(i, o) = acc;
        }
    return y;
}

// dy is d(loss)/d(y); returns d(loss)/d(x) and accumulates dw, db.
inline Tensor dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                             Tensor& dw, Tensor& db) {
    const std::size_t bs = x.shape[0], in = w.shape[1], out = w.shape[0];
    Tensor dx({bs, in});
    for (std::size_t i = 0; i < bs; ++i) {
        const double* xrow = x.data.data() + i * in;
        double* dxrow = dx.data.data() + i * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dy.at2(i, o);
            db[o] += g;
            const double* wrow = w.data.data() + o * in;
            double* dwrow = dw.data.data() + o * in;
            for (std::size_t j = 0; j < in; ++j) {
                dwrow[j] += g * xrow[j];
                dxrow[j] += g * wrow[j];
            }
        }
    }
    return dx;
}

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const std::size_t bs = x.shape[0], ci = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::size_t co = w.shape[0], k = w.shape[2];
    if (w.shape[1] != ci) throw std::invalid_argument("conv2d: channel mismatch");
    const std::size_t ho = h - k + 1, wo = wd - k + 1;
    Tensor y({bs, co, ho, wo});
    for (std::size_t n = 0; n < bs; ++n)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    double acc = b[o];
                    for (std::size_t c = 0; c < ci; ++c)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v)
                                acc += x.at4(n, c, i + u, j + v) * w.at4(o, c, u, v);
                    y.at4(n, o, i, j) = acc;
                }
    return y;
}

inline Tensor conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                              Tensor& dw, Tensor& db) {
    const std::size_t bs = x.shape[0], ci = x.shape[1];
    const std::size_t co = w.shape[0], k = w.shape[2];
    const std::size_t ho = dy.shape[2], wo = dy.shape[3];
    Tensor dx(x.shape);
    for (std::size_t n = 0; n < bs; ++n)
        for (std::size_t o = 0; o < co; ++o)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j) {
                    const double g = dy.at4(n, o, i, j);
                    db[o] += g;
                    for (std::size_t c = 0; c < ci; ++c)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                dw.at4(o, c, u, v) += g * x.at4(n, c, i + u, j + v);
                                dx.at4(n, c, i + u, j + v) += g * w.at4(o, c, u, v);
                            }
                }
    return dx;
}

// Multiplies the spatial mask into `h`, broadcast over batch and channel.
// `h` is {B, D} (mask 1 x D) or {B, C, H, W} (mask H x W).
inline void apply_mask_inplace(Tensor& h, const Tensor& mask) {
    if (h.rank() == 2) {
        if (mask.size() != h.shape[1])
            throw std::invalid_argument("mask: width mismatch");
        for (std::size_t i = 0; i < h.shape[0]; ++i)
            for (std::size_t j = 0; j < h.shape[1]; ++j)
                h.at2(i, j) *= mask[j];
        return;
    }
    if (h.rank() != 4 || mask.rank() != 2 || mask.shape[0] != h.shape[2] ||
        mask.shape[1] != h.shape[3])
        throw std::invalid_argument("mask: spatial shape mismatch");
    const std::size_t hw = mask.size();
    for (std::size_t n = 0; n < h.shape[0]; ++n)
        for (std::size_t c = 0; c < h.shape[1]; ++c) {
            double* slice = h.data.data() + (n * h.shape[1] + c) * hw;
            for (std::size_t p = 0; p < hw; ++p) slice[p] *= mask.data[p];
        }
}

// Reshape a {B, D} hidden activation to {B, 1, 1, D} so activation-map
// consumers always see B x C x H x W.
inline Tensor as_bchw(const Tensor& h) {
    if (h.rank() == 4) return h;
    if (h.rank() == 2) return h.reshaped({h.shape[0], 1, 1, h.shape[1]});
    throw std::logic_error("as_bchw: unsupported rank");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// forward / backward

struct Forward {
    Tensor features;   // extractor output, input to the classifier ({B, F})
    Tensor logits;     // {B, K}
    Tensor mask_input; // activation at the mask point before masking, B x C x H x W
};

/// Runs the network. `mask`, when given, is a {H, W} 0/1 tensor applied to
/// the activation after `spec.mask_layer`, broadcast over batch and channels.
inline Forward forward(const ModelSpec& spec, const ModelParams& params,
                       const Tensor& batch, const Tensor* mask = nullptr) {
    check_congruent(spec, params);
    if (batch.rank() < 2 ||
        std::vector<std::size_t>(batch.shape.begin() + 1, batch.shape.end()) !=
            spec.input_shape)
        throw std::invalid_argument("forward: batch shape does not match model input");
    const std::size_t bs = batch.shape[0];

    Forward out;
    Tensor cur = batch;
    std::size_t ei = 0;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        const bool is_classifier = (li + 1 == spec.layers.size());
        if (is_classifier) out.features = cur;
        switch (l.kind) {
            case LayerKind::Dense: {
                const Tensor& w = is_classifier ? params.classifier[0] : params.extractor[ei];
                const Tensor& b = is_classifier ? params.classifier[1] : params.extractor[ei + 1];
                cur = detail::dense_forward(cur, w, b);
                if (!is_classifier) ei += 2;
                break;
            }
            case LayerKind::Conv2d: {
                cur = detail::conv2d_forward(cur, params.extractor[ei], params.extractor[ei + 1]);
                ei += 2;
                break;
            }
            case LayerKind::Relu:
                for (auto& v : cur.data) v = v > 0.0 ? v : 0.0;
                break;
            case LayerKind::Flatten:
                cur = cur.reshaped({bs, cur.size() / bs});
                break;
        }
        if (static_cast<int>(li) == spec.mask_layer) {
            out.mask_input = detail::as_bchw(cur);
            if (mask) detail::apply_mask_inplace(cur, *mask);
        }
    }
    out.logits = cur;
    return out;
}

struct BackwardResult {
    double loss = 0.0;
    Gradients grads;
};

/// Loss and gradients for cross_entropy(forward(...)). Gradients are exact
/// reverse-mode derivatives of the masked forward pass.
inline BackwardResult backward(const ModelSpec& spec, const ModelParams& params,
                               const Tensor& batch, const std::vector<int>& labels,
                               const Tensor* mask = nullptr) {
    check_congruent(spec, params);
    if (batch.rank() < 2 ||
        std::vector<std::size_t>(batch.shape.begin() + 1, batch.shape.end()) !=
            spec.input_shape)
        throw std::invalid_argument("backward: batch shape does not match model input");
    const std::size_t bs = batch.shape[0];

    // Forward, caching each layer's input.
    std::vector<Tensor> inputs(spec.layers.size());
    Tensor cur = batch;
    std::size_t ei = 0;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        inputs[li] = cur;
        const bool is_classifier = (li + 1 == spec.layers.size());
        switch (l.kind) {
            case LayerKind::Dense: {
                const Tensor& w = is_classifier ? params.classifier[0] : params.extractor[ei];
                const Tensor& b = is_classifier ? params.classifier[1] : params.extractor[ei + 1];
                cur = detail::dense_forward(cur, w, b);
                if (!is_classifier) ei += 2;
                break;
            }
            case LayerKind::Conv2d:
                cur = detail::conv2d_forward(cur, params.extractor[ei], params.extractor[ei + 1]);
                ei += 2;
                break;
            case LayerKind::Relu:
                for (auto& v : cur.data) v = v > 0.0 ? v : 0.0;
                break;
            case LayerKind::Flatten:
                cur = cur.reshaped({bs, cur.size() / bs});
                break;
        }
        if (static_cast<int>(li) == spec.mask_layer && mask)
            detail::apply_mask_inplace(cur, *mask);
    }

    const Tensor& logits = cur;
    check_labels(labels, bs, spec.classes);
    BackwardResult res;
    res.loss = cross_entropy(logits, labels);

    // d loss / d logits = (softmax - onehot) / B
    Tensor grad = softmax_rows(logits);
    for (std::size_t i = 0; i < bs; ++i)
        grad.at2(i, static_cast<std::size_t>(labels[i])) -= 1.0;
    for (auto& v : grad.data) v /= static_cast<double>(bs);

    Gradients g;
    for (const auto& t : params.extractor) g.extractor.emplace_back(Tensor::zeros(t.shape));
    for (const auto& t : params.classifier) g.classifier.emplace_back(Tensor::zeros(t.shape));

    for (int li = static_cast<int>(spec.layers.size()) - 1; li >= 0; --li) {
        const LayerSpec& l = spec.layers[static_cast<std::size_t>(li)];
        const bool is_classifier = (li + 1 == static_cast<int>(spec.layers.size()));
        if (li == spec.mask_layer && mask)
            detail::apply_mask_inplace(grad, *mask);
        switch (l.kind) {
            case LayerKind::Dense: {
                if (detail::has_params(l) && !is_classifier) ei -= 2;
                const Tensor& w = is_classifier ? params.classifier[0] : params.extractor[ei];
                Tensor& dw = is_classifier ? g.classifier[0] : g.extractor[ei];
                Tensor& db = is_classifier ? g.classifier[1] : g.extractor[ei + 1];
                grad = detail::dense_backward(inputs[static_cast<std::size_t>(li)], w, grad, dw, db);
                break;
            }
            case LayerKind::Conv2d: {
                ei -= 2;
                grad = detail::conv2d_backward(inputs[static_cast<std::size_t>(li)],
                                               params.extractor[ei], grad,
                                               g.extractor[ei], g.extractor[ei + 1]);
                break;
            }
            case LayerKind::Relu: {
                const Tensor& x = inputs[static_cast<std::size_t>(li)];
                for (std::size_t i = 0; i < grad.size(); ++i)
                    if (x.data[i] <= 0.0) grad.data[i] = 0.0;
                break;
            }
            case LayerKind::Flatten:
                grad = grad.reshaped(inputs[static_cast<std::size_t>(li)].shape);
                break;
        }
    }
    res.grads = std::move(g);
    return res;
}

/// p' = p - lr * g, elementwise.
inline ModelParams sgd_step(const ModelParams& params, const Gradients& grads,
                            double lr) {
    if (params.extractor.size() != grads.extractor.size() ||
        params.classifier.size() != grads.classifier.size())
        throw std::invalid_argument("sgd_step: gradient structure mismatch");
    ModelParams out = params;
    auto apply = [lr](std::vector<Tensor>& ps, const std::vector<Tensor>& gs) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (!ps[i].same_shape(gs[i]))
                throw std::invalid_argument("sgd_step: tensor shape mismatch");
            for (std::size_t j = 0; j < ps[i].size(); ++j)
                ps[i].data[j] -= lr * gs[i].data[j];
        }
    };
    apply(out.extractor, grads.extractor);
    apply(out.classifier, grads.classifier);
    return out;
}

/// Gradient of the cross-entropy w.r.t. the linear classifier {W, b} only,
/// for precomputed features. Mean over the batch.
inline std::vector<Tensor> classifier_grads(const std::vector<Tensor>& classifier,
                                            const Tensor& features,
                                            const std::vector<int>& labels) {
    if (classifier.size() != 2)
        throw std::invalid_argument("classifier_grads: expected {W, b}");
    const Tensor& w = classifier[0];
    const std::size_t k = w.shape[0], f = w.shape[1];
    if (features.rank() != 2 || features.shape[1] != f)
        throw std::invalid_argument("classifier_grads: feature width mismatch");
    const std::size_t bs = features.shape[0];
    check_labels(labels, bs, k);

    Tensor logits = detail::dense_forward(features, w, classifier[1]);
    Tensor p = softmax_rows(logits);
    Tensor dw = Tensor::zeros({k, f});
    Tensor db = Tensor::zeros({k});
    const double inv_b = 1.0 / static_cast<double>(bs);
    for (std::size_t i = 0; i < bs; ++i) {
        for (std::size_t c = 0; c < k; ++c) {
            const double e = (p.at2(i, c) - (static_cast<std::size_t>(labels[i]) == c ? 1.0 : 0.0)) * inv_b;
            db[c] += e;
            for (std::size_t j = 0; j < f; ++j)
                dw.at2(c, j) += e * features.at2(i, j);
        }
    }
    return {std::move(dw), std::move(db)};
}

}  // namespace mupfl::nn
