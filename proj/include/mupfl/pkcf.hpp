#pragma once

// Prior-knowledge classifier fine-tuning. Clients ship per-class averages
// of their classifier gradients; the server averages them across clients,
// synthesizes a balanced bank of features whose classifier gradients align
// with those averages (gradient matching under cosine loss), and clients
// pre-train their classifier on the bank.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mupfl/common.hpp"
#include "mupfl/data.hpp"
#include "mupfl/nn.hpp"
#include "mupfl/rng.hpp"
#include "mupfl/serialize.hpp"
#include "mupfl/tensor.hpp"

namespace mupfl::pkcf {

/// Per-class averaged classifier gradients, flattened {dW, db}. Only
/// classes with at least one local sample appear; raw samples and features
/// never leave the client.
struct ClassFeatureGradients {
    int client_id = 0;
    std::map<int, std::vector<double>> per_class;
};

/// Runs the extractor over the subset (no dropout mask) and averages the
/// classifier gradient over each class's samples.
inline ClassFeatureGradients class_feature_gradients(const nn::ModelSpec& spec,
                                                     const nn::ModelParams& params,
                                                     const data::Dataset& subset,
                                                     int client_id = 0) {
    if (subset.size() == 0)
        throw std::invalid_argument("class_feature_gradients: empty subset");
    subset.validate();
    const auto fwd = nn::forward(spec, params, subset.samples);

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < subset.size(); ++i)
        by_class[subset.labels[i]].push_back(i);

    ClassFeatureGradients out;
    out.client_id = client_id;
    const std::size_t f = spec.feature_dim();
    for (const auto& [cls, rows] : by_class) {
        Tensor feats({rows.size(), f});
        std::vector<int> labels(rows.size(), cls);
        for (std::size_t r = 0; r < rows.size(); ++r)
            std::copy_n(fwd.features.data.begin() +
                            static_cast<std::ptrdiff_t>(rows[r] * f),
                        f, feats.data.begin() + static_cast<std::ptrdiff_t>(r * f));
        const auto g = nn::classifier_grads(params.classifier, feats, labels);
        std::vector<double> flat;
        flat.reserve(g[0].size() + g[1].size());
        flat.insert(flat.end(), g[0].data.begin(), g[0].data.end());
        flat.insert(flat.end(), g[1].data.begin(), g[1].data.end());
        out.per_class[cls] = std::move(flat);
    }
    return out;
}

/// Mean over the clients that reported each class; classes nobody reported
/// are absent from the result.
inline std::map<int, std::vector<double>> aggregate_class_gradients(
    const std::vector<ClassFeatureGradients>& all) {
    if (all.empty())
        throw std::invalid_argument("aggregate_class_gradients: no clients");
    std::map<int, std::vector<double>> sum;
    std::map<int, std::size_t> count;
    for (const auto& cfg : all) {
        for (const auto& [cls, vec] : cfg.per_class) {
            auto it = sum.find(cls);
            if (it == sum.end()) {
                sum[cls] = vec;
                count[cls] = 1;
            } else {
                if (it->second.size() != vec.size())
                    throw std::invalid_argument(
                        "aggregate_class_gradients: gradient length mismatch");
                for (std::size_t i = 0; i < vec.size(); ++i) it->second[i] += vec[i];
                ++count[cls];
            }
        }
    }
    for (auto& [cls, vec] : sum) {
        const double inv = 1.0 / static_cast<double>(count[cls]);
        for (auto& v : vec) v *= inv;
    }
    return sum;
}

/// Synthetic balanced features, |K| x m x feature-dim. Rows of classes no
/// client reported stay zero-filled and unoptimized.
struct GlobalFeatureBank {
    Tensor features;               // {K, m, F}
    std::size_t m = 0;
    int round = 0;
    std::vector<char> optimized;   // per class

    bool empty() const {
        return std::none_of(optimized.begin(), optimized.end(),
                            [](char c) { return c != 0; });
    }
};

struct SynthesisResult {
    GlobalFeatureBank bank;
    std::vector<double> loss_trace;        // matching loss per step, plus final
    std::map<int, double> class_mismatch;  // final 1 - cos per class
};

namespace detail {

// Gradient-matching state for one class against a linear classifier.
struct ClassMatch {
    double mismatch = 0.0;             // 1 - cos(z, z_hat)
    bool skipped = false;              // zero-norm z or z_hat
    std::vector<double> grad;          // d mismatch / d h, m*F entries
};

// For features h_1..h_m of class k: z_hat = (1/m) sum_j [vec(e_j h_j^T); e_j]
// with e_j = softmax(W h_j + b) - onehot(k). Returns the cosine mismatch
// against z and its exact gradient w.r.t. the features.
inline ClassMatch match_class(const std::vector<double>& z, const Tensor& w,
                              const Tensor& b, const double* h, std::size_t m,
                              int cls, bool want_grad) {
    const std::size_t k = w.shape[0], f = w.shape[1];
    if (z.size() != k * f + k)
        throw std::invalid_argument("match_class: gradient length mismatch");

    std::vector<double> p_all(m * k);
    std::vector<double> zhat(k * f + k, 0.0);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) {
        const double* hj = h + j * f;
        double* pj = p_all.data() + j * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            double acc = b[c];
            const double* wrow = w.data.data() + c * f;
            for (std::size_t q = 0; q < f; ++q) acc += wrow[q] * hj[q];
            pj[c] = acc;
            mx = std::fmax(mx, acc);
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            pj[c] = std::exp(pj[c] - mx);
            sum += pj[c];
        }
        for (std::size_t c = 0; c < k; ++c) pj[c] /= sum;
        for (std::size_t c = 0; c < k; ++c) {
            const double e = pj[c] - (static_cast<std::size_t>(cls) == c ? 1.0 : 0.0);
            zhat[k * f + c] += e * inv_m;
            double* zrow = zhat.data() + c * f;
            for (std::size_t q = 0; q < f; ++q) zrow[q] += e * hj[q] * inv_m;
        }
    }

    double nz = 0.0, nzh = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < zhat.size(); ++i) {
        nz += z[i] * z[i];
        nzh += zhat[i] * zhat[i];
        dot += z[i] * zhat[i];
    }
    ClassMatch out;
    if (nz == 0.0 || nzh == 0.0) {
        out.skipped = true;
        return out;
    }
    nz = std::sqrt(nz);
    nzh = std::sqrt(nzh);
    const double cosv = dot / (nz * nzh);
    out.mismatch = 1.0 - cosv;
    if (!want_grad) return out;

    // u = d(1 - cos)/d zhat
    std::vector<double> u(zhat.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        u[i] = -(z[i] / (nz * nzh) - zhat[i] * dot / (nz * nzh * nzh * nzh));

    // d zhat / d h_j, chained: for each sample, with A = u's W-block and
    // a = u's b-block,
    //   d/dh [ e^T A h + a^T e ] = A^T e + W^T (J_p (A h + a)),
    // J_p = diag(p) - p p^T.
    out.grad.assign(m * f, 0.0);
    const double* a_w = u.data();          // k x f
    const double* a_b = u.data() + k * f;  // k
    std::vector<double> c_vec(k), jc(k), e_vec(k);
    for (std::size_t j = 0; j < m; ++j) {
        const double* hj = h + j * f;
        const double* pj = p_all.data() + j * k;
        for (std::size_t c = 0; c < k; ++c) {
            double acc = a_b[c];
            const double* arow = a_w + c * f;
            for (std::size_t q = 0; q < f; ++q) acc += arow[q] * hj[q];
            c_vec[c] = acc;
            e_vec[c] = pj[c] - (static_cast<std::size_t>(cls) == c ? 1.0 : 0.0);
        }
        double pc = 0.0;
        for (std::size_t c = 0; c < k; ++c) pc += pj[c] * c_vec[c];
        for (std::size_t c = 0; c < k; ++c) jc[c] = pj[c] * (c_vec[c] - pc);
        double* gj = out.grad.data() + j * f;
        for (std::size_t c = 0; c < k; ++c) {
            const double* arow = a_w + c * f;
            const double* wrow = w.data.data() + c * f;
            for (std::size_t q = 0; q < f; ++q)
                gj[q] += arow[q] * e_vec[c] + wrow[q] * jc[c];
        }
        for (std::size_t q = 0; q < f; ++q) gj[q] *= inv_m;
    }
    return out;
}

}  // namespace detail

/// Gradient descent on the feature bank minimizing the mean over reported
/// classes of 1 - cos(z_glo^k, z_hat^k). Features of reported classes start
/// from seeded N(0, 0.1^2) noise; steps = 0 returns that init unchanged.
inline SynthesisResult synthesize_global_features(
    const std::map<int, std::vector<double>>& z_glo,
    const std::vector<Tensor>& classifier, std::size_t num_classes,
    std::size_t m, std::size_t steps, double lr, std::uint64_t seed,
    const WarnFn& warn_fn = {}) {
    if (classifier.size() != 2)
        throw std::invalid_argument("synthesize_global_features: expected {W, b}");
    if (m < 1) throw std::invalid_argument("synthesize_global_features: m must be >= 1");
    const Tensor& w = classifier[0];
    const Tensor& b = classifier[1];
    const std::size_t k = w.shape[0], f = w.shape[1];
    if (b.size() != k)
        throw std::invalid_argument("synthesize_global_features: bias shape mismatch");
    if (num_classes != k)
        throw std::invalid_argument("synthesize_global_features: class count mismatch");
    for (const auto& [cls, vec] : z_glo) {
        if (cls < 0 || static_cast<std::size_t>(cls) >= k)
            throw std::invalid_argument("synthesize_global_features: class out of range");
        if (vec.size() != k * f + k)
            throw std::invalid_argument("synthesize_global_features: gradient dim mismatch");
    }

    SynthesisResult res;
    res.bank.features = Tensor::zeros({k, m, f});
    res.bank.m = m;
    res.bank.optimized.assign(k, 0);

    Rng rng(seed);
    for (std::size_t cls = 0; cls < k; ++cls) {
        if (!z_glo.count(static_cast<int>(cls))) continue;
        res.bank.optimized[cls] = 1;
        double* h = res.bank.features.data.data() + cls * m * f;
        for (std::size_t i = 0; i < m * f; ++i) h[i] = 0.1 * rng.normal();
    }

    auto eval = [&](bool want_grad, std::vector<double>* grad_out) {
        double total = 0.0;
        std::size_t active = 0;
        for (const auto& [cls, z] : z_glo) {
            double* h = res.bank.features.data.data() +
                        static_cast<std::size_t>(cls) * m * f;
            auto cm = detail::match_class(z, w, b, h, m, cls, want_grad);
            if (cm.skipped) {
                warn(warn_fn, "pkcf: zero-norm gradient for class " +
                                  std::to_string(cls) + ", term skipped");
                continue;
            }
            total += cm.mismatch;
            ++active;
            res.class_mismatch[cls] = cm.mismatch;
            if (want_grad && grad_out)
                std::copy(cm.grad.begin(), cm.grad.end(),
                          grad_out->begin() +
                              static_cast<std::ptrdiff_t>(
                                  static_cast<std::size_t>(cls) * m * f));
        }
        return active > 0 ? total / static_cast<double>(active) : 0.0;
    };

    const std::size_t active_classes = z_glo.size();
    std::vector<double> grad(k * m * f, 0.0);
    for (std::size_t step = 0; step < steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        res.loss_trace.push_back(eval(true, &grad));
        if (active_classes == 0) break;
        const double scale = lr / static_cast<double>(active_classes);
        for (std::size_t i = 0; i < grad.size(); ++i)
            res.bank.features.data[i] -= scale * grad[i];
    }
    res.loss_trace.push_back(eval(false, nullptr));
    return res;
}

/// tau epochs of full-batch gradient descent on the bank's (feature, class)
/// pairs, touching the classifier only; the extractor is returned
/// bit-identical. Empty banks are a no-op.
inline nn::ModelParams fine_tune_classifier(const nn::ModelParams& params,
                                            const GlobalFeatureBank& bank,
                                            std::size_t tau, double lr) {
    if (bank.empty() || tau == 0 || lr == 0.0) return params;
    const Tensor& w = params.classifier.at(0);
    const std::size_t f = w.shape[1];
    if (bank.features.rank() != 3 || bank.features.shape[2] != f)
        throw std::invalid_argument("fine_tune_classifier: feature dim mismatch");
    const std::size_t k = bank.features.shape[0], m = bank.features.shape[1];

    std::size_t rows = 0;
    for (char o : bank.optimized) rows += o ? m : 0;
    Tensor feats({rows, f});
    std::vector<int> labels;
    labels.reserve(rows);
    std::size_t r = 0;
    for (std::size_t cls = 0; cls < k; ++cls) {
        if (!bank.optimized[cls]) continue;
        for (std::size_t j = 0; j < m; ++j, ++r) {
            std::copy_n(bank.features.data.begin() +
                            static_cast<std::ptrdiff_t>((cls * m + j) * f),
                        f, feats.data.begin() + static_cast<std::ptrdiff_t>(r * f));
            labels.push_back(static_cast<int>(cls));
        }
    }

    nn::ModelParams out = params;
    for (std::size_t epoch = 0; epoch < tau; ++epoch) {
        const auto g = nn::classifier_grads(out.classifier, feats, labels);
        for (std::size_t i = 0; i < out.classifier.size(); ++i)
            for (std::size_t j = 0; j < out.classifier[i].size(); ++j)
                out.classifier[i].data[j] -= lr * g[i].data[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// wire format: class-index header, then one 1-d tensor blob per class

constexpr std::uint32_t kPayloadMagic = 0x314b504dU;  // "MPK1"

inline void write_payload(std::ostream& os, const ClassFeatureGradients& cfg) {
    io::write_u32(os, kPayloadMagic);
    io::write_u32(os, static_cast<std::uint32_t>(cfg.client_id));
    io::write_u32(os, static_cast<std::uint32_t>(cfg.per_class.size()));
    for (const auto& [cls, vec] : cfg.per_class)
        io::write_u32(os, static_cast<std::uint32_t>(cls));
    for (const auto& [cls, vec] : cfg.per_class)
        io::write_tensor(os, Tensor({vec.size()}, vec));
}

inline ClassFeatureGradients read_payload(std::istream& is) {
    if (io::read_u32(is) != kPayloadMagic)
        throw std::runtime_error("pkcf payload: bad magic");
    ClassFeatureGradients cfg;
    cfg.client_id = static_cast<int>(io::read_u32(is));
    const std::uint32_t n = io::read_u32(is);
    std::vector<int> classes(n);
    for (auto& c : classes) c = static_cast<int>(io::read_u32(is));
    for (int c : classes) {
        Tensor t = io::read_tensor(is);
        cfg.per_class[c] = std::move(t.data);
    }
    return cfg;
}

}  // namespace mupfl::pkcf
