#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mupfl/nn.hpp"
#include "oracles.hpp"

using namespace mupfl;
using namespace mupfl::nn;

namespace {

// Single dense layer acting as its own classifier.
ModelSpec linear_spec(std::size_t in, std::size_t out) {
    ModelSpec s;
    s.input_shape = {in};
    s.classes = out;
    s.layers = {{LayerKind::Dense, in, out}};
    return s;
}

ModelParams linear_params(const Tensor& w, const Tensor& b) {
    ModelParams p;
    p.classifier = {w, b};
    return p;
}

}  // namespace

TEST(Forward, ZeroWeightsGiveZeroLogits) {
    auto spec = ModelSpec::mlp({4}, 8, 3);
    auto params = zero_params(spec);
    Tensor batch({2, 4}, {1, 2, 3, 4, -1, 0, 2, 5});
    auto out = forward(spec, params, batch);
    for (double v : out.logits.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Forward, IdentityLinearPassesInputThrough) {
    auto spec = linear_spec(2, 2);
    Tensor w({2, 2}, {1, 0, 0, 1});
    auto params = linear_params(w, Tensor::zeros({2}));
    Tensor batch({1, 2}, {1, 2});
    auto out = forward(spec, params, batch);
    EXPECT_DOUBLE_EQ(out.logits.at2(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(out.logits.at2(0, 1), 2.0);
}

TEST(Forward, MatchesHandRolledTwoLayerOracle) {
    auto spec = ModelSpec::mlp({3}, 2, 2);
    Rng rng(17);
    auto params = init_params(spec, rng);
    Tensor batch({1, 3}, {0.5, -1.0, 2.0});
    auto out = forward(spec, params, batch);

    // independent matrix multiply, relu, matrix multiply
    const Tensor& w1 = params.extractor[0];
    const Tensor& b1 = params.extractor[1];
    const Tensor& w2 = params.classifier[0];
    const Tensor& b2 = params.classifier[1];
    std::vector<double> hidden(2);
    for (int o = 0; o < 2; ++o) {
        double acc = b1[o];
        for (int i = 0; i < 3; ++i) acc += w1.at2(o, i) * batch[i];
        hidden[o] = std::max(0.0, acc);
    }
    for (int o = 0; o < 2; ++o) {
        double acc = b2[o];
        for (int i = 0; i < 2; ++i) acc += w2.at2(o, i) * hidden[i];
        EXPECT_NEAR(out.logits.at2(0, o), acc, 1e-14);
    }
}

TEST(Forward, ReportsFeaturesAndMaskInput) {
    auto spec = ModelSpec::mlp({3}, 4, 2);
    Rng rng(5);
    auto params = init_params(spec, rng);
    Tensor batch({2, 3}, {1, 2, 3, 4, 5, 6});
    auto out = forward(spec, params, batch);
    EXPECT_EQ(out.features.shape, (std::vector<std::size_t>{2, 4}));
    EXPECT_EQ(out.mask_input.shape, (std::vector<std::size_t>{2, 1, 1, 4}));
    EXPECT_EQ(out.mask_input.data, out.features.data);  // mlp: features are the hook
}

TEST(Forward, RejectsShapeMismatch) {
    auto spec = ModelSpec::mlp({4}, 8, 3);
    auto params = zero_params(spec);
    Tensor batch({2, 5});
    EXPECT_THROW(forward(spec, params, batch), std::invalid_argument);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
    Tensor logits({1, 2}, {0.0, 0.0});
    EXPECT_NEAR(cross_entropy(logits, {0}), std::log(2.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTrueClassApproachesZero) {
    Tensor logits({1, 3}, {60.0, 0.0, 0.0});
    EXPECT_LT(cross_entropy(logits, {0}), 1e-12);
}

TEST(CrossEntropy, MatchesNaiveSoftmaxOracle) {
    Rng rng(23);
    Tensor logits = Tensor::randn({4, 3}, rng);
    std::vector<int> labels = {2, 0, 1, 1};
    double expect = 0.0;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> row(logits.data.begin() + i * 3,
                                logits.data.begin() + (i + 1) * 3);
        expect += -std::log(oracle::naive_softmax_row(row)[labels[i]]);
    }
    expect /= 4.0;
    EXPECT_NEAR(cross_entropy(logits, labels), expect, 1e-12);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
    Tensor logits({1, 3});
    EXPECT_THROW(cross_entropy(logits, {3}), std::invalid_argument);
    EXPECT_THROW(cross_entropy(logits, {-1}), std::invalid_argument);
}

TEST(Softmax, RowsSumToOne) {
    Rng rng(31);
    Tensor logits = Tensor::randn({6, 5}, rng, 3.0);
    Tensor p = softmax_rows(logits);
    for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int j = 0; j < 5; ++j) s += p.at2(i, j);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Backward, BiasOnlyModelMatchesAnalyticGradient) {
    auto spec = linear_spec(2, 3);
    Tensor b({3}, {0.3, -0.2, 0.8});
    auto params = linear_params(Tensor::zeros({3, 2}), b);
    Tensor batch({1, 2});  // zero input
    auto res = backward(spec, params, batch, {1});

    auto p = oracle::naive_softmax_row({0.3, -0.2, 0.8});
    for (int k = 0; k < 3; ++k) {
        const double expect = p[k] - (k == 1 ? 1.0 : 0.0);
        EXPECT_NEAR(res.grads.classifier[1][k], expect, 1e-12);
    }
    for (double v : res.grads.classifier[0].data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Backward, DuplicatedSampleLeavesMeanGradUnchanged) {
    auto spec = ModelSpec::mlp({3}, 4, 2);
    Rng rng(7);
    auto params = init_params(spec, rng);
    Tensor one({1, 3}, {0.2, -0.4, 1.1});
    Tensor two({2, 3}, {0.2, -0.4, 1.1, 0.2, -0.4, 1.1});
    auto g1 = flatten(backward(spec, params, one, {1}).grads);
    auto g2 = flatten(backward(spec, params, two, {1, 1}).grads);
    for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-14);
}

TEST(Backward, FiniteDifferenceMlp) {
    Rng rng(101);
    auto spec = ModelSpec::mlp({5}, 6, 3);
    auto params = init_params(spec, rng);
    Tensor batch = Tensor::randn({4, 5}, rng);
    std::vector<int> labels = {0, 2, 1, 2};
    EXPECT_LT(oracle::max_grad_err(spec, params, batch, labels), 1e-4);
}

TEST(Backward, FiniteDifferenceConv) {
    Rng rng(102);
    auto spec = ModelSpec::tiny_conv(1, 8, 8, 2, 2, 3, /*kernel=*/3);
    auto params = init_params(spec, rng);
    Tensor batch = Tensor::randn({2, 1, 8, 8}, rng);
    std::vector<int> labels = {1, 2};
    EXPECT_LT(oracle::max_grad_err(spec, params, batch, labels), 1e-4);
}

TEST(Backward, FiniteDifferenceWithMask) {
    Rng rng(103);
    auto spec = ModelSpec::tiny_conv(1, 8, 8, 2, 2, 3, /*kernel=*/3);
    auto params = init_params(spec, rng);
    Tensor batch = Tensor::randn({2, 1, 8, 8}, rng);
    std::vector<int> labels = {0, 1};
    // spatial mask at the second relu output (4x4): zero half the positions
    Tensor mask({4, 4});
    for (std::size_t i = 0; i < mask.size(); ++i) mask.data[i] = i % 2 ? 1.0 : 0.0;
    EXPECT_LT(oracle::max_grad_err(spec, params, batch, labels, &mask), 1e-4);
}

TEST(Backward, Deterministic) {
    Rng rng(11);
    auto spec = ModelSpec::mlp({4}, 5, 3);
    auto params = init_params(spec, rng);
    Tensor batch = Tensor::randn({3, 4}, rng);
    std::vector<int> labels = {0, 1, 2};
    auto a = backward(spec, params, batch, labels);
    auto b = backward(spec, params, batch, labels);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(flatten(a.grads), flatten(b.grads));
}

TEST(SgdStep, ZeroLrKeepsParams) {
    Rng rng(3);
    auto spec = ModelSpec::mlp({2}, 3, 2);
    auto params = init_params(spec, rng);
    auto g = backward(spec, params, Tensor({1, 2}, {1.0, 2.0}), {0}).grads;
    auto next = sgd_step(params, g, 0.0);
    EXPECT_EQ(flatten(next), flatten(params));
}

TEST(SgdStep, BasicArithmetic) {
    auto spec = linear_spec(1, 1);
    auto p = linear_params(Tensor({1, 1}, {1.0}), Tensor::zeros({1}));
    Gradients g;
    g.classifier = {Tensor({1, 1}, {2.0}), Tensor::zeros({1})};
    auto next = sgd_step(p, g, 0.5);
    EXPECT_DOUBLE_EQ(next.classifier[0][0], 0.0);
}

TEST(SgdStep, TwoStepsEqualSummedGradsOnlyWhenIdentical) {
    auto spec = linear_spec(1, 1);
    auto p = linear_params(Tensor({1, 1}, {1.0}), Tensor::zeros({1}));
    Gradients g;
    g.classifier = {Tensor({1, 1}, {0.3}), Tensor({1}, {0.1})};
    const double lr = 0.25;
    auto two = sgd_step(sgd_step(p, g, lr), g, lr);
    Gradients doubled;
    doubled.classifier = {Tensor({1, 1}, {0.6}), Tensor({1}, {0.2})};
    auto summed = sgd_step(p, doubled, lr);
    EXPECT_NEAR(two.classifier[0][0], summed.classifier[0][0], 1e-15);
    EXPECT_NEAR(two.classifier[1][0], summed.classifier[1][0], 1e-15);
}

TEST(ClassifierGrads, OuterProductForSingleSample) {
    // linear classifier, feature [1, 0], 2 classes, label 0
    std::vector<Tensor> cls = {Tensor::zeros({2, 2}), Tensor::zeros({2})};
    Tensor feats({1, 2}, {1.0, 0.0});
    auto g = classifier_grads(cls, feats, {0});
    // softmax of zero logits = [.5, .5]; e = [.5-1, .5] = [-.5, .5]
    EXPECT_NEAR(g[0].at2(0, 0), -0.5, 1e-12);
    EXPECT_NEAR(g[0].at2(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(g[0].at2(1, 0), 0.5, 1e-12);
    EXPECT_NEAR(g[0].at2(1, 1), 0.0, 1e-12);
    EXPECT_NEAR(g[1][0], -0.5, 1e-12);
    EXPECT_NEAR(g[1][1], 0.5, 1e-12);
}

TEST(ClassifierGrads, ZeroFeatureZeroesWeightGradOnly) {
    Rng rng(19);
    std::vector<Tensor> cls = {Tensor::randn({3, 4}, rng), Tensor::randn({3}, rng)};
    Tensor feats({2, 4});  // zeros
    auto g = classifier_grads(cls, feats, {0, 2});
    for (double v : g[0].data) EXPECT_DOUBLE_EQ(v, 0.0);
    double bias_norm = 0.0;
    for (double v : g[1].data) bias_norm += std::fabs(v);
    EXPECT_GT(bias_norm, 0.0);
}

TEST(ClassifierGrads, AgreesWithFullBackwardOnClassifierBlock) {
    Rng rng(29);
    auto spec = ModelSpec::mlp({4}, 6, 3);
    auto params = init_params(spec, rng);
    Tensor batch = Tensor::randn({5, 4}, rng);
    std::vector<int> labels = {0, 1, 2, 1, 0};

    auto full = backward(spec, params, batch, labels);
    auto feats = forward(spec, params, batch).features;
    auto g = classifier_grads(params.classifier, feats, labels);
    for (std::size_t i = 0; i < g[0].size(); ++i)
        EXPECT_NEAR(g[0].data[i], full.grads.classifier[0].data[i], 1e-12);
    for (std::size_t i = 0; i < g[1].size(); ++i)
        EXPECT_NEAR(g[1].data[i], full.grads.classifier[1].data[i], 1e-12);
}

TEST(Training, FiftyStepsStrictlyDecreaseLoss) {
    Rng rng(41);
    auto spec = ModelSpec::mlp({4}, 8, 3);
    auto params = init_params(spec, rng);
    Tensor batch = Tensor::randn({6, 4}, rng);
    std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 50; ++step) {
        auto res = backward(spec, params, batch, labels);
        EXPECT_LT(res.loss, prev);
        prev = res.loss;
        params = sgd_step(params, res.grads, 0.05);
    }
}

TEST(Params, FlattenUnflattenRoundTrip) {
    Rng rng(53);
    auto spec = ModelSpec::tiny_conv(1, 12, 12, 2, 3, 4);
    auto params = init_params(spec, rng);
    auto flat = flatten(params);
    auto back = unflatten(spec, flat);
    EXPECT_EQ(flatten(back), flat);
    flat.push_back(0.0);
    EXPECT_THROW(unflatten(spec, flat), std::invalid_argument);
}

TEST(Params, CongruenceChecked) {
    auto spec = ModelSpec::mlp({4}, 8, 3);
    auto params = zero_params(spec);
    params.classifier[0] = Tensor::zeros({3, 7});
    EXPECT_THROW(forward(spec, params, Tensor({1, 4})), std::invalid_argument);
}
