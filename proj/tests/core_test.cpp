#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "mupfl/rng.hpp"
#include "mupfl/serialize.hpp"
#include "mupfl/tensor.hpp"

using namespace mupfl;

TEST(Tensor, ShapeDataInvariant) {
    Tensor t({2, 3});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), std::invalid_argument);
}

TEST(Tensor, ReshapePreservesData) {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    EXPECT_EQ(r.data, t.data);
    EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Tensor, Indexing) {
    Tensor t({2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(t.at2(1, 0), 3.0);
    Tensor q({1, 2, 2, 2});
    q.at4(0, 1, 1, 0) = 7.0;
    EXPECT_DOUBLE_EQ(q.data[6], 7.0);
}

TEST(Tensor, Stats) {
    Tensor t({4}, {1, -2, 3, 0});
    EXPECT_DOUBLE_EQ(t.min(), -2.0);
    EXPECT_DOUBLE_EQ(t.max(), 3.0);
    EXPECT_DOUBLE_EQ(t.mean(), 0.5);
    EXPECT_TRUE(t.all_finite());
    t.data[1] = std::nan("");
    EXPECT_FALSE(t.all_finite());
}

TEST(Rng, Deterministic) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, BelowInRange) {
    Rng r(7);
    for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(13), 13u);
}

TEST(Rng, NormalMoments) {
    Rng r(3);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.02);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, GammaMean) {
    // Gamma(alpha, 1) has mean alpha.
    for (double alpha : {0.3, 1.0, 4.5}) {
        Rng r(11);
        double sum = 0.0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) sum += r.gamma(alpha);
        EXPECT_NEAR(sum / n, alpha, 0.05 * alpha + 0.01);
    }
}

TEST(Rng, DirichletSumsToOne) {
    Rng r(5);
    for (double alpha : {0.1, 1.0, 1e6}) {
        auto p = r.dirichlet(alpha, 8);
        double s = 0.0;
        for (double v : p) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Rng, SampleIndicesDistinct) {
    Rng r(9);
    auto idx = r.sample_indices(20, 10);
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(std::unique(idx.begin(), idx.end()), idx.end());
    for (auto i : idx) EXPECT_LT(i, 20u);
}

TEST(Rng, DeriveSeedSeparatesStreams) {
    EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
    EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
    EXPECT_EQ(derive_seed(5, 6, 7, 8), derive_seed(5, 6, 7, 8));
}

TEST(Serialize, TensorRoundTrip) {
    Rng r(1);
    Tensor t = Tensor::randn({3, 4, 2}, r);
    std::stringstream ss;
    io::write_tensor(ss, t);
    Tensor u = io::read_tensor(ss);
    EXPECT_EQ(u, t);
}

TEST(Serialize, TruncatedTensorFails) {
    std::stringstream ss;
    io::write_u32(ss, io::kTensorMagic);
    io::write_u32(ss, 1);
    io::write_u64(ss, 5);  // promises 5 doubles, provides none
    EXPECT_THROW(io::read_tensor(ss), std::runtime_error);
}

TEST(Serialize, BadMagicFails) {
    std::stringstream ss;
    io::write_u32(ss, 0xdeadbeef);
    EXPECT_THROW(io::read_tensor(ss), std::runtime_error);
}

TEST(Serialize, FileRoundTrip) {
    const std::string path = std::filesystem::temp_directory_path() / "mupfl_t.bin";
    Rng r(2);
    Tensor t = Tensor::randn({5, 5}, r);
    io::save_tensor(t, path);
    EXPECT_EQ(io::load_tensor(path), t);
    std::remove(path.c_str());
}
