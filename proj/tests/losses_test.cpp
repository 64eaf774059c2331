#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gkd/errors.hpp"
#include "gkd/losses.hpp"
#include "support.hpp"

using namespace gkd;
namespace t = gkd::testing;

namespace {

SimilarityGraph graph_of(const Tensor& adjacency) {
    return SimilarityGraph{adjacency.rows(), adjacency, adjacency, GraphParams{}};
}

// Enumerates ordered pairs directly on row vectors.
double rkdd_oracle(const t::Grid& s, const t::Grid& te) {
    auto distances = [](const t::Grid& x) {
        std::vector<double> d;
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = 0; j < x.size(); ++j) {
                if (i == j) continue;
                double acc = 0;
                for (std::size_t c = 0; c < x[i].size(); ++c) acc += std::pow(x[i][c] - x[j][c], 2);
                d.push_back(std::sqrt(acc));
            }
        double mean = 0;
        for (double v : d) mean += v;
        mean /= static_cast<double>(d.size());
        for (double& v : d) v = mean > 0 ? v / mean : 0.0;
        return d;
    };
    const auto ds = distances(s), dt = distances(te);
    double total = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double a = std::abs(ds[i] - dt[i]);
        total += a <= 1 ? 0.5 * a * a : a - 0.5;
    }
    return total / static_cast<double>(ds.size());
}

}  // namespace

TEST(Losses, TaskLossExamples) {
    const std::vector<std::size_t> one{1};
    EXPECT_NEAR(task_loss(Tensor::matrix({{1, 0}}), one).item(), 1.31326169, 1e-8);
    const std::vector<std::size_t> two{0, 1};
    EXPECT_NEAR(task_loss(Tensor::matrix({{3, 3}, {-1, -1}}), two).item(), std::log(2.0), 1e-12);
    EXPECT_LT(task_loss(Tensor::matrix({{0, 800}}), one).item(), 1e-12);
    EXPECT_THROW(task_loss(Tensor::matrix({{1, 0}}), std::vector<std::size_t>{2}), ContractError);
}

TEST(Losses, HuberExamples) {
    EXPECT_EQ(huber(0.3, 0.3), 0.0);
    EXPECT_EQ(huber(0.0, 0.5), 0.125);
    EXPECT_EQ(huber(0.0, 3.0), 2.5);
    EXPECT_EQ(huber(2.0, 1.0), 0.5);
}

TEST(Losses, IkdExamples) {
    const std::vector<Tensor> s{Tensor::matrix({{1, 1}})}, te{Tensor::matrix({{0, 0}})};
    EXPECT_DOUBLE_EQ(ikd_loss(s, te).item(), 2.0);
    EXPECT_EQ(ikd_loss(s, s).item(), 0.0);
    const std::vector<Tensor> wide{Tensor::matrix({{0, 0, 0}})};
    try {
        ikd_loss(s, wide);
        FAIL() << "expected a dimension error";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("same dimension"), std::string::npos);
    }
}

TEST(Losses, RkddExamples) {
    const std::vector<Tensor> te{Tensor::matrix({{0}, {1}, {2}})};
    const std::vector<Tensor> s{Tensor::matrix({{0}, {1}, {3}})};
    EXPECT_NEAR(rkdd_loss(s, te).item(),
                rkdd_oracle(t::to_grid(s[0]), t::to_grid(te[0])), 1e-15);
    EXPECT_NEAR(rkdd_loss(s, te).item(), 0.125 / 6.0, 1e-15);
    EXPECT_EQ(rkdd_loss(te, te).item(), 0.0);
    const std::vector<Tensor> doubled{Tensor::matrix({{0}, {2}, {4}})};
    EXPECT_NEAR(rkdd_loss(doubled, te).item(), 0.0, 1e-15);
    const std::vector<Tensor> single{Tensor::matrix({{1}})};
    EXPECT_THROW(rkdd_loss(single, single), ContractError);
}

TEST(Losses, RkddZeroSpreadTap) {
    const std::vector<Tensor> flat{Tensor::matrix({{1, 1}, {1, 1}})};
    const std::vector<Tensor> te{Tensor::matrix({{0, 0}, {3, 4}})};
    // Δ^S = 0 maps student distances to 0; teacher normalized distance is 1.
    EXPECT_DOUBLE_EQ(rkdd_loss(flat, te).item(), 0.5);
}

TEST(Losses, RkddRandomMatchesOracle) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor s = t::random_matrix(rng, 5, 3, -2, 2);
        const Tensor te = t::random_matrix(rng, 5, 4, -2, 2);
        const std::vector<Tensor> ss{s}, tt{te};
        EXPECT_NEAR(rkdd_loss(ss, tt).item(), rkdd_oracle(t::to_grid(s), t::to_grid(te)), 1e-13);
    }
}

TEST(Losses, GkdExamples) {
    const std::vector<SimilarityGraph> s{graph_of(Tensor::matrix({{0, 1.0}, {1.0, 0}}))};
    const std::vector<SimilarityGraph> te{graph_of(Tensor::matrix({{0, 0.9}, {0.9, 0}}))};
    EXPECT_NEAR(gkd_loss(s, te).item(), 0.02, 1e-15);
    EXPECT_EQ(gkd_loss(s, s).item(), 0.0);
    const std::vector<SimilarityGraph> big{graph_of(Tensor::identity(3))};
    EXPECT_THROW(gkd_loss(s, big), DimensionError);
}

TEST(Losses, GkdTeacherIsConstant) {
    Tensor sa = Tensor::matrix(2, 2, {0, 1.0, 1.0, 0}, true);
    Tensor ta = Tensor::matrix(2, 2, {0, 0.9, 0.9, 0}, true);
    const std::vector<SimilarityGraph> s{graph_of(sa)}, te{graph_of(ta)};
    backward(gkd_loss(s, te));
    EXPECT_NEAR(sa.grad()[1], 0.2, 1e-12);
    EXPECT_FALSE(ta.has_grad());
}

TEST(Losses, CombinedExamples) {
    EXPECT_NEAR(combined_loss(0.7, 0.01, 25).total, 0.95, 1e-12);
    EXPECT_EQ(combined_loss(0.4, 123.0, 0).total, 0.4);
    EXPECT_EQ(combined_loss(0, 0, 25).total, 0.0);
    EXPECT_THROW(combined_loss(0.1, 0.1, -1), ContractError);
    const auto b = combined_loss(0.3, 0.2, 1.5);
    EXPECT_NEAR(b.total, b.task + b.lambda_kd * b.kd, 1e-12);
}

TEST(Losses, CombinedLinearInLambda) {
    const double task = 0.37, kd = 0.021;
    const double l1 = 3.0, l2 = 22.0;
    const double joint = combined_loss(task, kd, l1 + l2).total;
    EXPECT_NEAR(joint, task + (l1 + l2) * kd, 1e-12);
}

TEST(Losses, PerExampleGkdPartitionsLoss) {
    std::mt19937_64 rng(2);
    const Tensor s = t::random_matrix(rng, 6, 3, -1, 1);
    const Tensor te = t::random_matrix(rng, 6, 3, -1, 1);
    const GraphParams params{3, 1, MaskMode::all};
    const std::vector<SimilarityGraph> gs{build_similarity_graph(s, params)};
    const std::vector<SimilarityGraph> gt{build_similarity_graph(te, params)};
    const auto rows = per_example_gkd(gs[0].adjacency, gt[0].adjacency);
    double total = 0;
    for (double v : rows) total += v;
    EXPECT_NEAR(total, gkd_loss(gs, gt).item(), 1e-14);
    EXPECT_EQ(per_example_gkd(gs[0].adjacency, gs[0].adjacency), std::vector<double>(6, 0.0));
}

TEST(Losses, PerExampleGkdConcentratedRow) {
    Tensor a = Tensor::zeros({3, 3});
    Tensor b = Tensor::matrix({{0, 0.5, 0}, {0.5, 0, 0.5}, {0, 0.5, 0}});
    const auto rows = per_example_gkd(a, b);
    EXPECT_DOUBLE_EQ(rows[1], 0.5);
    EXPECT_DOUBLE_EQ(rows[0], 0.25);
    EXPECT_DOUBLE_EQ(rows[2], 0.25);
}

TEST(Losses, PerExampleRkddAndIkdPartitionLoss) {
    std::mt19937_64 rng(4);
    const std::vector<Tensor> s{t::random_matrix(rng, 5, 3, -1, 1), t::random_matrix(rng, 5, 2, -1, 1)};
    const std::vector<Tensor> te{t::random_matrix(rng, 5, 3, -1, 1), t::random_matrix(rng, 5, 2, -1, 1)};
    double r = 0, k = 0;
    for (double v : per_example_rkdd(s, te)) r += v;
    for (double v : per_example_ikd(s, te)) k += v;
    EXPECT_NEAR(r, rkdd_loss(s, te).item(), 1e-14);
    EXPECT_NEAR(k, ikd_loss(s, te).item(), 1e-14);
}
