#include "rosbot_fixture.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace zonotube;
using namespace zonotube::sysid;

namespace {

using Scenario = fixture::Scenario;

Scenario rosbot_scenario(std::uint64_t seed, Eigen::Index T, double alpha) { return fixture::rosbot(seed, T, alpha); }

Mat theta_of(const Scenario& s) { return s.theta(); }

using fixture::offline_prior;

}  // namespace

TEST(CollectBatch, NeedsKernelColumns)
{
    std::mt19937_64 rng(1);
    auto [A, B] = sim::rosbot_model(0.1);
    EXPECT_THROW(collect_batch(A, B, sim::rosbot_disturbance(0.5), sim::rosbot_input_set(), 7, {}, rng),
                 std::invalid_argument);
}

TEST(CollectBatch, NoiselessScalarDynamics)
{
    std::mt19937_64 rng(2);
    const Mat A = Mat::Constant(1, 1, 0.5);
    const Mat B = Mat::Ones(1, 1);
    const DataBatch b = collect_batch(A, B, Zonotope::point(Vec::Zero(1)), Polytope::symmetric_box(Vec::Ones(1)), 3, {}, rng);
    EXPECT_LE((b.X1 - 0.5 * b.X0 - b.U0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CollectBatch, RosbotRankAndInvariants)
{
    const Scenario s = rosbot_scenario(3, 20, 0.5);
    EXPECT_EQ(s.batch.rank, 7);
    EXPECT_LE((s.batch.D0 * s.batch.D0_pinv - Mat::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LE((s.batch.D0 * s.batch.D0_kernel).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(s.batch.D0_kernel.cols(), 13);
    EXPECT_TRUE(s.batch.X1.leftCols(19).isApprox(s.batch.X0.rightCols(19)));
    // Inputs stay inside half the admissible wheel-speed range.
    EXPECT_LE(s.batch.U0.cwiseAbs().maxCoeff(), 50.0);
}

TEST(OpenLoopSet, NoiselessExactRecovery)
{
    const Scenario s = rosbot_scenario(4, 20, 0.0);
    const MatrixZonotope mol = open_loop_set(s.batch, concat_disturbance(s.Zw, 20));
    EXPECT_LE((mol.center() - theta_of(s)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(mol.generators().cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OpenLoopSet, KnownConstantDisturbanceCancels)
{
    std::mt19937_64 rng(5);
    auto [A, B] = sim::rosbot_model(0.1);
    Vec c(3);
    c << 0.2, -0.1, 0.05;
    const Zonotope constant = Zonotope::point(c);
    const DataBatch b = collect_batch(A, B, constant, sim::rosbot_input_set(), 15, {}, rng);
    const MatrixZonotope mol = open_loop_set(b, concat_disturbance(Zonotope(c, Mat::Zero(3, 2)), 15));
    Mat th(3, 7);
    th << A, B;
    EXPECT_LE((mol.center() - th).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OpenLoopSet, TruthIsMember)
{
    for (std::uint64_t seed : {6u, 7u, 8u}) {
        const Scenario s = rosbot_scenario(seed, 12, 0.7);
        EXPECT_TRUE(membership(open_loop_set(s.batch, concat_disturbance(s.Zw, 12)), theta_of(s)));
    }
}

TEST(RefineDisturbance, TruthIsMemberAndKernelIdentity)
{
    const Scenario s = rosbot_scenario(9, 20, 0.7);
    const ConstrainedMatrixZonotope mw = refine_disturbance_data(s.batch, concat_disturbance(s.Zw, 20));
    EXPECT_TRUE(membership(mw, s.W0));
    std::mt19937_64 rng(10);
    for (int k = 0; k < 20; ++k) {
        const Mat W = sample(mw, rng);
        EXPECT_LE(((s.batch.X1 - W) * s.batch.D0_kernel).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(RefineDisturbance, EmptyKernelLeavesSetUnconstrained)
{
    std::mt19937_64 rng(11);
    const Mat X = Mat::Random(1, 3);
    const Mat U = Mat::Random(1, 2);
    const DataBatch b = DataBatch::from_trajectory(X, U);  // n + m = T = 2
    ASSERT_EQ(b.D0_kernel.cols(), 0);
    const ConstrainedMatrixZonotope mw =
        refine_disturbance_data(b, concat_disturbance(Zonotope(Vec::Zero(1), Mat::Ones(1, 1)), 2));
    EXPECT_TRUE(mw.constraints().empty());
}

TEST(RefineDisturbance, NoiselessSingleton)
{
    const Scenario s = rosbot_scenario(12, 10, 0.0);
    const ConstrainedMatrixZonotope mw = refine_disturbance_data(s.batch, concat_disturbance(s.Zw, 10));
    EXPECT_TRUE(mw.center().isZero());
    EXPECT_TRUE(mw.generators().isZero());
    EXPECT_TRUE(membership(mw, Mat::Zero(3, 10)));
}

TEST(RefineDisturbance, TooSmallNoiseModelIsEmpty)
{
    const Scenario s = rosbot_scenario(13, 20, 1.0);
    EXPECT_THROW(refine_disturbance_data(s.batch, concat_disturbance(sim::rosbot_disturbance(0.01), 20)),
                 empty_set_error);
}

TEST(PriorDisturbance, SingletonPrior)
{
    const Scenario clean = rosbot_scenario(14, 12, 0.0);
    const ConstrainedMatrixZonotope md0 = prior_disturbance_set(clean.batch, singleton_prior(theta_of(clean)));
    EXPECT_LE(md0.center().cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(md0.num_generators(), 0);

    const Scenario noisy = rosbot_scenario(15, 12, 0.8);
    const ConstrainedMatrixZonotope md = prior_disturbance_set(noisy.batch, singleton_prior(theta_of(noisy)));
    EXPECT_LE((md.center() - noisy.W0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PriorDisturbance, GenericPriorContainsTruth)
{
    const ConstrainedMatrixZonotope prior = offline_prior(16);
    const Scenario s = rosbot_scenario(17, 15, 0.6);
    EXPECT_TRUE(membership(prior_disturbance_set(s.batch, prior), s.W0));
}

TEST(Intersect, FullSpacePriorMatchesDataSet)
{
    const Scenario s = rosbot_scenario(18, 12, 0.5);
    const ConstrainedMatrixZonotope mw = refine_disturbance_data(s.batch, concat_disturbance(s.Zw, 12));
    // A prior whose disturbance image covers everything that matters: theta* plus huge box.
    Mat G = Mat::Zero(3, 7 * 21);
    for (int k = 0; k < 21; ++k) G(k % 3, 7 * k + k / 3) = 1e3;
    const ConstrainedMatrixZonotope loose(MatrixZonotope(theta_of(s), G));
    const ConstrainedMatrixZonotope mdw = intersect_disturbance(mw, prior_disturbance_set(s.batch, loose));
    const ConstrainedMatrixZonotope self = intersect_disturbance(mw, mw);
    std::mt19937_64 rng(19);
    for (int k = 0; k < 100; ++k) {
        const Mat W = (k % 2) ? sample(mw, rng) : Mat(mw.center() + 0.02 * Mat::Random(3, 12));
        const bool in = membership(mw, W);
        EXPECT_EQ(membership(mdw, W), in) << k;
        EXPECT_EQ(membership(self, W), in) << k;
    }
}

TEST(Intersect, TruthAndNesting)
{
    const ConstrainedMatrixZonotope prior = offline_prior(20);
    const Scenario s = rosbot_scenario(21, 20, 0.7);
    const ModelSets sets = build_model_sets(s.batch, s.Zw, Refinement::data_prior, &prior);
    EXPECT_TRUE(membership(sets.mdw, s.W0));
    EXPECT_TRUE(membership(sets.mol_c, theta_of(s)));
    std::mt19937_64 rng(22);
    for (int k = 0; k < 20; ++k) {
        const Mat W = sample(sets.mdw, rng);
        EXPECT_TRUE(membership(sets.mw, W));
        EXPECT_TRUE(membership(*sets.md, W));
        EXPECT_LE(((s.batch.X1 - W) * s.batch.D0_kernel).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Intersect, ContradictionIsSurfaced)
{
    const Scenario s = rosbot_scenario(23, 15, 0.5);
    Mat wrong = theta_of(s);
    wrong(0, 0) += 0.5;
    const ConstrainedMatrixZonotope prior = singleton_prior(wrong);
    EXPECT_THROW(build_model_sets(s.batch, s.Zw, Refinement::data_prior, &prior), prior_data_conflict);
}

TEST(RefinedOpenLoop, NoiselessExactPrior)
{
    const Scenario s = rosbot_scenario(24, 20, 0.0);
    const ConstrainedMatrixZonotope prior = singleton_prior(theta_of(s));
    const ModelSets sets = build_model_sets(s.batch, s.Zw, Refinement::data_prior, &prior);
    EXPECT_LE((sets.nominal_A - s.A).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((sets.nominal_B - s.B).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(sets.mol_c.generators().cwiseAbs().maxCoeff(), 1e-9);
}

TEST(RefinedOpenLoop, NestedInOpenLoopSet)
{
    const Scenario s = rosbot_scenario(25, 15, 0.7);
    const ModelSets sets = build_model_sets(s.batch, s.Zw, Refinement::data_only);
    EXPECT_TRUE(membership(sets.mol_c, theta_of(s)));
    const MatrixZonotope mol = open_loop_set(s.batch, sets.mw_T);
    std::mt19937_64 rng(26);
    for (int k = 0; k < 100; ++k) EXPECT_TRUE(membership(mol, sample(sets.mol_c, rng)));
    Mat nominal(3, 7);
    nominal << sets.nominal_A, sets.nominal_B;
    EXPECT_TRUE(nominal.isApprox(sets.mol_c.realize(sets.reference)));
    // The nominal model is itself a member of the refined set.
    EXPECT_TRUE(membership(sets.mol_c, nominal));
}

TEST(ClosedLoopSet, TruthMemberSingletonAndShape)
{
    const Scenario s = rosbot_scenario(27, 20, 0.7);
    const ModelSets sets = build_model_sets(s.batch, s.Zw, Refinement::data_only);
    std::mt19937_64 rng(28);
    for (int k = 0; k < 5; ++k) {
        const Mat K = 5.0 * Mat::Random(4, 3);
        Mat target(7, 3);
        target << Mat::Identity(3, 3), K;
        const Mat V = s.batch.D0_pinv * target + s.batch.D0_kernel * (0.1 * Mat::Random(13, 3));
        const ConstrainedMatrixZonotope mcl = closed_loop_set(s.batch, sets.mdw, V);
        EXPECT_EQ(mcl.rows(), 3);
        EXPECT_EQ(mcl.cols(), 3);
        EXPECT_TRUE(membership(mcl, Mat(s.A + s.B * s.batch.U0 * V)));
    }
    EXPECT_THROW(closed_loop_set(s.batch, sets.mdw, Mat::Zero(20, 3)), std::invalid_argument);

    const Scenario clean = rosbot_scenario(29, 20, 0.0);
    const ModelSets cs = build_model_sets(clean.batch, clean.Zw, Refinement::data_only);
    Mat target(7, 3);
    target << Mat::Identity(3, 3), Mat::Zero(4, 3);
    const Mat V = clean.batch.D0_pinv * target;
    const ConstrainedMatrixZonotope mcl = closed_loop_set(clean.batch, cs.mdw, V);
    EXPECT_LE(mcl.generators().cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((mcl.center() - clean.A).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(OfflinePrior, NoiselessSingletonAndTruth)
{
    std::mt19937_64 rng(30);
    auto [A, B] = sim::rosbot_model(0.1);
    Mat th(3, 7);
    th << A, B;
    const Zonotope zero(Vec::Zero(3), Mat::Zero(3, 2));
    const DataBatch off = collect_batch(A, B, zero, sim::rosbot_input_set(), 17, {}, rng);
    const ConstrainedMatrixZonotope p0 = build_prior_from_offline(off, zero);
    EXPECT_LE((p0.center() - th).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(p0.generators().cwiseAbs().maxCoeff(), 1e-9);

    for (std::uint64_t seed : {31u, 32u, 33u}) EXPECT_TRUE(membership(offline_prior(seed), th));

    const ConstrainedMatrixZonotope a = offline_prior(34), b = offline_prior(34);
    EXPECT_TRUE(a.center() == b.center());
    EXPECT_TRUE(a.generators() == b.generators());
}
