#include <zonotube/serialize.hpp>
#include <zonotube/setops.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace zonotube;

namespace {

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c)
{
    std::normal_distribution<double> nd;
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = nd(rng);
    return m;
}

// Bounded polytope with the origin inside: random facets plus a bounding box.
Polytope random_polytope(std::mt19937_64& rng, Eigen::Index n, Eigen::Index extra)
{
    Mat H(extra + 2 * n, n);
    H << randn(rng, extra, n), Mat::Identity(n, n), -Mat::Identity(n, n);
    Vec h(H.rows());
    std::uniform_real_distribution<double> ud(0.5, 1.5);
    for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = ud(rng);
    return Polytope(H, h);
}

}  // namespace

TEST(MinkowskiSum, Definition)
{
    Vec c(2);
    c << 1, 0;
    Mat g(2, 1);
    g << 0.5, 0;
    const Zonotope a(Vec::Zero(2), Mat::Identity(2, 2));
    const Zonotope s = minkowski_sum(a, Zonotope(c, g));
    EXPECT_TRUE(s.center().isApprox(c));
    Mat expected(2, 3);
    expected << 1, 0, 0.5, 0, 1, 0;
    EXPECT_TRUE(s.generators().isApprox(expected));
}

TEST(MinkowskiSum, SingletonIsIdentity)
{
    std::mt19937_64 rng(1);
    const Zonotope z(randn(rng, 3, 1), randn(rng, 3, 4));
    const Zonotope s = minkowski_sum(z, Zonotope::point(Vec::Zero(3)));
    EXPECT_TRUE(s.center().isApprox(z.center()));
    EXPECT_TRUE(s.generators().isApprox(z.generators()));
}

TEST(MinkowskiSum, SupportAdditivity)
{
    std::mt19937_64 rng(2);
    const Zonotope a(randn(rng, 2, 1), randn(rng, 2, 3));
    const Zonotope b(randn(rng, 2, 1), randn(rng, 2, 5));
    const Zonotope s = minkowski_sum(a, b);
    for (int k = 0; k < 16; ++k) {
        const double th = 2 * M_PI * k / 16;
        Vec d(2);
        d << std::cos(th), std::sin(th);
        // LP route on the sum against the closed form on the parts.
        EXPECT_NEAR(support_cz(ConstrainedZonotope(s), d), support(a, d) + support(b, d), 1e-9);
    }
    EXPECT_THROW(minkowski_sum(a, Zonotope::point(Vec::Zero(3))), dimension_error);
}

TEST(LinearMap, IdentityZeroAndSampling)
{
    std::mt19937_64 rng(3);
    const Zonotope z(randn(rng, 3, 1), randn(rng, 3, 4));
    const Zonotope id = linear_map(Mat::Identity(3, 3), z);
    EXPECT_TRUE(id.generators().isApprox(z.generators()));
    const Zonotope zero = linear_map(Mat::Zero(2, 3), z);
    EXPECT_EQ(compact(zero).num_generators(), 0);
    EXPECT_TRUE(zero.center().isZero());

    const Mat M = randn(rng, 2, 3);
    const Zonotope img = linear_map(M, z);
    for (int k = 0; k < 1000; ++k) EXPECT_TRUE(membership(img, M * sample(z, rng)));
    EXPECT_THROW(linear_map(Mat::Zero(2, 2), z), dimension_error);
}

TEST(BlockRightMultiply, HandComputation)
{
    Mat G(2, 4);
    G << Mat::Identity(2, 2), 2 * Mat::Identity(2, 2);
    const MatrixZonotope mz(Mat::Zero(2, 2), G);
    const MatrixZonotope out = block_right_multiply(mz, Vec::Ones(2));
    ASSERT_EQ(out.num_generators(), 2);
    EXPECT_TRUE(Mat(out.generator(0)).isApprox(Mat::Ones(2, 1)));
    EXPECT_TRUE(Mat(out.generator(1)).isApprox(2 * Mat::Ones(2, 1)));

    const MatrixZonotope same = block_right_multiply(mz, Mat::Identity(2, 2));
    EXPECT_TRUE(same.generators().isApprox(G));
    EXPECT_THROW(block_right_multiply(mz, Mat::Identity(3, 3)), dimension_error);
}

TEST(BlockRightMultiply, MembersMapToMembers)
{
    std::mt19937_64 rng(4);
    // Constrained matrix zonotope with 4 generators of shape 2x3.
    Mat G = randn(rng, 2, 12);
    Mat A = randn(rng, 1, 4 * 1);  // one scalar block row
    const Vec beta0 = 0.5 * detail::uniform_cube(4, rng);
    Mat B(1, 1);
    B(0, 0) = (A * beta0)(0);
    const ConstrainedMatrixZonotope cmz(randn(rng, 2, 3), G, {{A, B}});
    const Mat Q = randn(rng, 3, 2);
    const ConstrainedMatrixZonotope mapped = block_right_multiply(cmz, Q);
    for (int k = 0; k < 50; ++k) {
        const Mat X = sample(cmz, rng);
        EXPECT_TRUE(membership(cmz, X));
        EXPECT_TRUE(membership(mapped, Mat(X * Q)));
    }
}

TEST(ConcatDisturbance, ConstructionRule)
{
    Mat g(1, 1);
    g << 0.7;
    Vec c(1);
    c << 0.2;
    const MatrixZonotope mz = concat_disturbance(Zonotope(c, g), 2);
    ASSERT_EQ(mz.num_generators(), 2);
    Mat b0(1, 2), b1(1, 2);
    b0 << 0.7, 0;
    b1 << 0, 0.7;
    EXPECT_TRUE(Mat(mz.generator(0)).isApprox(b0));
    EXPECT_TRUE(Mat(mz.generator(1)).isApprox(b1));
    EXPECT_TRUE(mz.center().isApprox(Mat::Constant(1, 2, 0.2)));

    std::mt19937_64 rng(5);
    const Zonotope zw(randn(rng, 3, 1), randn(rng, 3, 2));
    const MatrixZonotope one = concat_disturbance(zw, 1);
    ASSERT_EQ(one.num_generators(), 2);
    EXPECT_TRUE(Mat(one.generator(1)).isApprox(zw.generators().col(1)));

    const MatrixZonotope mw = concat_disturbance(zw, 6);
    for (int k = 0; k < 20; ++k) {
        Mat W(3, 6);
        for (int j = 0; j < 6; ++j) W.col(j) = sample(zw, rng);
        EXPECT_TRUE(membership(mw, W));
    }
    Mat far = mw.center();
    far.col(2) += 3.0 * zw.generators().cwiseAbs().rowwise().sum();
    EXPECT_FALSE(membership(mw, far));
}

TEST(Support, Boxes)
{
    const Polytope box = Polytope::symmetric_box(Vec::Ones(2));
    EXPECT_NEAR(support(box, Vec::Unit(2, 0)), 1.0, 1e-12);
    EXPECT_NEAR(support(box, Vec::Ones(2)), 2.0, 1e-12);
}

TEST(Support, MatchesVertexEnumeration)
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const Polytope P = random_polytope(rng, 3, 6);
        const auto V = vertices(P);
        ASSERT_GE(V.size(), 4u);
        for (int k = 0; k < 20; ++k) {
            const Vec d = randn(rng, 3, 1);
            double best = -kInf;
            for (const Vec& v : V) best = std::max(best, d.dot(v));
            EXPECT_NEAR(support(P, d), best, 1e-6);
        }
    }
}

TEST(Support, UnboundedIsPropagated)
{
    Mat H(1, 2);
    H << 1, 0;
    const Polytope half(H, Vec::Ones(1));
    EXPECT_THROW(support(half, Vec::Unit(2, 1)), optim::solver_error);
}

TEST(SupportCz, ClosedFormAndSingleton)
{
    std::mt19937_64 rng(7);
    const Zonotope z(randn(rng, 3, 1), randn(rng, 3, 5));
    const Vec d = randn(rng, 3, 1);
    EXPECT_NEAR(support_cz(ConstrainedZonotope(z), d),
                d.dot(z.center()) + (z.generators().transpose() * d).cwiseAbs().sum(), 1e-9);
    const Zonotope pt = Zonotope::point(z.center());
    EXPECT_NEAR(support_cz(ConstrainedZonotope(pt), d), d.dot(z.center()), 1e-12);
}

TEST(SupportCz, BoundedBelowByGrid)
{
    // Two generators tied by one equality: grid over the remaining free one.
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const Mat G = randn(rng, 2, 3);
        Mat A(1, 3);
        A << 1, -1, 0.5;
        Vec b(1);
        b << 0.2;
        const ConstrainedZonotope cz(Vec::Zero(2), G, A, b);
        const Vec d = randn(rng, 2, 1);
        double grid = -kInf;
        const int n = 400;
        for (int i = 0; i <= n; ++i)
            for (int k = 0; k <= n; ++k) {
                Vec z(3);
                z(0) = -1 + 2.0 * i / n;
                z(2) = -1 + 2.0 * k / n;
                z(1) = z(0) + 0.5 * z(2) - 0.2;
                if (std::abs(z(1)) > 1) continue;
                grid = std::max(grid, d.dot(G * z));
            }
        const double lp = support_cz(cz, d);
        EXPECT_LE(grid, lp + 1e-9);
        EXPECT_NEAR(grid, lp, 1e-3);
    }
}

TEST(IntervalEnclosure, HandCases)
{
    const IntervalBox unit = interval_enclosure(Polytope::symmetric_box(Vec::Ones(3)));
    EXPECT_TRUE(unit.lower.isApprox(-Vec::Ones(3)));
    EXPECT_TRUE(unit.upper.isApprox(Vec::Ones(3)));

    Mat H(3, 2);
    H << -1, 0, 0, -1, 1, 1;
    Vec h(3);
    h << 0, 0, 1;
    const IntervalBox simplex = interval_enclosure(Polytope(H, h));
    EXPECT_NEAR(simplex.lower.cwiseAbs().maxCoeff(), 0.0, 1e-12);
    EXPECT_TRUE(simplex.upper.isApprox(Vec::Ones(2)));
}

TEST(IntervalEnclosure, ContainsVertices)
{
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const Polytope P = random_polytope(rng, 3, 5);
        const IntervalBox box = interval_enclosure(P);
        for (const Vec& v : vertices(P)) EXPECT_TRUE(box.contains(v, 1e-9));
    }
}

TEST(InfNormBound, Cases)
{
    EXPECT_NEAR(inf_norm_bound(Polytope::symmetric_box(Vec::Ones(2))), 1.0, 1e-12);
    Vec lo(2), hi(2);
    lo << -2, 0;
    hi << 1, 3;
    EXPECT_NEAR(inf_norm_bound(Polytope::box(lo, hi)), 3.0, 1e-12);

    std::mt19937_64 rng(10);
    const Polytope P = random_polytope(rng, 3, 4);
    const double M = inf_norm_bound(P);
    HitAndRun walk = HitAndRun::in_polytope(P);
    for (int k = 0; k < 1000; ++k) EXPECT_LE(walk.next(rng).cwiseAbs().maxCoeff(), M + 1e-9);
}

TEST(Vertices, HandCases)
{
    const auto sq = vertices(Polytope::symmetric_box(Vec::Ones(2)));
    EXPECT_EQ(sq.size(), 4u);
    for (const Vec& v : sq) EXPECT_NEAR(v.cwiseAbs().minCoeff(), 1.0, 1e-12);

    Mat A(1, 2);
    A << 1, 1;
    const auto slice = box_slice_vertices(A, Vec::Zero(1));
    ASSERT_EQ(slice.size(), 2u);
    for (const Vec& v : slice) {
        EXPECT_NEAR(std::abs(v(0)), 1.0, 1e-12);
        EXPECT_NEAR(v(0), -v(1), 1e-12);
    }
}

TEST(Vertices, ActiveRankOracle)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const Polytope P = random_polytope(rng, 3, 5);
        for (const Vec& v : vertices(P)) {
            const Vec slack = P.h() - P.H() * v;
            EXPECT_GE(slack.minCoeff(), -1e-9);
            Mat active(0, 3);
            for (Eigen::Index i = 0; i < slack.size(); ++i)
                if (std::abs(slack(i)) <= 1e-8) {
                    active.conservativeResize(active.rows() + 1, 3);
                    active.row(active.rows() - 1) = P.H().row(i);
                }
            Eigen::FullPivLU<Mat> lu(active);
            EXPECT_EQ(lu.rank(), 3);
        }
    }
}

TEST(Vertices, CapRaises)
{
    EXPECT_THROW(vertices(Polytope::symmetric_box(Vec::Ones(40))), vertex_cap_exceeded);
}

TEST(Membership, CenterAndScaledOutside)
{
    std::mt19937_64 rng(12);
    const Zonotope z(randn(rng, 3, 1), randn(rng, 3, 3));
    EXPECT_TRUE(membership(z, z.center()));
    EXPECT_FALSE(membership(z, Vec(z.center() + 2.0 * z.generators().rowwise().sum())));

    Mat A(1, 3);
    A << 1, 1, 0;
    const ConstrainedZonotope cz(z.center(), z.generators(), A, Vec::Zero(1));
    EXPECT_TRUE(membership(cz, cz.center()));
    for (int k = 0; k < 100; ++k) {
        Vec zeta = detail::uniform_cube(3, rng);
        zeta(1) = -zeta(0);
        EXPECT_TRUE(membership(cz, Vec(cz.center() + cz.generators() * zeta)));
    }
}

TEST(Sample, DegenerateAndMembership)
{
    std::mt19937_64 rng(13);
    const Zonotope pt = Zonotope::point(Vec::Ones(2));
    EXPECT_TRUE(sample(pt, rng).isApprox(Vec::Ones(2)));

    // zeta forced to 0 by constraints
    const Mat G = randn(rng, 2, 2);
    const ConstrainedZonotope forced(Vec::Ones(2), G, Mat::Identity(2, 2), Vec::Zero(2));
    EXPECT_LE((sample(forced, rng) - Vec::Ones(2)).cwiseAbs().maxCoeff(), 1e-12);

    Mat A = randn(rng, 2, 12);  // two scalar block rows over 12 generators
    const Vec beta0 = 0.3 * detail::uniform_cube(12, rng);
    const Vec rhs = A * beta0;
    std::vector<EqualityBlock> blocks;
    for (int r = 0; r < 2; ++r) {
        Mat B(1, 1);
        B(0, 0) = rhs(r);
        blocks.push_back({A.row(r), B});
    }
    // 2x1 matrices so that each constraint block is a row of 12 scalars.
    const ConstrainedMatrixZonotope cmz(randn(rng, 2, 1), randn(rng, 2, 12), blocks);
    for (int k = 0; k < 1000; ++k) EXPECT_TRUE(membership(cmz, sample(cmz, rng)));
}

TEST(Sample, EmptyConstraintRejected)
{
    Mat A(2, 1);
    A << 1, 1;
    Vec b(2);
    b << 0.5, -0.5;
    EXPECT_THROW(ConstrainedZonotope(Vec::Zero(1), Mat::Ones(1, 1), A, b), empty_set_error);
}

TEST(Intersect, SelfAndFullSpace)
{
    std::mt19937_64 rng(14);
    // One 1x2 block row over 3 generators of shape 2x2.
    Mat Awide(1, 6);
    Awide << 1, 1, -1, -1, 0.5, 0.5;
    const Vec beta0 = 0.4 * detail::uniform_cube(3, rng);
    const Mat rhs = beta0(0) * Awide.leftCols(2) + beta0(1) * Awide.middleCols(2, 2) + beta0(2) * Awide.rightCols(2);
    const ConstrainedMatrixZonotope a(randn(rng, 2, 2), randn(rng, 2, 6), {{Awide, rhs}});
    const ConstrainedMatrixZonotope self = intersect(a, a);

    // Unconstrained box of half-width 100 around 0 in every entry.
    Mat G = Mat::Zero(2, 8);
    for (int k = 0; k < 4; ++k) G(k % 2, 2 * k + k / 2) = 100.0;
    const ConstrainedMatrixZonotope wide{MatrixZonotope(Mat::Zero(2, 2), G)};
    const ConstrainedMatrixZonotope with_wide = intersect(a, wide);
    for (int k = 0; k < 100; ++k) {
        const Mat X = (k % 2) ? sample(a, rng) : Mat(a.center() + randn(rng, 2, 2));
        const bool in = membership(a, X);
        EXPECT_EQ(membership(self, X), in) << k;
        EXPECT_EQ(membership(with_wide, X), in) << k;
    }
}

TEST(Json, RoundTrip)
{
    std::mt19937_64 rng(15);
    const Zonotope z(randn(rng, 3, 1), randn(rng, 3, 2));
    const Zonotope z2 = io::zonotope_from_json(io::to_json(z));
    EXPECT_TRUE(z2.generators().isApprox(z.generators()));

    Mat Awide(1, 6);
    Awide << 1, 1, -1, -1, 0, 0;
    const ConstrainedMatrixZonotope cmz(randn(rng, 2, 2), randn(rng, 2, 6), {{Awide, Mat::Zero(1, 2)}});
    const auto j = io::to_json(cmz);
    EXPECT_TRUE(j.contains("eq_A") && j.contains("eq_b") && j.contains("center") && j.contains("generators"));
    const ConstrainedMatrixZonotope back = io::constrained_matrix_zonotope_from_json(j);
    EXPECT_TRUE(back.generators().isApprox(cmz.generators()));
    EXPECT_TRUE(back.constraints()[0].A.isApprox(Awide));

    const Polytope P = Polytope::symmetric_box(Vec::Ones(2));
    const Polytope P2 = io::polytope_from_json(io::to_json(P));
    EXPECT_TRUE(P2.H().isApprox(P.H()) && P2.h().isApprox(P.h()));
}

TEST(Membership, ReducedMatrixTestMatchesFullResidual)
{
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const Eigen::Index s = 10;
        const Mat A = randn(rng, 4, s);
        const Vec beta0 = 0.5 * detail::uniform_cube(s, rng);
        const Vec rhs = A * beta0;
        std::vector<EqualityBlock> blocks;
        for (int r = 0; r < 4; ++r) {
            Mat B(1, 1);
            B(0, 0) = rhs(r);
            blocks.push_back({A.row(r), B});
        }
        const ConstrainedMatrixZonotope cmz(randn(rng, 2, 1), randn(rng, 2, s), blocks);
        const Mat X = trial % 2 ? sample(cmz, rng) : Mat(cmz.center() + 0.5 * randn(rng, 2, 1));
        const auto [Av, bv] = cmz.vectorized_constraints();
        Mat M(2 + Av.rows(), s);
        M << cmz.vectorized_generators(), Av;
        Vec full(M.rows());
        full << linalg::vec(X - cmz.center()), bv;
        EXPECT_EQ(membership(cmz, X, 1e-7), detail::coefficient_residual(M, full) <= 1e-7) << trial;
    }
}
