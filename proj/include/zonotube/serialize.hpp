#pragma once

// JSON encoding of set types. Matrices are arrays of rows.
//   Zonotope:                  {center, generators}
//   ConstrainedZonotope:       {center, generators, eq_A, eq_b}
//   MatrixZonotope:            {center, generators}   (generators: list of matrices)
//   ConstrainedMatrixZonotope: {center, generators, eq_A, eq_b} (eq_A: list of wide block rows,
//                              each itself a list of matrices; eq_b: list of matrices)
//   Polytope:                  {H, h}
// Requires nlohmann/json (vendor/json.hpp).

#include "setops.hpp"

#include <json.hpp>

namespace zonotube::io {

using json = nlohmann::json;

inline json to_json(const Mat& m)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline json to_json(const Vec& v)
{
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

inline Vec vec_from_json(const json& j)
{
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
}

/// An empty array gives a 0 x cols matrix when cols is known.
inline Mat mat_from_json(const json& j, Eigen::Index cols_if_empty = 0)
{
    if (j.empty()) return Mat(0, cols_if_empty);
    const auto r = static_cast<Eigen::Index>(j.size());
    const auto c = static_cast<Eigen::Index>(j[0].size());
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
        detail::require(static_cast<Eigen::Index>(j[i].size()) == c, "json: ragged matrix");
        for (Eigen::Index k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
    }
    return m;
}

namespace detail {

inline json blocks_to_json(const Mat& wide, Eigen::Index block_cols)
{
    json out = json::array();
    if (block_cols == 0) return out;
    for (Eigen::Index i = 0; i < wide.cols() / block_cols; ++i) out.push_back(to_json(Mat(wide.middleCols(i * block_cols, block_cols))));
    return out;
}

inline Mat blocks_from_json(const json& j, Eigen::Index rows, Eigen::Index block_cols)
{
    Mat wide(rows, block_cols * static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        const Mat blk = mat_from_json(j[i], block_cols);
        zonotube::detail::require(blk.rows() == rows && blk.cols() == block_cols, "json: generator block shape");
        wide.middleCols(static_cast<Eigen::Index>(i) * block_cols, block_cols) = blk;
    }
    return wide;
}

}  // namespace detail

inline json to_json(const Zonotope& z)
{
    return {{"center", to_json(z.center())}, {"generators", to_json(z.generators())}};
}

inline json to_json(const ConstrainedZonotope& z)
{
    return {{"center", to_json(z.center())},
            {"generators", to_json(z.generators())},
            {"eq_A", to_json(z.eq_A())},
            {"eq_b", to_json(z.eq_b())}};
}

inline json to_json(const MatrixZonotope& mz)
{
    return {{"center", to_json(mz.center())}, {"generators", detail::blocks_to_json(mz.generators(), mz.cols())}};
}

inline json to_json(const ConstrainedMatrixZonotope& mz)
{
    json eqA = json::array(), eqB = json::array();
    for (const auto& blk : mz.constraints()) {
        eqA.push_back(detail::blocks_to_json(blk.A, blk.B.cols()));
        eqB.push_back(to_json(blk.B));
    }
    return {{"center", to_json(mz.center())},
            {"generators", detail::blocks_to_json(mz.generators(), mz.cols())},
            {"eq_A", std::move(eqA)},
            {"eq_b", std::move(eqB)}};
}

inline json to_json(const Polytope& p) { return {{"H", to_json(p.H())}, {"h", to_json(p.h())}}; }

inline Zonotope zonotope_from_json(const json& j)
{
    const Vec c = vec_from_json(j.at("center"));
    return Zonotope(c, mat_from_json(j.at("generators"), 0));
}

inline ConstrainedZonotope constrained_zonotope_from_json(const json& j)
{
    const Vec c = vec_from_json(j.at("center"));
    Mat G = mat_from_json(j.at("generators"));
    if (G.rows() == 0) G.resize(c.size(), 0);
    Vec b = vec_from_json(j.at("eq_b"));
    Mat A = mat_from_json(j.at("eq_A"), G.cols());
    return ConstrainedZonotope(c, std::move(G), std::move(A), std::move(b));
}

inline MatrixZonotope matrix_zonotope_from_json(const json& j)
{
    const Mat C = mat_from_json(j.at("center"));
    return MatrixZonotope(C, detail::blocks_from_json(j.at("generators"), C.rows(), C.cols()));
}

inline ConstrainedMatrixZonotope constrained_matrix_zonotope_from_json(const json& j)
{
    const Mat C = mat_from_json(j.at("center"));
    Mat G = detail::blocks_from_json(j.at("generators"), C.rows(), C.cols());
    const auto s = static_cast<Eigen::Index>(j.at("generators").size());
    std::vector<EqualityBlock> blocks;
    const json& eqA = j.at("eq_A");
    const json& eqB = j.at("eq_b");
    zonotube::detail::require(eqA.size() == eqB.size(), "json: eq_A / eq_b length mismatch");
    for (std::size_t k = 0; k < eqA.size(); ++k) {
        Mat B = mat_from_json(eqB[k]);
        zonotube::detail::require(static_cast<Eigen::Index>(eqA[k].size()) == s, "json: constraint block count");
        Mat A = detail::blocks_from_json(eqA[k], B.rows(), B.cols());
        blocks.push_back({std::move(A), std::move(B)});
    }
    return ConstrainedMatrixZonotope(C, std::move(G), std::move(blocks));
}

inline Polytope polytope_from_json(const json& j)
{
    const Vec h = vec_from_json(j.at("h"));
    return Polytope(mat_from_json(j.at("H")), h);
}

}  // namespace zonotube::io
