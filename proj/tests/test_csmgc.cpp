#include "doctest.h"

#include "corrlab/csmgc.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace corrlab;
namespace ad = corrlab::ad;

namespace {

Matrix random_matrix(Rng& rng, int rows, int cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-1.0, 1.0);
    return m;
}

Matrix permute_rows(const Matrix& m, const std::vector<int>& perm) {
    Matrix out(m.rows(), m.cols());
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) out.at(r, c) = m.at(perm[r], c);
    return out;
}

std::vector<int> random_permutation(Rng& rng, int n) {
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

void randomize_store(ParameterStore& store, Rng& rng) {
    for (Parameter* p : store.all())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = rng.uniform(-0.7, 0.7);
}

/// Exhaustive all-pairs oracle: full sort by (distance, index) per anchor.
std::vector<int> knn_oracle(const Matrix& z, int k) {
    const int n = z.rows();
    std::vector<int> out;
    for (int i = 0; i < n; ++i) {
        std::vector<std::pair<double, int>> all;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0.0;
            for (int c = 0; c < z.cols(); ++c) {
                const double diff = z.at(i, c) - z.at(j, c);
                d2 += diff * diff;
            }
            all.emplace_back(d2, j);
        }
        std::sort(all.begin(), all.end());
        for (int r = 0; r < k; ++r) out.push_back(all[r].second);
    }
    return out;
}

}  // namespace

TEST_CASE("knn hand case: collinear 1-D features at 0, 1, 3 with k = 1") {
    Matrix z(3, 1, {0.0, 1.0, 3.0});
    auto nbrs = knn_indices(z, 1);
    CHECK(nbrs[0] == 1);  // 0 -> 1 (distance 1)
    CHECK(nbrs[1] == 0);  // 1 -> 0 (distance 1, index tie-break vs 3 at distance 2)
    CHECK(nbrs[2] == 1);  // 3 -> 1 (distance 2)
}

TEST_CASE("knn with k = N-1 returns all other nodes; bad k errors") {
    Rng rng(5);
    Matrix z = random_matrix(rng, 6, 3);
    auto nbrs = knn_indices(z, 5);
    for (int i = 0; i < 6; ++i) {
        std::vector<int> row(nbrs.begin() + i * 5, nbrs.begin() + (i + 1) * 5);
        std::sort(row.begin(), row.end());
        std::vector<int> expected;
        for (int j = 0; j < 6; ++j)
            if (j != i) expected.push_back(j);
        CHECK(row == expected);
    }
    CHECK_THROWS_AS(knn_indices(z, 6), std::invalid_argument);
    CHECK_THROWS_AS(knn_indices(z, 0), std::invalid_argument);
}

TEST_CASE("knn agrees with the exhaustive oracle, including rank order") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Matrix z = random_matrix(rng, 10, 4);
        CHECK(knn_indices(z, 3) == knn_oracle(z, 3));
    }
}

TEST_CASE("graph edges carry [z_i, z_j - z_i] with non-increasing affinity") {
    Rng rng(17);
    Matrix z = random_matrix(rng, 8, 3);
    KnnGraph g = build_knn_graph(ad::constant(z), 3);
    REQUIRE(g.edges->value.rows() == 8 * 3);
    REQUIRE(g.edges->value.cols() == 6);
    for (int i = 0; i < g.n; ++i) {
        double prev = -std::numeric_limits<double>::infinity();
        for (int r = 0; r < g.k; ++r) {
            const int j = g.neighbors[i * g.k + r];
            CHECK(j != i);
            CHECK(j >= 0);
            CHECK(j < g.n);
            double d2 = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double diff = z.at(i, c) - z.at(j, c);
                d2 += diff * diff;
                CHECK(g.edges->value.at(i * g.k + r, c) == z.at(i, c));
                CHECK(g.edges->value.at(i * g.k + r, 3 + c) ==
                      doctest::Approx(z.at(j, c) - z.at(i, c)));
            }
            CHECK(d2 >= prev);  // descending affinity = ascending distance
            prev = d2;
        }
    }
}

TEST_CASE("concat_graphs: four identical graphs give a 4-fold channel repeat") {
    Rng rng(23);
    Matrix z = random_matrix(rng, 6, 2);
    KnnGraph g = build_knn_graph(ad::constant(z), 2);
    auto fused = concat_graphs(g, g, g, g);
    REQUIRE(fused->value.cols() == 8 * 2);  // edge width 2d with d = 2
    for (int r = 0; r < fused->value.rows(); ++r)
        for (int c = 0; c < 4; ++c)
            for (int rep = 1; rep < 4; ++rep)
                CHECK(fused->value.at(r, rep * 4 + c) == fused->value.at(r, c));

    KnnGraph other = build_knn_graph(ad::constant(random_matrix(rng, 6, 2)), 1);
    CHECK_THROWS_AS(concat_graphs(g, g, g, other), std::invalid_argument);
}

TEST_CASE("align_features: zero parameters give zero edges, width reduces to d") {
    const int d = 4, n = 5, k = 3;
    ParameterStore store;
    Rng rng(31);
    CsmgcBlock block(store, "csmgc", d, k, 3, 1, 2, rng);
    Matrix fused = random_matrix(rng, n * k, 8 * d);
    auto aligned = block.align_features(store, ad::constant(fused));
    CHECK(aligned->value.rows() == n * k);
    CHECK(aligned->value.cols() == d);

    for (const char* name : {"csmgc/align/w", "csmgc/align/b"}) {
        Parameter& p = store.get(name);
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = 0.0;
    }
    auto zeroed = block.align_features(store, ad::constant(fused));
    CHECK(frobenius_norm(zeroed->value) == 0.0);
}

TEST_CASE("annular_conv: averaging kernel with identity combine means the ring") {
    const int d = 3, n = 4, k = 3;
    ParameterStore store;
    Rng rng(37);
    CsmgcBlock block(store, "csmgc", d, k, /*ring_size=*/3, 1, 2, rng);

    // W = 1/p, b = 0, identity combine, zero refinement MLP.
    store.get("csmgc/ring_kernel").value = Matrix::constant(1, 3, 1.0 / 3.0);
    store.get("csmgc/ring_bias").value = Matrix::zeros(1, d);
    store.get("csmgc/combine/w").value = Matrix::identity(d);
    store.get("csmgc/combine/b").value = Matrix::zeros(1, d);
    store.get("csmgc/mlp1/w").value = Matrix::zeros(d, d);
    store.get("csmgc/mlp1/b").value = Matrix::zeros(1, d);

    Matrix edges = random_matrix(rng, n * k, d);
    auto out = block.annular_conv(store, ad::constant(edges), n);
    REQUIRE(out->value.rows() == n);
    REQUIRE(out->value.cols() == d);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) {
            const double mean =
                (edges.at(i * k, c) + edges.at(i * k + 1, c) + edges.at(i * k + 2, c)) / 3.0;
            CHECK(out->value.at(i, c) == doctest::Approx(mean).epsilon(1e-13));
        }
}

TEST_CASE("ring size must divide k") {
    ParameterStore store;
    Rng rng(41);
    CHECK_THROWS_AS(CsmgcBlock(store, "bad", 4, 3, 2, 1, 2, rng), std::invalid_argument);
}

TEST_CASE("whole module: shapes and permutation equivariance") {
    const int d = 4, n = 9, k = 3;
    ParameterStore store;
    Rng rng(43);
    CsmgcBlock block(store, "csmgc", d, k, 3, 1, 2, rng);
    randomize_store(store, rng);

    Matrix hist = random_matrix(rng, n, d);
    Matrix z1 = random_matrix(rng, n, d);
    Matrix z2 = random_matrix(rng, n, d);
    Matrix z3 = random_matrix(rng, n, d);

    auto out = block.forward(store, {ad::constant(hist)}, ad::constant(z1), ad::constant(z2),
                             ad::constant(z3));
    REQUIRE(out->value.rows() == n);
    REQUIRE(out->value.cols() == d);

    CHECK_THROWS(block.forward(store, {}, ad::constant(z1), ad::constant(z2), ad::constant(z3)));

    auto perm = random_permutation(rng, n);
    auto permuted = block.forward(store, {ad::constant(permute_rows(hist, perm))},
                                  ad::constant(permute_rows(z1, perm)),
                                  ad::constant(permute_rows(z2, perm)),
                                  ad::constant(permute_rows(z3, perm)));
    CHECK(max_abs_diff(permuted->value, permute_rows(out->value, perm)) < 1e-10);
}

TEST_CASE("csmgc end-to-end gradient spot check (selection held constant)") {
    const int d = 4, n = 7, k = 3;
    ParameterStore store;
    Rng rng(47);
    CsmgcBlock block(store, "csmgc", d, k, 3, 1, 2, rng);
    randomize_store(store, rng);
    Matrix hist = random_matrix(rng, n, d);
    Matrix z1 = random_matrix(rng, n, d);
    Matrix z2 = random_matrix(rng, n, d);
    Matrix probe = random_matrix(rng, n, d);

    // Probe through z3: gradients flow through the edge features of g3 while
    // its neighbor indices stay fixed per forward pass.
    auto build = [&](ad::NodePtr z3) {
        auto out = block.forward(store, {ad::constant(hist)}, ad::constant(z1), ad::constant(z2),
                                 z3);
        return ad::sum_all(ad::hadamard(out, ad::constant(probe)));
    };
    Matrix z3 = random_matrix(rng, n, d);
    CHECK(ad::finite_diff_check(build, z3, 1e-6) < 1e-4);
}
