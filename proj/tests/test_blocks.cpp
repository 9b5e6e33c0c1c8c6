#include "doctest.h"

#include "corrlab/blocks.hpp"

#include <cmath>

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

}  // namespace

TEST_CASE("pointcn: shape, zero-parameter identity, permutation equivariance") {
    const int n = 10, d = 6;
    ParameterStore store;
    Rng rng(7);
    PointCNBlock block(store, "pcn", d, rng);

    Matrix f = random_matrix(rng, n, d);
    auto out = block.forward(store, ad::constant(f));
    CHECK(out->value.rows() == n);
    CHECK(out->value.cols() == d);

    // All parameters zero: only the residual path remains.
    for (Parameter* p : store.all())
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = 0.0;
    auto ident = block.forward(store, ad::constant(f));
    CHECK(max_abs_diff(ident->value, f) == 0.0);

    randomize_store(store, rng);
    auto perm = random_permutation(rng, n);
    auto base = block.forward(store, ad::constant(f));
    auto permuted = block.forward(store, ad::constant(permute_rows(f, perm)));
    CHECK(max_abs_diff(permuted->value, permute_rows(base->value, perm)) < 1e-10);
}

TEST_CASE("order-aware block: shapes, single-cluster pooled mean, equivariance") {
    const int n = 12, d = 5, m = 4;
    ParameterStore store;
    Rng rng(15);
    OrderAwareBlock block(store, "oa", d, m, rng);
    randomize_store(store, rng);
    Matrix f = random_matrix(rng, n, d);

    auto out = block.forward(store, ad::constant(f));
    CHECK(out->value.rows() == n);
    CHECK(out->value.cols() == d);
    auto pooled = block.pool(store, ad::constant(f));
    CHECK(pooled->value.rows() == m);
    CHECK(pooled->value.cols() == d);

    // m = 1: the softmax assignment is uniformly 1, so the pooled row is the
    // assignment-weighted mean of the input rows.
    ParameterStore store1;
    Rng rng1(16);
    OrderAwareBlock single(store1, "oa1", d, 1, rng1);
    auto pooled1 = single.pool(store1, ad::constant(f));
    Matrix mean = col_mean(f);
    CHECK(max_abs_diff(pooled1->value, mean) < 1e-12);

    auto perm = random_permutation(rng, n);
    auto base = block.forward(store, ad::constant(f));
    auto permuted = block.forward(store, ad::constant(permute_rows(f, perm)));
    CHECK(max_abs_diff(permuted->value, permute_rows(base->value, perm)) < 1e-10);
}

TEST_CASE("se_fuse: gate range, output bound, shapes, equivariance") {
    const int n = 9, d = 5, L = 3;
    ParameterStore store;
    Rng rng(23);
    SeFuseBlock block(store, "se", d, L, 4, rng);
    randomize_store(store, rng);

    std::vector<Matrix> inputs;
    std::vector<ad::NodePtr> nodes;
    for (int i = 0; i < L; ++i) {
        inputs.push_back(random_matrix(rng, n, d));
        nodes.push_back(ad::constant(inputs.back()));
    }
    SeFuseDebug dbg;
    auto out = block.forward(store, nodes, &dbg);
    CHECK(out->value.rows() == n);
    CHECK(out->value.cols() == d);

    // Gates strictly inside (0, 1); every gated channel is shrunk.
    Matrix wide(n, d * L);
    for (int i = 0; i < L; ++i)
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) wide.at(r, i * d + c) = inputs[i].at(r, c);
    for (int c = 0; c < dbg.gates.cols(); ++c) {
        CHECK(dbg.gates.at(0, c) > 0.0);
        CHECK(dbg.gates.at(0, c) < 1.0);
    }

    // Single-element list works.
    ParameterStore store1;
    Rng rng1(29);
    SeFuseBlock block1(store1, "se1", d, 1, 4, rng1);
    auto out1 = block1.forward(store1, {nodes[0]});
    CHECK(out1->value.rows() == n);
    CHECK(out1->value.cols() == d);

    // Empty list is an error.
    CHECK_THROWS(block1.forward(store1, {}));

    // Joint row permutation of all inputs permutes the output rows.
    auto perm = random_permutation(rng, n);
    std::vector<ad::NodePtr> permuted_nodes;
    for (int i = 0; i < L; ++i)
        permuted_nodes.push_back(ad::constant(permute_rows(inputs[i], perm)));
    auto permuted = block.forward(store, permuted_nodes);
    CHECK(max_abs_diff(permuted->value, permute_rows(out->value, perm)) < 1e-10);
}

TEST_CASE("se_fuse: doubling one input doubles exactly its squeeze block") {
    const int n = 8, d = 4, L = 2;
    ParameterStore store;
    Rng rng(31);
    SeFuseBlock block(store, "se", d, L, 1, rng);
    randomize_store(store, rng);

    std::vector<Matrix> inputs = {random_matrix(rng, n, d), random_matrix(rng, n, d)};
    SeFuseDebug base, doubled;
    block.forward(store, {ad::constant(inputs[0]), ad::constant(inputs[1])}, &base);
    block.forward(store, {ad::constant(scale(inputs[0], 2.0)), ad::constant(inputs[1])},
                  &doubled);
    for (int c = 0; c < d; ++c) {
        CHECK(doubled.squeeze.at(0, c) == doctest::Approx(2.0 * base.squeeze.at(0, c)));
        CHECK(doubled.squeeze.at(0, d + c) == doctest::Approx(base.squeeze.at(0, d + c)));
    }
}

TEST_CASE("se_fuse gated magnitudes never exceed pre-gate magnitudes") {
    // The compress stage mixes channels, so the bound is asserted on the
    // gated intermediate: |gate * x| <= |x| follows from gates in (0, 1).
    const int n = 6, d = 3, L = 2;
    ParameterStore store;
    Rng rng(37);
    SeFuseBlock block(store, "se", d, L, 2, rng);
    randomize_store(store, rng);
    std::vector<Matrix> inputs = {random_matrix(rng, n, d), random_matrix(rng, n, d)};
    SeFuseDebug dbg;
    block.forward(store, {ad::constant(inputs[0]), ad::constant(inputs[1])}, &dbg);
    for (int i = 0; i < L; ++i)
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) {
                const double pre = inputs[i].at(r, c);
                const double gated = pre * dbg.gates.at(0, i * d + c);
                CHECK(std::abs(gated) <= std::abs(pre));
            }
}
