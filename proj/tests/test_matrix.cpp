#include "doctest.h"

#include "corrlab/matrix.hpp"

#include <cmath>
#include <stdexcept>

using namespace corrlab;

TEST_CASE("matrix construction validates data length") {
    CHECK_NOTHROW(Matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS_AS(Matrix(2, 3, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("matmul against hand result and transposes") {
    Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
    Matrix b(3, 2, {7, 8, 9, 10, 11, 12});
    Matrix c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(58));
    CHECK(c.at(0, 1) == doctest::Approx(64));
    CHECK(c.at(1, 0) == doctest::Approx(139));
    CHECK(c.at(1, 1) == doctest::Approx(154));

    // (A B)^T = B^T A^T via the transpose flags
    Matrix ct = matmul(b, a, true, true);
    CHECK(max_abs_diff(ct, transpose(c)) == 0.0);

    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("non-finite results are a hard error") {
    Matrix a(1, 2, {1e308, 1.0});
    CHECK_THROWS_AS(add(a, a), std::runtime_error);
    Matrix nan_m(1, 1, {std::nan("")});
    CHECK_THROWS_AS(scale(nan_m, 1.0), std::runtime_error);
}

TEST_CASE("reductions") {
    Matrix a(2, 2, {1, 2, 3, 4});
    CHECK(sum(a) == doctest::Approx(10));
    CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(30.0)));
    Matrix mean = col_mean(a);
    CHECK(mean.at(0, 0) == doctest::Approx(2));
    CHECK(mean.at(0, 1) == doctest::Approx(3));
}
