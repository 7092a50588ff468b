#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "plgt/tensor.hpp"
#include "testutil.hpp"

using namespace plgt;
using testutil::fd_wrt;
using testutil::max_abs_diff;
using testutil::random_leaf;
using testutil::random_tensor;
using testutil::rel_err;

TEST_CASE("matmul identity and direct arithmetic") {
    Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor m = random_tensor({3, 3}, rng);
    CHECK(max_abs_diff(matmul(eye, m), m) == 0.0);

    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {0, 1});
    Tensor c = matmul(a, b);
    CHECK(c.at({0, 0}) == 2.0);
    CHECK(c.at({1, 0}) == 4.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    Tensor a = random_tensor({5, 4}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor c = matmul(a, b);
    auto want = testutil::matmul_oracle(a.vec(), b.vec(), 5, 4, 3);
    double worst = 0.0;
    for (int64_t i = 0; i < c.size(); ++i) worst = std::max(worst, std::fabs(c.data()[i] - want[i]));
    CHECK(worst < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({5, 4});
    Tensor b = Tensor::zeros({3, 7});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[5,4]") != std::string::npos);
        CHECK(msg.find("[3,7]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random conformable triples") {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({4, 6}, rng);
        Tensor b = random_tensor({6, 3}, rng);
        Tensor c = random_tensor({3, 5}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (int64_t i = 0; i < left.size(); ++i) {
            CHECK(rel_err(left.data()[i], right.data()[i]) < 1e-9);
        }
    }
}

TEST_CASE("batched matmul broadcasts batch dims") {
    Rng rng(17);
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor b = random_tensor({5, 6}, rng);
    Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 3, 4, 6});
    // spot-check one batch against the oracle
    std::vector<double> a11(a.data() + 1 * 3 * 20 + 2 * 20, a.data() + 1 * 3 * 20 + 3 * 20);
    auto want = testutil::matmul_oracle(a11, b.vec(), 4, 5, 6);
    for (int64_t i = 0; i < 24; ++i) {
        CHECK(std::fabs(c.data()[(1 * 3 + 2) * 24 + i] - want[i]) < 1e-12);
    }
}

TEST_CASE("elem_pow values and gradient") {
    Tensor base = Tensor::from_data({1}, {2.0});
    Tensor expo = Tensor::from_data({1}, {3.0});
    CHECK(elem_pow(base, expo).item() == doctest::Approx(8.0).epsilon(1e-12));

    Rng rng(3);
    Tensor b = random_tensor({4, 4}, rng, 0.2, 3.0);
    Tensor zero = Tensor::zeros({4, 4});
    Tensor ones = elem_pow(b, zero);
    for (int64_t i = 0; i < ones.size(); ++i) CHECK(ones.data()[i] == doctest::Approx(1.0));

    // gradient vs central finite difference at base=2, exp=3
    Tensor bl = Tensor::leaf({1}, {2.0});
    Tensor el = Tensor::leaf({1}, {3.0});
    {
        Tape tape;
        Tensor y = elem_pow(bl, el);
        tape.backward(y);
    }
    const auto eval = [&]() { return elem_pow(bl, el).item(); };
    CHECK(rel_err(bl.grad()[0], fd_wrt(bl, 0, eval)) < 1e-6);
    CHECK(rel_err(el.grad()[0], fd_wrt(el, 0, eval)) < 1e-6);

    CHECK_THROWS_AS(elem_pow(Tensor::from_data({1}, {-1.0}), expo), DomainError);
    CHECK_THROWS_AS(elem_pow(Tensor::from_data({1}, {0.0}), expo), DomainError);
}

TEST_CASE("softmax rows") {
    Tensor x = Tensor::from_data({3}, {0, 0, 0});
    Tensor y = softmax_lastdim(x);
    for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    const double c = 0.7, k = 1.3;
    Tensor two = Tensor::from_data({2}, {c, c + k});
    Tensor s = softmax_lastdim(two);
    const auto sigma = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
    CHECK(s.data()[0] == doctest::Approx(sigma(-k)).epsilon(1e-12));
    CHECK(s.data()[1] == doctest::Approx(sigma(k)).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = random_tensor({4, 7}, rng, -30.0, 30.0);
        Tensor y = softmax_lastdim(x);
        for (int64_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int64_t j = 0; j < 7; ++j) s += y.at({r, j});
            CHECK(std::fabs(s - 1.0) < 1e-9);
        }
        Tensor shifted = softmax_lastdim(x + 5.0);
        CHECK(max_abs_diff(y, shifted) < 1e-12);
    }
}

TEST_CASE("softmax Jacobian vs finite differences") {
    Rng rng(29);
    Tensor x = random_leaf({6}, rng);
    Rng probe(5);
    // random linear functional of the softmax output as the scalar loss
    Tensor w = random_tensor({6}, probe);
    const auto loss_fn = [&]() { return sum_all(softmax_lastdim(x) * w); };
    double worst = testutil::check_gradients({x}, loss_fn, probe, 6);
    CHECK(worst < 1e-5);
}

TEST_CASE("relu and leaky_relu") {
    Tensor x = Tensor::from_data({2}, {-2.0, 2.0});
    Tensor r = relu(x);
    CHECK(r.data()[0] == 0.0);
    CHECK(r.data()[1] == 2.0);
    CHECK(leaky_relu(Tensor::from_data({1}, {-1.0}), 0.2).item() == doctest::Approx(-0.2));

    Tensor xl = Tensor::leaf({1}, {-3.0});
    {
        Tape tape;
        tape.backward(sum_all(leaky_relu(xl, 0.2)));
    }
    CHECK(xl.grad()[0] == doctest::Approx(0.2));

    // subgradient at exactly zero takes the positive branch
    Tensor x0 = Tensor::leaf({1}, {0.0});
    {
        Tape tape;
        tape.backward(sum_all(leaky_relu(x0, 0.2)));
    }
    CHECK(x0.grad()[0] == 1.0);
}

TEST_CASE("layer_norm values") {
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});
    Tensor constant = Tensor::full({4}, 3.25);
    Tensor y = layer_norm(constant, gain, bias, 1e-6);
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == doctest::Approx(0.0));

    Tensor pm = Tensor::from_data({2}, {1.0, -1.0});
    Tensor y2 = layer_norm(pm, Tensor::full({2}, 1.0), Tensor::zeros({2}), 0.0);
    CHECK(y2.data()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y2.data()[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm gradient vs finite differences") {
    Rng rng(31);
    Tensor x = random_leaf({3, 8}, rng);
    Tensor gain = random_leaf({8}, rng, 0.5, 1.5);
    Tensor bias = random_leaf({8}, rng);
    Rng probe(9);
    Tensor w = random_tensor({3, 8}, probe);
    const auto loss_fn = [&]() { return sum_all(layer_norm(x, gain, bias, 1e-6) * w); };
    CHECK(testutil::check_gradients({x, gain, bias}, loss_fn, probe, 8) < 1e-5);
}

TEST_CASE("dropout contracts") {
    Rng rng(37);
    Tensor x = random_tensor({50}, rng);
    Rng drop(41);
    CHECK(max_abs_diff(dropout(x, 0.0, true, &drop), x) == 0.0);
    CHECK(max_abs_diff(dropout(x, 0.7, false, nullptr), x) == 0.0);
    CHECK_THROWS_AS(dropout(x, 1.0, true, &drop), ConfigError);
    CHECK_THROWS_AS(dropout(x, -0.1, true, &drop), ConfigError);
}

TEST_CASE("dropout statistics on a seeded stream") {
    const int64_t n = 100000;
    Tensor x = Tensor::full({n}, 1.0);
    Rng drop(2024);
    Tensor y = dropout(x, 0.5, true, &drop);
    int64_t survivors = 0;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        if (y.data()[i] != 0.0) ++survivors;
        mean += y.data()[i];
    }
    mean /= static_cast<double>(n);
    const double frac = static_cast<double>(survivors) / static_cast<double>(n);
    CHECK(std::fabs(frac - 0.5) < 0.01);
    CHECK(std::fabs(mean - 1.0) < 0.02);

    // bit-reproducible across runs with the same seed
    Rng drop2(2024);
    Tensor y2 = dropout(x, 0.5, true, &drop2);
    CHECK(max_abs_diff(y, y2) == 0.0);
}

TEST_CASE("backward basics") {
    Rng rng(43);
    Tensor x = random_leaf({5}, rng);
    {
        Tape tape;
        tape.backward(sum_all(x));
    }
    for (int i = 0; i < 5; ++i) CHECK(x.grad()[i] == 1.0);

    x.zero_grad();
    {
        Tape tape;
        tape.backward(sum_all(x * x) * 0.5);
    }
    for (int i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::leaf({3}, {1, 2, 3});
    Tape tape;
    Tensor y = x * 2.0;
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("backward on random composite matches finite differences") {
    Rng rng(47);
    Tensor a = random_leaf({3, 4}, rng);
    Tensor b = random_leaf({4, 2}, rng);
    Tensor c = random_leaf({3, 2}, rng);
    const auto loss_fn = [&]() {
        Tensor h = matmul(a, b);            // op 1
        Tensor g = relu(h + c);             // ops 2,3
        return sum_all(g * g);              // ops 4,5
    };
    Rng probe(53);
    CHECK(testutil::check_gradients({a, b, c}, loss_fn, probe, 8) < 1e-4);
}

TEST_CASE("gradient accumulation is linear") {
    Rng rng(59);
    Tensor x = random_leaf({6}, rng);

    Tensor g_joint, g_split;
    {
        Tape tape;
        Tensor l1 = sum_all(x * x);
        Tensor l2 = sum_all(exp_t(x));
        tape.backward(l1 + l2);
        g_joint = Tensor::from_data({6}, x.grad());
    }
    x.zero_grad();
    {
        Tape tape;
        Tensor l1 = sum_all(x * x);
        Tensor l2 = sum_all(exp_t(x));
        tape.backward(l1);
        tape.backward(l2);  // accumulates without reset
        g_split = Tensor::from_data({6}, x.grad());
    }
    CHECK(max_abs_diff(g_joint, g_split) < 1e-12);
}

TEST_CASE("every differentiable primitive passes finite-difference checks") {
    Rng rng(61);
    Rng probe(67);

    struct Case {
        const char* name;
        std::function<double()> run;  // builds leaves, returns worst rel err
    };

    const auto check1 = [&](const std::function<Tensor(const Tensor&)>& f, double lo,
                            double hi) {
        Tensor x = random_leaf({3, 5}, rng, lo, hi);
        Tensor w = random_tensor({3, 5}, probe);
        return testutil::check_gradients(
            {x}, [&]() { return sum_all(f(x) * w); }, probe, 10);
    };
    const auto check2 = [&](const std::function<Tensor(const Tensor&, const Tensor&)>& f,
                            double lo, double hi, Shape sa, Shape sb) {
        Tensor a = random_leaf(sa, rng, lo, hi);
        Tensor b = random_leaf(sb, rng, lo, hi);
        return testutil::check_gradients(
            {a, b}, [&]() { return sum_all(f(a, b)); }, probe, 10);
    };

    const auto wrap2 = [](Tensor (*f)(const Tensor&, const Tensor&)) {
        return [f](const Tensor& a, const Tensor& b) { return f(a, b); };
    };
    CHECK(check2(wrap2(&plgt::add), -1, 1, {3, 5}, {3, 5}) < 1e-4);
    CHECK(check2(wrap2(&plgt::sub), -1, 1, {3, 5}, {5}) < 1e-4);        // with broadcasting
    CHECK(check2(wrap2(&plgt::mul), -1, 1, {3, 5}, {3, 5}) < 1e-4);
    CHECK(check2(wrap2(&plgt::div), 0.5, 2.0, {3, 5}, {3, 1}) < 1e-4);  // with broadcasting
    CHECK(check2(wrap2(&plgt::matmul), -1, 1, {4, 6}, {6, 3}) < 1e-4);
    CHECK(check2(wrap2(&plgt::elem_pow), 0.3, 2.0, {3, 5}, {3, 5}) < 1e-4);
    CHECK(check1([](const Tensor& x) { return exp_t(x); }, -1, 1) < 1e-4);
    CHECK(check1([](const Tensor& x) { return log_t(x); }, 0.2, 3.0) < 1e-4);
    CHECK(check1([](const Tensor& x) { return sqrt_t(x); }, 0.2, 3.0) < 1e-4);
    CHECK(check1([](const Tensor& x) { return relu(x + 0.05); }, 0.1, 1.0) < 1e-4);
    CHECK(check1([](const Tensor& x) { return leaky_relu(x, 0.2); }, 0.1, 1.0) < 1e-4);
    CHECK(check1([](const Tensor& x) { return softmax_lastdim(x); }, -2, 2) < 1e-4);
    CHECK(check1([](const Tensor& x) { return log_softmax_lastdim(x); }, -2, 2) < 1e-4);
    {
        Tensor x = random_leaf({3, 5}, rng);
        Tensor w = random_tensor({5, 3}, probe);
        CHECK(testutil::check_gradients(
                  {x}, [&]() { return sum_all(transpose_last2(x) * w); }, probe, 10) < 1e-4);
        CHECK(testutil::check_gradients(
                  {x}, [&]() { return sum_all(reshape(x, {5, 3}) * w); }, probe, 10) < 1e-4);
        CHECK(testutil::check_gradients(
                  {x}, [&]() { return sum_all(permute(x, {1, 0}) * w); }, probe, 10) < 1e-4);
    }
    CHECK(check1([](const Tensor& x) { return sum_axis(x, 0, false); }, -1, 1) < 1e-4);
    CHECK(check1([](const Tensor& x) { return mean_axis(x, -1, true); }, -1, 1) < 1e-4);
    CHECK(check1([](const Tensor& x) { return concat(split(x, 1, 5), 1); }, -1, 1) < 1e-4);

    // embedding gather scatters gradient into looked-up rows only
    {
        Tensor table = random_leaf({7, 4}, rng);
        IdMatrix ids = IdMatrix::from_rows({{1, 3, 3}, {0, 6, 2}});
        Tensor w = random_tensor({2, 3, 4}, probe);
        const auto loss_fn = [&]() { return sum_all(embedding(table, ids) * w); };
        CHECK(testutil::check_gradients({table}, loss_fn, probe, 12) < 1e-4);
        // untouched rows keep zero gradient
        CHECK(table.grad()[4 * 4] == 0.0);  // row 4
        CHECK(table.grad()[5 * 4] == 0.0);  // row 5
    }
}

TEST_CASE("permute round trip and gradient routing") {
    Rng rng(71);
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    Tensor p = permute(x, {0, 2, 1, 3});
    CHECK(p.shape() == Shape{2, 4, 3, 5});
    Tensor back = permute(p, {0, 2, 1, 3});
    CHECK(max_abs_diff(back, x) == 0.0);
    CHECK(p.at({1, 2, 0, 3}) == x.at({1, 0, 2, 3}));
}

TEST_CASE("embedding rejects out-of-range ids with position") {
    Tensor table = Tensor::zeros({4, 2});
    IdMatrix ids = IdMatrix::from_rows({{0, 9}});
    try {
        embedding(table, ids);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("9") != std::string::npos);
        CHECK(msg.find("(0,1)") != std::string::npos);
    }
}

TEST_CASE("requires_grad=false tensors never accumulate gradient") {
    Rng rng(73);
    Tensor x = random_leaf({4}, rng);
    Tensor c = random_tensor({4}, rng);  // constant
    {
        Tape tape;
        tape.backward(sum_all(x * c));
    }
    CHECK(x.has_grad());
    CHECK_FALSE(c.has_grad());
}

TEST_CASE("rng streams are reproducible and named substreams differ") {
    Rng a(99);
    Rng b(99);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng root(7);
    Rng s1 = root.derive("dropout");
    Rng s2 = root.derive("shuffle");
    Rng s1b = root.derive("dropout");
    CHECK(s1.next_u64() == s1b.next_u64());
    CHECK(root.derive("dropout").next_u64() != s2.next_u64());
}
