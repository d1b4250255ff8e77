#include "deepcam/convgoal.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

using namespace deepcam;
using test::normalize_rows;
using test::random_matrix;
using test::random_orthonormal;
using test::random_vector;

namespace {

// Small planted IPAD-style problem: super-patch data living in a K-dim
// subspace of R^l, small patches extracted as sliding windows.
struct Fixture {
  PatchGeom geom;
  Matrix xs, x;
  LearnProblem prob;

  explicit Fixture(std::uint64_t seed, Index l = 12, Index n = 4, Index k = 5,
                   Index num_atoms = 3) {
    std::mt19937_64 rng(seed);
    geom = PatchGeom::one_d(l, n);
    const Matrix basis = random_orthonormal(l, k, rng);
    xs = basis * random_matrix(k, 300, rng);
    const Index p = l - n + 1;
    x.resize(n, 300 * 2);
    std::uniform_int_distribution<Index> col(0, xs.cols() - 1), off(0, p - 1);
    for (Index j = 0; j < x.cols(); ++j)
      x.col(j) = xs.col(col(rng)).segment(off(rng), n);
    ObjectiveConfig w;
    w.nu = 10.0 * static_cast<double>(n);
    w.kappa = 10.0;
    w.upsilon = 0.1;
    prob = make_ipad_problem(xs, geom, x, num_atoms, w, 0.9999, seed);
  }
};

}  // namespace

TEST_CASE("retract") {
  std::mt19937_64 rng(51);
  const Index n = 6;
  const Matrix v = random_orthonormal(n, 2, rng);
  SUBCASE("feasible rows are unchanged") {
    Matrix omega = random_matrix(2, n, rng);
    omega = retract(omega, v, rng);
    const Matrix again = retract(omega, v, rng);
    CHECK((again - omega).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("rows inside span(V) are re-randomized to a feasible point") {
    Matrix omega(1, n);
    omega.row(0) = v.col(0).transpose();
    const Matrix out = retract(omega, v, rng);
    CHECK(std::abs(out.row(0).norm() - 1.0) < 1e-10);
    CHECK((v.transpose() * out.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("random rows become unit-norm and V-orthogonal") {
    const Matrix out = retract(random_matrix(5, n, rng), v, rng);
    for (Index i = 0; i < out.rows(); ++i) {
      CHECK(std::abs(out.row(i).norm() - 1.0) < 1e-10);
      CHECK((v.transpose() * out.row(i).transpose()).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("cg_direction") {
  std::mt19937_64 rng(52);
  const Matrix g = random_matrix(3, 4, rng);
  SUBCASE("first iteration is steepest descent") {
    CHECK((cg_direction(g, Matrix(), Matrix(), true) + g).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("equal consecutive gradients reset the coefficient") {
    CHECK(pr_plus_coefficient(g, g) == 0.0);
    const Matrix dir = cg_direction(g, g, random_matrix(3, 4, rng), false);
    CHECK((dir + g).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("always a descent direction") {
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix gn = random_matrix(3, 4, rng);
      const Matrix gp = random_matrix(3, 4, rng);
      const Matrix dp = random_matrix(3, 4, rng);
      const Matrix dir = cg_direction(gn, gp, dp, false);
      CHECK((dir.array() * gn.array()).sum() < 0.0);
    }
  }
}

TEST_CASE("backtracking_search") {
  OptimizerConfig cfg;
  SUBCASE("quadratic: accepted step lies in the closed-form Armijo interval") {
    // f(a) = f0 + slope*a + curv*a^2 along the ray.
    const double f0 = 2.0, slope = -1.0, curv = 4.0;
    auto probe = [&](double a) {
      return std::make_pair(f0 + slope * a + curv * a * a, Matrix());
    };
    const LineSearchResult res = backtracking_search(f0, slope, cfg, probe);
    REQUIRE(res.accepted);
    const double amax = (1.0 - cfg.c1) * (-slope) / curv;  // Armijo boundary
    CHECK(res.alpha <= amax + 1e-15);
    CHECK(res.alpha > amax * cfg.beta - 1e-15);  // largest power of beta inside
  }
  SUBCASE("zero direction is rejected immediately") {
    int calls = 0;
    auto probe = [&](double) {
      ++calls;
      return std::make_pair(0.0, Matrix());
    };
    const LineSearchResult res = backtracking_search(1.0, 0.0, cfg, probe);
    CHECK(!res.accepted);
    CHECK(calls == 0);
  }
  SUBCASE("linear decrease accepts the full step") {
    auto probe = [&](double a) { return std::make_pair(5.0 - a, Matrix()); };
    const LineSearchResult res = backtracking_search(5.0, -1.0, cfg, probe);
    REQUIRE(res.accepted);
    CHECK(res.alpha == 1.0);
  }
}

TEST_CASE("learn_dictionary: feasibility and per-batch monotonicity") {
  Fixture fx(61);
  OptimizerConfig cfg;
  cfg.max_batch_iters = 25;
  cfg.num_batches = 4;
  cfg.seed = 61;
  std::mt19937_64 rng(99);
  const Matrix omega0 = random_dictionary(3, 4, fx.prob.V, rng);

  int last_batch = 0;
  double last_f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  auto cb = [&](const IterationRecord& rec, const Matrix& omega) {
    ++iterations;
    for (Index i = 0; i < omega.rows(); ++i)
      REQUIRE(std::abs(omega.row(i).norm() - 1.0) < 1e-8);
    if (fx.prob.V.cols() > 0)
      REQUIRE((fx.prob.V.transpose() * omega.transpose()).cwiseAbs().maxCoeff() < 1e-6);
    if (rec.batch == last_batch) REQUIRE(rec.terms.f <= last_f + 1e-12);
    last_batch = rec.batch;
    last_f = rec.terms.f;
  };

  std::ostringstream log;
  const Matrix learned = learn_dictionary(omega0, fx.prob, cfg, &log, cb);
  CHECK(iterations > 0);
  for (Index i = 0; i < learned.rows(); ++i)
    CHECK(std::abs(learned.row(i).norm() - 1.0) < 1e-8);

  // Final objective no worse than at the (retracted) init.
  std::mt19937_64 rng2(cfg.seed);
  const Matrix start = retract(omega0, fx.prob.V, rng2);
  CHECK(evaluate_objective(learned, fx.prob).f <= evaluate_objective(start, fx.prob).f + 1e-12);

  // Progress log lines are machine-parseable.
  const std::string text = log.str();
  CHECK(text.find("batch=1 iter=1 f=") != std::string::npos);
  CHECK(text.find(" step=") != std::string::npos);
}

TEST_CASE("learn_dictionary is deterministic for a fixed seed") {
  Fixture fx(62);
  OptimizerConfig cfg;
  cfg.max_batch_iters = 15;
  cfg.num_batches = 3;
  cfg.seed = 7;
  std::mt19937_64 rng_a(5), rng_b(5);
  const Matrix o0a = random_dictionary(3, 4, fx.prob.V, rng_a);
  const Matrix o0b = random_dictionary(3, 4, fx.prob.V, rng_b);
  const Matrix a = learn_dictionary(o0a, fx.prob, cfg);
  const Matrix b = learn_dictionary(o0b, fx.prob, cfg);
  CHECK(a == b);  // bitwise
}

TEST_CASE("learn_dictionary stays at a stationary init") {
  // With only the sparsity term active and data orthogonal to the single
  // atom, the gradient vanishes at the init.
  std::mt19937_64 rng(63);
  const Index n = 4;
  Matrix omega0(1, n);
  omega0 << 1, 0, 0, 0;
  Matrix x = Matrix::Zero(n, 20);
  for (Index j = 0; j < x.cols(); ++j) x(1 + (j % (n - 1)), j) = 1.0 + j;

  LearnProblem prob;
  prob.sparsity_data = x;
  prob.weights.nu = 10.0;
  prob.weights.kappa = 0.0;
  prob.weights.upsilon = 0.0;
  prob.V = Matrix(n, 0);
  prob.P = Matrix::Identity(n, n);
  prob.info = InfoTerm(Matrix::Identity(n, 2), PatchGeom::one_d(n, n), 1);

  OptimizerConfig cfg;
  cfg.seed = 3;
  const Matrix learned = learn_dictionary(omega0, prob, cfg);
  CHECK((learned - omega0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("learn_dictionary rejects a hopeless objective") {
  // K exceeds the dictionary capacity q: the info term is an everywhere-
  // infinite barrier, so all re-initializations fail.
  std::mt19937_64 rng(64);
  const Index l = 6, n = 5;  // p = 2, m = 1 -> q = 2 < K = 3
  LearnProblem prob;
  prob.sparsity_data = random_matrix(n, 10, rng);
  prob.weights.nu = 10.0;
  prob.weights.kappa = 1.0;
  prob.weights.upsilon = 0.0;
  prob.V = Matrix(n, 0);
  prob.P = Matrix::Identity(n, n);
  prob.info = InfoTerm(random_matrix(l, 3, rng), PatchGeom::one_d(l, n), 1);
  OptimizerConfig cfg;
  CHECK_THROWS_AS(learn_dictionary(random_matrix(1, n, rng), prob, cfg), NumericalError);
}

TEST_CASE("CAD mode with e == yhat matches the joint-free trajectory") {
  std::mt19937_64 rng(65);
  const Index n = 8, atoms = 3;
  const Matrix yhat = random_matrix(n, 200, rng);
  ObjectiveConfig w;
  w.nu = 10.0 * n;
  w.kappa = 0.1 * atoms;
  w.upsilon = 0.01 * atoms;
  w.mu = 100.0;
  LearnProblem with_joint = make_cad_problem(yhat, yhat, atoms, w, 0.9999, 1);
  LearnProblem without = with_joint;
  without.has_joint = false;
  without.joint_yhat.resize(0, 0);
  without.joint_e.resize(0, 0);
  without.weights.mu = 0.0;

  OptimizerConfig cfg;
  cfg.max_batch_iters = 10;
  cfg.num_batches = 2;
  cfg.seed = 11;
  std::mt19937_64 ra(2), rb(2);
  const Matrix o0a = random_dictionary(atoms, n, with_joint.V, ra);
  const Matrix o0b = random_dictionary(atoms, n, without.V, rb);
  const Matrix a = learn_dictionary(o0a, with_joint, cfg);
  const Matrix b = learn_dictionary(o0b, without, cfg);
  REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-10);

  // CAD rows have zero mean (the feasible set's V is the ones vector).
  for (Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum()) < 1e-8);
}

TEST_CASE("objective aggregation is linear in the weights") {
  Fixture fx(66);
  std::mt19937_64 rng(4);
  const Matrix omega = random_dictionary(3, 4, fx.prob.V, rng);
  LearnProblem doubled = fx.prob;
  doubled.weights.kappa *= 2.0;
  const ObjectiveBreakdown base = evaluate_objective(omega, fx.prob);
  const ObjectiveBreakdown twice = evaluate_objective(omega, doubled);
  CHECK(twice.f - base.f == doctest::Approx(fx.prob.weights.kappa * base.h).epsilon(1e-12));
  CHECK(base.h == twice.h);
}
