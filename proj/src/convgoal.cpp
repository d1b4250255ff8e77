#include "deepcam/convgoal.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace deepcam {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double frob_dot(const Matrix& a, const Matrix& b) {
  return (a.array() * b.array()).sum();
}
}  // namespace

void LearnProblem::validate() const {
  weights.validate();
  if (sparsity_data.cols() < 1) throw ValidationError("LearnProblem: empty sparsity data");
  const Index n = sparsity_data.rows();
  if (P.rows() != n || P.cols() != n) throw ValidationError("LearnProblem: P must be n x n");
  if (V.rows() != n && V.cols() > 0) throw ValidationError("LearnProblem: V row mismatch");
  if (has_joint) {
    if (joint_yhat.rows() != n || joint_e.rows() != n ||
        joint_yhat.cols() != sparsity_data.cols() || joint_e.cols() != sparsity_data.cols())
      throw ValidationError("LearnProblem: joint data shape mismatch");
  }
}

ObjectiveBreakdown evaluate_objective(const Matrix& omega, const LearnProblem& prob,
                                      Index col_begin, Index col_count, Matrix* grad) {
  ObjectiveBreakdown out;
  if (grad) grad->setZero(omega.rows(), omega.cols());

  const auto xb = prob.sparsity_data.middleCols(col_begin, col_count);
  ValueGrad g = sparsity_value_grad(omega, xb, prob.weights.nu);
  out.g = g.value;

  ValueGrad h = info_value_grad(omega, prob.info);
  out.h = h.value;

  ValueGrad l = barrier_value_grad(omega);
  out.l = l.value;

  ValueGrad p;
  if (prob.has_joint) {
    p = joint_sparsity_value_grad(omega, prob.joint_yhat.middleCols(col_begin, col_count),
                                  prob.joint_e.middleCols(col_begin, col_count),
                                  prob.weights.nu);
    out.p = p.value;
  }

  if ((h.barrier && prob.weights.kappa > 0) || (l.barrier && prob.weights.upsilon > 0)) {
    out.barrier = true;
    out.f = kInf;
    return out;
  }
  out.f = out.g + (h.barrier ? 0.0 : prob.weights.kappa * out.h) +
          (l.barrier ? 0.0 : prob.weights.upsilon * out.l) + prob.weights.mu * out.p;
  if (grad) {
    *grad = g.grad;
    if (!h.barrier) *grad += prob.weights.kappa * h.grad;
    if (!l.barrier) *grad += prob.weights.upsilon * l.grad;
    if (prob.has_joint) *grad += prob.weights.mu * p.grad;
  }
  return out;
}

Matrix retract(Matrix omega, const Matrix& V, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  const Index n = omega.cols();
  for (Index i = 0; i < omega.rows(); ++i) {
    for (int pass = 0; pass < 2; ++pass) {
      Vector w = omega.row(i).transpose();
      if (V.cols() > 0) w -= V * (V.transpose() * w);
      double nrm = w.norm();
      int guard = 0;
      while (nrm < 1e-12 && guard++ < 100) {
        for (Index j = 0; j < n; ++j) w[j] = gauss(rng);
        if (V.cols() > 0) w -= V * (V.transpose() * w);
        nrm = w.norm();
      }
      if (nrm < 1e-12) throw NumericalError("retract: cannot find feasible row");
      omega.row(i) = (w / nrm).transpose();
    }
  }
  return omega;
}

double pr_plus_coefficient(const Matrix& grad_now, const Matrix& grad_prev) {
  const double denom = frob_dot(grad_prev, grad_prev);
  if (denom <= 0) return 0;
  return std::max(0.0, frob_dot(grad_now, grad_now - grad_prev) / denom);
}

Matrix cg_direction(const Matrix& grad_now, const Matrix& grad_prev,
                    const Matrix& dir_prev_transported, bool first) {
  if (first) return -grad_now;
  const double beta = pr_plus_coefficient(grad_now, grad_prev);
  Matrix dir = -grad_now + beta * dir_prev_transported;
  if (frob_dot(dir, grad_now) >= 0) dir = -grad_now;  // restart
  return dir;
}

LineSearchResult backtracking_search(
    double f0, double slope, const OptimizerConfig& cfg,
    const std::function<std::pair<double, Matrix>(double)>& probe) {
  LineSearchResult res;
  if (slope >= 0) return res;  // not a descent direction
  double alpha = 1.0;
  for (int k = 0; k <= cfg.max_backtracks; ++k) {
    auto [f, omega] = probe(alpha);
    if (f <= f0 + cfg.c1 * alpha * slope) {
      res.accepted = true;
      res.alpha = alpha;
      res.f = f;
      res.omega = std::move(omega);
      return res;
    }
    alpha *= cfg.beta;
  }
  return res;
}

Matrix random_dictionary(Index rows, Index cols, const Matrix& V, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Matrix omega(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) omega(i, j) = gauss(rng);
  return retract(std::move(omega), V, rng);
}

namespace {

// Rows of the Euclidean gradient mapped through P (I - Q^+ Q) per atom.
Matrix project_gradient(const Matrix& grad, const Matrix& omega, const LearnProblem& prob) {
  Matrix out(grad.rows(), grad.cols());
  for (Index i = 0; i < grad.rows(); ++i) {
    const Vector t = tangent_project(omega.row(i).transpose(), prob.V,
                                     grad.row(i).transpose());
    out.row(i) = (prob.P * t).transpose();
  }
  return out;
}

// Tangent-only projection (no P): guaranteed non-positive slope along its
// negative; used as a last-resort descent direction.
Matrix project_tangent_only(const Matrix& grad, const Matrix& omega, const LearnProblem& prob) {
  Matrix out(grad.rows(), grad.cols());
  for (Index i = 0; i < grad.rows(); ++i)
    out.row(i) =
        tangent_project(omega.row(i).transpose(), prob.V, grad.row(i).transpose()).transpose();
  return out;
}

void log_iteration(std::ostream* log, const IterationRecord& rec, bool has_joint) {
  if (!log) return;
  char buf[256];
  if (has_joint)
    std::snprintf(buf, sizeof buf,
                  "batch=%d iter=%d f=%.10g g=%.10g h=%.10g l=%.10g p=%.10g step=%.6g",
                  rec.batch, rec.iter, rec.terms.f, rec.terms.g, rec.terms.h, rec.terms.l,
                  rec.terms.p, rec.step);
  else
    std::snprintf(buf, sizeof buf,
                  "batch=%d iter=%d f=%.10g g=%.10g h=%.10g l=%.10g step=%.6g",
                  rec.batch, rec.iter, rec.terms.f, rec.terms.g, rec.terms.h, rec.terms.l,
                  rec.step);
  (*log) << buf << '\n';
}

}  // namespace

Matrix learn_dictionary(const Matrix& omega0, const LearnProblem& prob,
                        const OptimizerConfig& cfg, std::ostream* log,
                        const IterCallback& cb) {
  prob.validate();
  cfg.validate();
  if (omega0.cols() != prob.sparsity_data.rows())
    throw ValidationError("learn_dictionary: dictionary width does not match data");
  for (Index i = 0; i < omega0.rows(); ++i)
    if (omega0.row(i).norm() < 1e-12)
      throw ValidationError("learn_dictionary: zero row in initialization");

  std::mt19937_64 rng(cfg.seed);
  Matrix omega = retract(omega0, prob.V, rng);

  // A +inf objective at the start is an infeasible init; retry a few times.
  for (int attempt = 0; evaluate_objective(omega, prob).barrier; ++attempt) {
    if (attempt >= 5)
      throw NumericalError("learn_dictionary: objective infinite after 5 re-initializations");
    omega = random_dictionary(omega.rows(), omega.cols(), prob.V, rng);
  }

  const Index total_cols = prob.sparsity_data.cols();
  const int nb = static_cast<int>(std::min<Index>(cfg.num_batches, total_cols));

  for (int b = 0; b < nb; ++b) {
    const Index begin = total_cols * b / nb;
    const Index count = total_cols * (b + 1) / nb - begin;

    Matrix grad;
    ObjectiveBreakdown terms = evaluate_objective(omega, prob, begin, count, &grad);
    const double f_start = terms.f;
    Matrix pgrad = project_gradient(grad, omega, prob);
    Matrix pgrad_prev, dir_prev;
    bool batch_done = false;

    for (int t = 1; t <= cfg.max_batch_iters && !batch_done; ++t) {
      Matrix dir;
      if (t == 1) {
        dir = -pgrad;
      } else {
        const Matrix transported = project_gradient(dir_prev, omega, prob);
        dir = cg_direction(pgrad, pgrad_prev, transported, false);
      }

      double slope = frob_dot(grad, dir);
      if (slope >= 0) {
        dir = -pgrad;
        slope = frob_dot(grad, dir);
      }
      if (slope >= 0) {
        dir = -project_tangent_only(grad, omega, prob);
        slope = frob_dot(grad, dir);
      }
      if (slope >= -1e-15) break;  // stationary on this batch

      auto probe = [&](double alpha) {
        std::mt19937_64 probe_rng(rng());  // keep main stream independent of probe count
        Matrix cand = retract(omega + alpha * dir, prob.V, probe_rng);
        const double f = evaluate_objective(cand, prob, begin, count).f;
        return std::make_pair(f, std::move(cand));
      };

      LineSearchResult ls = backtracking_search(terms.f, slope, cfg, probe);
      if (!ls.accepted) {
        // One steepest-descent retry, then give up on this batch.
        dir = -pgrad;
        slope = frob_dot(grad, dir);
        if (slope < 0) ls = backtracking_search(terms.f, slope, cfg, probe);
        batch_done = true;
        if (!ls.accepted) break;
      }

      omega = std::move(ls.omega);
      pgrad_prev = std::move(pgrad);
      dir_prev = std::move(dir);
      terms = evaluate_objective(omega, prob, begin, count, &grad);
      pgrad = project_gradient(grad, omega, prob);

      IterationRecord rec{b + 1, t, terms, ls.alpha};
      log_iteration(log, rec, prob.has_joint);
      if (cb) cb(rec, omega);
    }

    const double f_end = terms.f;
    const double rel = (f_start - f_end) / std::max(std::abs(f_start), 1e-300);
    if (rel < cfg.eps_halt) break;
  }
  return omega;
}

Index conv_dict_rank(const PatchGeom& g, Index num_atoms, std::uint64_t seed) {
  g.validate();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss;
  Matrix probe(num_atoms, g.atom_len());
  for (Index j = 0; j < probe.cols(); ++j)
    for (Index i = 0; i < probe.rows(); ++i) probe(i, j) = gauss(rng);
  Matrix op(g.out_positions() * num_atoms, g.len);
  Vector e = Vector::Zero(g.len);
  for (Index k = 0; k < g.len; ++k) {
    e[k] = 1;
    op.col(k) = conv_dict_apply(probe, e, g);
    e[k] = 0;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(op);
  qr.setThreshold(1e-10);
  return qr.rank();
}

LearnProblem make_ipad_problem(const Matrix& xs, const PatchGeom& g, const Matrix& x,
                               Index num_atoms, const ObjectiveConfig& weights,
                               double subspace_energy, std::uint64_t seed,
                               std::ostream* log) {
  g.validate();
  if (xs.rows() != g.len) throw ValidationError("make_ipad_problem: xs rows != geometry len");
  if (x.rows() != g.atom_len())
    throw ValidationError("make_ipad_problem: x rows != atom length");

  LearnProblem prob;
  prob.weights = weights;
  prob.sparsity_data = x;

  SubspaceBasis sp = signal_subspace(xs, subspace_energy, 50'000, seed);
  // The degree-of-freedom count overestimates what the structured operator
  // can span; cap the preserved rank at the generic operator rank so the
  // log-det term stays finite and meaningful.
  const Index capacity = conv_dict_rank(g, num_atoms, seed);
  if (sp.K > capacity) {
    if (log)
      (*log) << "make_ipad_problem: truncating signal rank " << sp.K
             << " to dictionary capacity " << capacity << '\n';
    sp.W = sp.W.leftCols(capacity).eval();
    sp.K = capacity;
  }
  prob.info = InfoTerm(sp.W, g, num_atoms);

  // Null-space directions of the small-patch data constrain the atoms.
  SubspaceBasis small = signal_subspace(x, subspace_energy, 50'000, seed + 1);
  prob.V = small.U;

  const Matrix p_s = complement_projector(sp.U);
  prob.P = averaged_projector(p_s, g);
  return prob;
}

LearnProblem make_cad_problem(const Matrix& yhat, const Matrix& e, Index num_atoms,
                              const ObjectiveConfig& weights, double subspace_energy,
                              std::uint64_t seed, std::ostream* log) {
  if (yhat.rows() != e.rows() || yhat.cols() != e.cols())
    throw ValidationError("make_cad_problem: yhat/e shape mismatch");
  const Index n = yhat.rows();

  LearnProblem prob;
  prob.weights = weights;
  prob.sparsity_data = yhat;
  prob.has_joint = true;
  prob.joint_yhat = yhat;
  prob.joint_e = e;

  // Zero-mean rows: the feasible set excludes the all-ones direction.
  prob.V = Matrix::Constant(n, 1, 1.0 / std::sqrt(static_cast<double>(n)));

  SubspaceBasis sp = signal_subspace(yhat, subspace_energy, 50'000, seed);
  if (sp.K > num_atoms) {
    if (log)
      (*log) << "make_cad_problem: truncating signal rank " << sp.K
             << " to dictionary capacity " << num_atoms << '\n';
    sp.W = sp.W.leftCols(num_atoms).eval();
    sp.K = num_atoms;
  }
  // Degenerate window (signal length == atom length): the structure
  // restriction is vacuous and P reduces to the signal-space projection.
  prob.info = InfoTerm(sp.W, PatchGeom::one_d(n, n), num_atoms);
  prob.P = complement_projector(sp.U);
  return prob;
}

}  // namespace deepcam
