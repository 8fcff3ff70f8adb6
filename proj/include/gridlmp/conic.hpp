// Cone-program intermediate representation and solver contract.
//
// Programs are kept in the standard form
//     minimize    c'x
//     subject to  A x  = b
//                 G x + s = h,   s in K
// where K is a product of nonnegative, second-order and (small) PSD cones.
// The builder API works in maximization convention (objective is negated
// internally). Duals: y for equalities, z in K* for cone rows, with
// Lagrangian L = c'x + y'(Ax - b) + z'(Gx - h).
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridlmp::conic {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ConicError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sparse affine expression  sum coef_i * x_i + constant.
struct AffExpr {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  AffExpr() = default;
  AffExpr(double c) : constant(c) {}  // NOLINT(google-explicit-constructor)
  static AffExpr var(int idx, double coef = 1.0) {
    AffExpr e;
    e.terms.emplace_back(idx, coef);
    return e;
  }
  AffExpr& add(int idx, double coef) {
    if (coef != 0.0) terms.emplace_back(idx, coef);
    return *this;
  }
  AffExpr& operator+=(const AffExpr& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    constant += o.constant;
    return *this;
  }
  double eval(const VectorXd& x) const {
    double v = constant;
    for (auto [i, c] : terms) v += c * x[i];
    return v;
  }
};

enum class ConeType { Nonneg, Soc, Psd };

struct ConeBlock {
  ConeType type;
  int offset;  // first row in (G, h)
  int dim;     // rows occupied (svec dimension for PSD)
  int order;   // matrix order for PSD, 0 otherwise
};

enum class Status { Optimal, Infeasible, Unbounded, NumericalFailure };

inline const char* status_name(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    default: return "numerical_failure";
  }
}

struct Solution {
  Status status = Status::NumericalFailure;
  VectorXd x, s;     // primal
  VectorXd y, z;     // duals (equalities, cone rows)
  double objective = 0.0;  // in the caller's maximization convention
  double r_primal = 0.0, r_dual = 0.0, r_gap = 0.0;
  int iterations = 0;
};

class Program {
 public:
  int new_var() { return nvar_++; }
  std::vector<int> new_vars(int n) {
    std::vector<int> ids(n);
    for (auto& id : ids) id = new_var();
    return ids;
  }
  int num_vars() const { return nvar_; }

  void set_objective_term(int var, double coef) {  // maximize sum coef*x
    obj_.emplace_back(var, coef);
  }

  // Returns the equality row index (dual y position).
  int add_eq(const AffExpr& e, double rhs) {
    eq_rows_.push_back(e.terms);
    eq_rhs_.push_back(rhs - e.constant);
    return int(eq_rhs_.size()) - 1;
  }

  // e <= rhs. Returns the cone row index (dual z position).
  int add_ineq(const AffExpr& e, double rhs) {
    ConeBlock blk{ConeType::Nonneg, next_row_, 1, 0};
    blocks_.push_back(blk);
    push_row(e, rhs);
    return blk.offset;
  }

  // (e0, e1, ..., eq) in SOC: e0 >= ||(e1..eq)||. Returns first row index.
  int add_soc(const std::vector<AffExpr>& es) {
    if (es.size() < 2) throw ConicError("SOC needs dimension >= 2");
    ConeBlock blk{ConeType::Soc, next_row_, int(es.size()), 0};
    blocks_.push_back(blk);
    for (const auto& e : es) push_row_expr(e);
    return blk.offset;
  }

  // Rotated cone u*v >= sum z_i^2, u,v >= 0, via the SOC
  // (u+v, u-v, 2 z_1, ...). Returns first row index of the SOC block.
  int add_rsoc(const AffExpr& u, const AffExpr& v,
               const std::vector<AffExpr>& zs) {
    std::vector<AffExpr> es;
    AffExpr sum = u, diff = u;
    sum += v;
    AffExpr negv;
    negv.constant = -v.constant;
    for (auto [i, c] : v.terms) negv.add(i, -c);
    diff += negv;
    es.push_back(sum);
    es.push_back(diff);
    for (const auto& zexp : zs) {
      AffExpr e2 = zexp;
      for (auto& t : e2.terms) t.second *= 2.0;
      e2.constant *= 2.0;
      es.push_back(e2);
    }
    return add_soc(es);
  }

  // Symmetric PSD constraint on a matrix of affine entries (order d, given as
  // the lower triangle row by row: (0,0), (1,0), (1,1), ...).
  // Rows are stored in svec form (off-diagonals scaled by sqrt(2)).
  int add_psd(int order, const std::vector<AffExpr>& lower) {
    int want = order * (order + 1) / 2;
    if (int(lower.size()) != want) throw ConicError("PSD entry count mismatch");
    ConeBlock blk{ConeType::Psd, next_row_, want, order};
    blocks_.push_back(blk);
    // svec ordering: column-major upper... use (i>=j) pairs ordered (j, i):
    // for j in 0..d-1, i in j..d-1. Convert from given row-major lower.
    const double rt2 = std::sqrt(2.0);
    auto at = [&](int i, int j) -> const AffExpr& {
      // lower triangle row-major: index of (i, j), i >= j
      return lower[i * (i + 1) / 2 + j];
    };
    for (int j = 0; j < order; ++j)
      for (int i = j; i < order; ++i) {
        AffExpr e = at(i, j);
        if (i != j) {
          for (auto& t : e.terms) t.second *= rt2;
          e.constant *= rt2;
        }
        push_row_expr(e);
      }
    return blk.offset;
  }

  // Assembled data access (standard form, minimization).
  int num_eq() const { return int(eq_rhs_.size()); }
  int num_cone_rows() const { return next_row_; }
  const std::vector<ConeBlock>& blocks() const { return blocks_; }

  VectorXd cost() const {  // c = -objective
    VectorXd c = VectorXd::Zero(nvar_);
    for (auto [i, v] : obj_) c[i] -= v;
    return c;
  }
  Eigen::SparseMatrix<double> eq_matrix() const {
    std::vector<Eigen::Triplet<double>> trip;
    for (size_t r = 0; r < eq_rows_.size(); ++r)
      for (auto [i, v] : eq_rows_[r]) trip.emplace_back(int(r), i, v);
    Eigen::SparseMatrix<double> A(num_eq(), nvar_);
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
  }
  VectorXd eq_rhs() const {
    return Eigen::Map<const VectorXd>(eq_rhs_.data(), num_eq());
  }
  Eigen::SparseMatrix<double> cone_matrix() const {
    std::vector<Eigen::Triplet<double>> trip;
    for (size_t r = 0; r < g_rows_.size(); ++r)
      for (auto [i, v] : g_rows_[r]) trip.emplace_back(int(r), i, v);
    Eigen::SparseMatrix<double> G(next_row_, nvar_);
    G.setFromTriplets(trip.begin(), trip.end());
    return G;
  }
  VectorXd cone_rhs() const {
    return Eigen::Map<const VectorXd>(h_.data(), next_row_);
  }

 private:
  // Inequality e <= rhs: slack s = rhs - e >= 0, i.e. G row = e, h = rhs.
  void push_row(const AffExpr& e, double rhs) {
    g_rows_.push_back(e.terms);
    h_.push_back(rhs - e.constant);
    ++next_row_;
  }
  // Cone membership of the expression itself: s = e in K, i.e. h - Gx = e
  // means G row = -terms, h = constant.
  void push_row_expr(const AffExpr& e) {
    std::vector<std::pair<int, double>> neg = e.terms;
    for (auto& t : neg) t.second = -t.second;
    g_rows_.push_back(std::move(neg));
    h_.push_back(e.constant);
    ++next_row_;
  }

  int nvar_ = 0;
  int next_row_ = 0;
  std::vector<std::pair<int, double>> obj_;
  std::vector<std::vector<std::pair<int, double>>> eq_rows_;
  std::vector<double> eq_rhs_;
  std::vector<std::vector<std::pair<int, double>>> g_rows_;
  std::vector<double> h_;
  std::vector<ConeBlock> blocks_;
};

namespace detail {

inline Eigen::MatrixXd smat(const Eigen::Ref<const VectorXd>& v, int d) {
  Eigen::MatrixXd M(d, d);
  const double irt2 = 1.0 / std::sqrt(2.0);
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i, ++k) {
      double val = (i == j) ? v[k] : v[k] * irt2;
      M(i, j) = val;
      M(j, i) = val;
    }
  return M;
}

inline VectorXd svec(const Eigen::MatrixXd& M) {
  int d = int(M.rows());
  VectorXd v(d * (d + 1) / 2);
  const double rt2 = std::sqrt(2.0);
  int k = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i, ++k) v[k] = (i == j) ? M(i, j) : M(i, j) * rt2;
  return v;
}

}  // namespace detail

struct KktResiduals {
  double r_primal = 0.0;  // worst equality/cone-membership violation
  double r_dual = 0.0;    // stationarity + dual cone membership
  double r_gap = 0.0;     // |primal obj - dual obj| / (1 + |primal obj|)
};

// Independent recomputation of KKT residuals from raw program data; never
// trusts solver-reported numbers.
inline KktResiduals kkt_residuals(const Program& prog, const Solution& sol) {
  if (sol.status != Status::Optimal)
    throw ConicError("kkt_residuals requires an optimal solution");
  auto A = prog.eq_matrix();
  auto G = prog.cone_matrix();
  VectorXd b = prog.eq_rhs(), h = prog.cone_rhs(), c = prog.cost();
  KktResiduals r;
  if (prog.num_eq() > 0)
    r.r_primal = (A * sol.x - b).cwiseAbs().maxCoeff() /
                 (1.0 + b.cwiseAbs().maxCoeff());
  VectorXd s = h - G * sol.x;
  auto cone_violation = [&](const VectorXd& v) {
    double worst = 0.0;
    for (const auto& blk : prog.blocks()) {
      auto seg = v.segment(blk.offset, blk.dim);
      switch (blk.type) {
        case ConeType::Nonneg:
          worst = std::max(worst, -seg.minCoeff());
          break;
        case ConeType::Soc:
          worst = std::max(worst, seg.tail(blk.dim - 1).norm() - seg[0]);
          break;
        case ConeType::Psd: {
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
              detail::smat(seg, blk.order));
          worst = std::max(worst, -es.eigenvalues().minCoeff());
          break;
        }
      }
    }
    return worst;
  };
  double hscale = 1.0 + (h.size() ? h.cwiseAbs().maxCoeff() : 0.0);
  r.r_primal = std::max(r.r_primal, cone_violation(s) / hscale);

  VectorXd stat = c + G.transpose() * sol.z;
  if (prog.num_eq() > 0) stat += A.transpose() * sol.y;
  r.r_dual = stat.cwiseAbs().maxCoeff() / (1.0 + c.cwiseAbs().maxCoeff());
  r.r_dual = std::max(r.r_dual, cone_violation(sol.z) / hscale);

  double pobj = c.dot(sol.x);
  double dobj = -(b.dot(sol.y) + h.dot(sol.z));
  r.r_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj));
  return r;
}

}  // namespace gridlmp::conic
