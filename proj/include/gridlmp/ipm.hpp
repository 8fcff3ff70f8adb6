// Embedded primal-dual interior-point solver for cone programs over the
// nonnegative orthant, second-order cones and small PSD blocks.
//
// Algorithm: homogeneous self-dual embedding with Nesterov-Todd scaling and
// Mehrotra predictor-corrector steps; the per-iteration KKT systems are
// factored with a sparse LU. Returns certified primal and dual solutions,
// or infeasibility/unboundedness certificates.
#pragma once

#include <Eigen/SparseLU>

#include "gridlmp/conic.hpp"

namespace gridlmp::conic {

struct SolverOptions {
  double tol = 5e-8;         // feasibility tolerance
  double tol_gap = 5e-8;     // relative duality gap
  int max_iter = 200;
  bool verbose = false;
};

namespace detail {

struct BlockScaling {
  // Nonneg: w (elementwise); SOC: eta, v; PSD: R, Rinv.
  VectorXd w;
  double eta = 1.0;
  VectorXd v;
  MatrixXd R, Rinv;
  VectorXd lambda;  // scaled point, lambda = W z = W^{-T} s
};

class Cones {
 public:
  explicit Cones(const std::vector<ConeBlock>& blocks) : blocks_(blocks) {
    dim_ = 0;
    degree_ = 0;
    for (const auto& b : blocks_) {
      dim_ += b.dim;
      degree_ += b.type == ConeType::Nonneg ? b.dim
                 : b.type == ConeType::Soc  ? 1
                                            : b.order;
    }
  }

  int dim() const { return dim_; }
  int degree() const { return degree_; }
  const std::vector<ConeBlock>& blocks() const { return blocks_; }

  VectorXd identity() const {
    VectorXd e = VectorXd::Zero(dim_);
    for (const auto& b : blocks_) {
      switch (b.type) {
        case ConeType::Nonneg:
          e.segment(b.offset, b.dim).setOnes();
          break;
        case ConeType::Soc:
          e[b.offset] = 1.0;
          break;
        case ConeType::Psd:
          e.segment(b.offset, b.dim) = svec(MatrixXd::Identity(b.order, b.order));
          break;
      }
    }
    return e;
  }

  // Smallest t such that u + t*e is in the cone (negative if u is interior).
  double max_step(const VectorXd& u) const {
    double t = -1e300;
    for (const auto& b : blocks_) {
      auto seg = u.segment(b.offset, b.dim);
      switch (b.type) {
        case ConeType::Nonneg:
          t = std::max(t, -seg.minCoeff());
          break;
        case ConeType::Soc:
          t = std::max(t, seg.tail(b.dim - 1).norm() - seg[0]);
          break;
        case ConeType::Psd: {
          Eigen::SelfAdjointEigenSolver<MatrixXd> es(smat(seg, b.order),
                                                     Eigen::EigenvaluesOnly);
          t = std::max(t, -es.eigenvalues().minCoeff());
          break;
        }
      }
    }
    return t;
  }

  // Largest step alpha (capped) with u + alpha*du staying in the cone;
  // u must be strictly interior.
  double step_to_boundary(const VectorXd& u, const VectorXd& du,
                          double cap = 1e10) const {
    double alpha = cap;
    for (const auto& b : blocks_) {
      auto useg = u.segment(b.offset, b.dim);
      auto dseg = du.segment(b.offset, b.dim);
      switch (b.type) {
        case ConeType::Nonneg:
          for (int i = 0; i < b.dim; ++i)
            if (dseg[i] < 0) alpha = std::min(alpha, -useg[i] / dseg[i]);
          break;
        case ConeType::Soc: {
          // Smallest positive root of (u0+a d0)^2 - |u1+a d1|^2 = 0.
          int q = b.dim - 1;
          double u0 = useg[0], d0 = dseg[0];
          auto u1 = useg.tail(q);
          auto d1 = dseg.tail(q);
          double A = d0 * d0 - d1.squaredNorm();
          double B = u0 * d0 - u1.dot(d1);
          double C = u0 * u0 - u1.squaredNorm();
          double best = cap;
          auto consider = [&](double a) {
            if (a > 1e-300 && u0 + a * d0 >= -1e-12 * std::abs(u0))
              best = std::min(best, a);
          };
          if (std::abs(A) < 1e-300) {
            if (B < 0) consider(-C / (2 * B));
          } else {
            double disc = B * B - A * C;
            if (disc >= 0) {
              double sq = std::sqrt(disc);
              consider((-B - sq) / A);
              consider((-B + sq) / A);
            }
          }
          alpha = std::min(alpha, best);
          break;
        }
        case ConeType::Psd: {
          MatrixXd U = smat(useg, b.order), D = smat(dseg, b.order);
          Eigen::LLT<MatrixXd> llt(U);
          if (llt.info() != Eigen::Success) {
            alpha = std::min(alpha, 0.0);
            break;
          }
          MatrixXd L = llt.matrixL();
          MatrixXd T = L.triangularView<Eigen::Lower>().solve(D);
          T = L.triangularView<Eigen::Lower>().solve(T.transpose()).eval();
          Eigen::SelfAdjointEigenSolver<MatrixXd> es(T, Eigen::EigenvaluesOnly);
          double lmin = es.eigenvalues().minCoeff();
          if (lmin < 0) alpha = std::min(alpha, -1.0 / lmin);
          break;
        }
      }
    }
    return alpha;
  }

  // Jordan product u o v.
  VectorXd jordan(const VectorXd& u, const VectorXd& v) const {
    VectorXd r(dim_);
    for (const auto& b : blocks_) {
      auto us = u.segment(b.offset, b.dim);
      auto vs = v.segment(b.offset, b.dim);
      auto rs = r.segment(b.offset, b.dim);
      switch (b.type) {
        case ConeType::Nonneg:
          rs = us.cwiseProduct(vs);
          break;
        case ConeType::Soc: {
          int q = b.dim - 1;
          rs[0] = us.dot(vs);
          rs.tail(q) = us[0] * vs.tail(q) + vs[0] * us.tail(q);
          break;
        }
        case ConeType::Psd: {
          MatrixXd U = smat(us, b.order), V = smat(vs, b.order);
          MatrixXd P = 0.5 * (U * V + V * U);
          rs = svec(P);
          break;
        }
      }
    }
    return r;
  }

  // Solve lambda o w = d for w, where lambda is the current scaled point
  // (diagonal in the PSD blocks).
  VectorXd jordan_solve(const std::vector<BlockScaling>& sc,
                        const VectorXd& d) const {
    VectorXd w(dim_);
    for (size_t k = 0; k < blocks_.size(); ++k) {
      const auto& b = blocks_[k];
      const VectorXd& lam = sc[k].lambda;
      auto ds = d.segment(b.offset, b.dim);
      auto ws = w.segment(b.offset, b.dim);
      switch (b.type) {
        case ConeType::Nonneg:
          ws = ds.cwiseQuotient(lam);
          break;
        case ConeType::Soc: {
          // Arrow-matrix solve.
          int q = b.dim - 1;
          double a = lam[0];
          auto bb = lam.tail(q);
          double det = a * a - bb.squaredNorm();
          double w0 = (a * ds[0] - bb.dot(ds.tail(q))) / det;
          ws[0] = w0;
          ws.tail(q) = (ds.tail(q) - w0 * bb) / a;
          break;
        }
        case ConeType::Psd: {
          // lambda is diagonal: w_ij = d_ij / ((sig_i + sig_j)/2).
          int dd = b.order;
          MatrixXd D = smat(ds, dd), W(dd, dd);
          VectorXd sig(dd);
          {
            MatrixXd L = smat(lam, dd);
            sig = L.diagonal();
          }
          for (int i = 0; i < dd; ++i)
            for (int j = 0; j < dd; ++j)
              W(i, j) = D(i, j) / (0.5 * (sig[i] + sig[j]));
          ws = svec(W);
          break;
        }
      }
    }
    return w;
  }

  // Nesterov-Todd scaling from a strictly interior primal-dual pair.
  std::vector<BlockScaling> compute_scaling(const VectorXd& s,
                                            const VectorXd& z) const {
    std::vector<BlockScaling> sc(blocks_.size());
    for (size_t k = 0; k < blocks_.size(); ++k) {
      const auto& b = blocks_[k];
      auto ss = s.segment(b.offset, b.dim);
      auto zs = z.segment(b.offset, b.dim);
      auto& w = sc[k];
      switch (b.type) {
        case ConeType::Nonneg:
          w.w = (ss.cwiseQuotient(zs)).cwiseSqrt();
          w.lambda = (ss.cwiseProduct(zs)).cwiseSqrt();
          break;
        case ConeType::Soc: {
          int q = b.dim - 1;
          double as2 = ss[0] * ss[0] - ss.tail(q).squaredNorm();
          double az2 = zs[0] * zs[0] - zs.tail(q).squaredNorm();
          if (!(as2 > 0) || !(az2 > 0))
            throw ConicError("iterate left the cone interior");
          double as = std::sqrt(as2);
          double az = std::sqrt(az2);
          VectorXd sbar = ss / as, zbar = zs / az;
          double gamma = std::sqrt(0.5 * (1.0 + sbar.dot(zbar)));
          VectorXd Jz = zbar;
          Jz.tail(q) = -Jz.tail(q);
          w.v = (sbar + Jz) / (2.0 * gamma);
          w.eta = std::sqrt(as / az);
          // lambda = W z computed below via apply_W.
          break;
        }
        case ConeType::Psd: {
          MatrixXd S = smat(ss, b.order), Z = smat(zs, b.order);
          Eigen::LLT<MatrixXd> ls(S), lz(Z);
          MatrixXd Ls, Lz;
          if (ls.info() == Eigen::Success) {
            Ls = ls.matrixL();
          } else {
            Eigen::LLT<MatrixXd> r(S + 1e-14 * S.trace() *
                                           MatrixXd::Identity(b.order, b.order));
            Ls = r.matrixL();
          }
          if (lz.info() == Eigen::Success) {
            Lz = lz.matrixL();
          } else {
            Eigen::LLT<MatrixXd> r(Z + 1e-14 * Z.trace() *
                                           MatrixXd::Identity(b.order, b.order));
            Lz = r.matrixL();
          }
          Eigen::JacobiSVD<MatrixXd> svd(Lz.transpose() * Ls,
                                         Eigen::ComputeFullU |
                                             Eigen::ComputeFullV);
          VectorXd sig = svd.singularValues();
          VectorXd isq = sig.cwiseSqrt().cwiseInverse();
          w.R = Ls * svd.matrixV() * isq.asDiagonal();
          w.Rinv = isq.asDiagonal() * svd.matrixU().transpose() * Lz.transpose();
          w.lambda = svec(MatrixXd(sig.asDiagonal()));
          break;
        }
      }
    }
    // Fill lambda for SOC/nonneg via lambda = W z (nonneg already set).
    VectorXd lam = apply_W(sc, z);
    for (size_t k = 0; k < blocks_.size(); ++k)
      if (blocks_[k].type != ConeType::Psd)
        sc[k].lambda = lam.segment(blocks_[k].offset, blocks_[k].dim);
    return sc;
  }

  // W u (symmetric for nonneg/SOC; congruence R' U R for PSD).
  VectorXd apply_W(const std::vector<BlockScaling>& sc,
                   const VectorXd& u) const {
    VectorXd r(dim_);
    for (size_t k = 0; k < blocks_.size(); ++k) {
      const auto& b = blocks_[k];
      auto us = u.segment(b.offset, b.dim);
      auto rs = r.segment(b.offset, b.dim);
      switch (b.type) {
        case ConeType::Nonneg:
          rs = sc[k].w.cwiseProduct(us);
          break;
        case ConeType::Soc: {
          // W = eta * Wbar with Wbar = [[v0, v1'], [v1, I + v1 v1'/(1+v0)]];
          // Wbar^2 = 2vv' - J for the J-unit vector v.
          const VectorXd& v = sc[k].v;
          int q = b.dim - 1;
          double v1u1 = v.tail(q).dot(us.tail(q));
          rs[0] = sc[k].eta * (v[0] * us[0] + v1u1);
          rs.tail(q) =
              sc[k].eta * (us[0] * v.tail(q) + us.tail(q) +
                           (v1u1 / (1.0 + v[0])) * v.tail(q));
          break;
        }
        case ConeType::Psd:
          rs = svec(sc[k].R.transpose() * smat(us, b.order) * sc[k].R);
          break;
      }
    }
    return r;
  }

  // W^{-T} u (equals W^{-1} for nonneg/SOC; R^{-1}... congruence Rinv U Rinv'
  // for PSD).
  VectorXd apply_Winvt(const std::vector<BlockScaling>& sc,
                       const VectorXd& u) const {
    VectorXd r(dim_);
    for (size_t k = 0; k < blocks_.size(); ++k) {
      const auto& b = blocks_[k];
      auto us = u.segment(b.offset, b.dim);
      auto rs = r.segment(b.offset, b.dim);
      switch (b.type) {
        case ConeType::Nonneg:
          rs = us.cwiseQuotient(sc[k].w);
          break;
        case ConeType::Soc: {
          // W^{-1} = eta^{-1} J Wbar J  (Wbar^{-2} = J Wbar^2 J).
          const VectorXd& v = sc[k].v;
          int q = b.dim - 1;
          double v1u1 = -v.tail(q).dot(us.tail(q));  // v1'(Ju)1
          double r0 = v[0] * us[0] + v1u1;
          VectorXd r1 = us[0] * v.tail(q) - us.tail(q) +
                        (v1u1 / (1.0 + v[0])) * v.tail(q);
          rs[0] = r0 / sc[k].eta;
          rs.tail(q) = -r1 / sc[k].eta;
          break;
        }
        case ConeType::Psd:
          rs = svec(sc[k].Rinv * smat(us, b.order) * sc[k].Rinv.transpose());
          break;
      }
    }
    return r;
  }

  // W' u (for the PSD blocks the adjoint congruence R U R').
  VectorXd apply_Wt(const std::vector<BlockScaling>& sc,
                    const VectorXd& u) const {
    VectorXd r(dim_);
    for (size_t k = 0; k < blocks_.size(); ++k) {
      const auto& b = blocks_[k];
      auto us = u.segment(b.offset, b.dim);
      auto rs = r.segment(b.offset, b.dim);
      if (b.type == ConeType::Psd)
        rs = svec(sc[k].R * smat(us, b.order) * sc[k].R.transpose());
      else
        rs = apply_W(sc, pad(u, b)).segment(b.offset, b.dim);
    }
    return r;
  }

  // Dense blocks of W'W for the KKT matrix.
  void add_WtW_triplets(const std::vector<BlockScaling>& sc, int row0,
                        std::vector<Eigen::Triplet<double>>* trip) const {
    for (size_t k = 0; k < blocks_.size(); ++k) {
      const auto& b = blocks_[k];
      switch (b.type) {
        case ConeType::Nonneg:
          for (int i = 0; i < b.dim; ++i) {
            double wi = sc[k].w[i];
            trip->emplace_back(row0 + b.offset + i, row0 + b.offset + i,
                               -wi * wi);
          }
          break;
        case ConeType::Soc: {
          const VectorXd& v = sc[k].v;
          // W'W = eta^2 Wbar^2 = eta^2 (2vv' - J)
          MatrixXd H = 2.0 * v * v.transpose();
          for (int i = 0; i < b.dim; ++i) H(i, i) += (i == 0) ? -1.0 : 1.0;
          H *= sc[k].eta * sc[k].eta;
          for (int i = 0; i < b.dim; ++i)
            for (int j = 0; j < b.dim; ++j)
              trip->emplace_back(row0 + b.offset + i, row0 + b.offset + j,
                                 -H(i, j));
          break;
        }
        case ConeType::Psd: {
          // Operator Z -> M Z M with M = R R', as an svec matrix.
          MatrixXd M = sc[k].R * sc[k].R.transpose();
          int sd = b.dim;
          for (int col = 0; col < sd; ++col) {
            VectorXd ecol = VectorXd::Zero(sd);
            ecol[col] = 1.0;
            VectorXd out = svec(M * smat(ecol, b.order) * M);
            for (int rr = 0; rr < sd; ++rr)
              if (out[rr] != 0.0)
                trip->emplace_back(row0 + b.offset + rr, row0 + b.offset + col,
                                   -out[rr]);
          }
          break;
        }
      }
    }
  }

 private:
  static VectorXd pad(const VectorXd& u, const ConeBlock&) { return u; }

  std::vector<ConeBlock> blocks_;
  int dim_ = 0;
  int degree_ = 0;
};

}  // namespace detail

class IpmSolver {
 public:
  IpmSolver(const Program& prog, SolverOptions opts = {})
      : opts_(opts),
        cones_(prog.blocks()),
        A_(prog.eq_matrix()),
        G_(prog.cone_matrix()),
        b_(prog.eq_rhs()),
        h_(prog.cone_rhs()),
        c_(prog.cost()),
        n_(prog.num_vars()),
        p_(prog.num_eq()),
        m_(prog.num_cone_rows()) {}

  Solution solve() {
    Solution sol;
    if (m_ == 0) {
      sol.status = Status::NumericalFailure;
      return sol;
    }
    const VectorXd e = cones_.identity();
    // --- Initialization: least-squares point shifted into the cone interior.
    {
      std::vector<detail::BlockScaling> id_sc;  // identity scaling
      {
        VectorXd ones_s = e, ones_z = e;
        id_sc = cones_.compute_scaling(ones_s, ones_z);
      }
      factor_kkt(id_sc);
      VectorXd x1, y1, z1;
      solve_kkt(VectorXd::Zero(n_), b_, h_, &x1, &y1, &z1);
      VectorXd s = -z1;
      double shift = cones_.max_step(s);
      if (shift >= -1e-8) s += (1.0 + shift) * e;
      VectorXd x2, y2, z2;
      solve_kkt(-c_, VectorXd::Zero(p_), VectorXd::Zero(m_), &x2, &y2, &z2);
      double shiftz = cones_.max_step(z2);
      if (shiftz >= -1e-8) z2 += (1.0 + shiftz) * e;
      x_ = x1;
      s_ = s;
      y_ = y2;
      z_ = z2;
      tau_ = 1.0;
      kappa_ = 1.0;
    }

    const double resx0 = std::max(1.0, c_.norm());
    const double resy0 = std::max(1.0, b_.norm());
    const double resz0 = std::max(1.0, h_.norm());
    const double degree = cones_.degree() + 1;

    // Best iterate seen so far, for graceful degradation on breakdown.
    double best_phi = 1e300;
    VectorXd bx_, by_, bz_, bs_;
    double btau_ = 1.0, bpcost_ = 0.0;
    double bpres_ = 0.0, bdres_ = 0.0, brelgap_ = 0.0;

    for (int iter = 0; iter < opts_.max_iter; ++iter) {
      sol.iterations = iter;
      // Residuals of the self-dual embedding.
      VectorXd rx = At(y_) + Gt(z_) + c_ * tau_;
      VectorXd ry = A_ * x_ - b_ * tau_;
      VectorXd rz = G_ * x_ + s_ - h_ * tau_;
      double rtau = c_.dot(x_) + b_.dot(y_) + h_.dot(z_) + kappa_;

      double pcost = c_.dot(x_) / tau_;
      double dcost = -(b_.dot(y_) + h_.dot(z_)) / tau_;
      double gap = s_.dot(z_) / (tau_ * tau_);
      double relgap = gap / std::max(1.0, std::abs(pcost));
      double pres = std::max(ry.norm() / resy0, rz.norm() / resz0) / tau_;
      double dres = rx.norm() / resx0 / tau_;
      if (opts_.verbose)
        std::fprintf(stderr,
                     "it %2d  pcost % .6e dcost % .6e gap %.2e pres %.2e "
                     "dres %.2e tau %.2e kap %.2e\n",
                     iter, pcost, dcost, gap, pres, dres, tau_, kappa_);

      double phi = std::max({pres, dres, relgap});
      if (phi < best_phi) {
        best_phi = phi;
        bx_ = x_;
        by_ = y_;
        bz_ = z_;
        bs_ = s_;
        btau_ = tau_;
        bpcost_ = pcost;
        bpres_ = pres;
        bdres_ = dres;
        brelgap_ = relgap;
      }
      if (pres <= opts_.tol && dres <= opts_.tol &&
          (gap <= opts_.tol_gap || relgap <= opts_.tol_gap)) {
        sol.status = Status::Optimal;
        finalize(&sol, pcost, pres, dres, relgap);
        return sol;
      }
      double hz_by = b_.dot(y_) + h_.dot(z_);
      if (hz_by < -1e-14) {
        double pinf = (At(y_) + Gt(z_)).norm() / resx0 / (-hz_by);
        if (pinf <= opts_.tol && cones_.max_step(z_) < 1e-8 * z_.norm()) {
          sol.status = Status::Infeasible;
          sol.y = y_ / (-hz_by);
          sol.z = z_ / (-hz_by);
          return sol;
        }
      }
      double cx = c_.dot(x_);
      if (cx < -1e-14) {
        double dinf = std::max((A_ * x_).norm() / resy0,
                               (G_ * x_ + s_).norm() / resz0) /
                      (-cx);
        if (dinf <= opts_.tol) {
          sol.status = Status::Unbounded;
          sol.x = x_ / (-cx);
          return sol;
        }
      }

      // NT scaling and KKT factorization. Numerical breakdown near the
      // optimum falls back to the best iterate seen.
      std::vector<detail::BlockScaling> sc;
      try {
        sc = cones_.compute_scaling(s_, z_);
        factor_kkt(sc);
      } catch (const ConicError&) {
        break;
      }
      VectorXd lambda(m_);
      for (size_t k = 0; k < sc.size(); ++k)
        lambda.segment(cones_.blocks()[k].offset, cones_.blocks()[k].dim) =
            sc[k].lambda;
      double mu = (s_.dot(z_) + tau_ * kappa_) / degree;

      // Solve for the "static" direction used in the tau elimination.
      VectorXd wx, wy, wz;
      solve_kkt(-c_, b_, h_, &wx, &wy, &wz);

      auto newton = [&](const VectorXd& ds_rhs, double dkap_rhs, double eta,
                        VectorXd* dx, VectorXd* dy, VectorXd* dz, VectorXd* ds,
                        double* dtau, double* dkap) {
        // RHS of the linearized embedding, scaled by (1 - eta).
        VectorXd bx = -(1.0 - eta) * rx;
        VectorXd by = -(1.0 - eta) * ry;
        VectorXd bz = -(1.0 - eta) * rz;
        double btau = -(1.0 - eta) * rtau;
        VectorXd lam_ds = cones_.jordan_solve(sc, ds_rhs);
        VectorXd bzt = bz - cones_.apply_Wt(sc, lam_ds);
        VectorXd ux, uy, uz;
        solve_kkt(bx, by, bzt, &ux, &uy, &uz);
        double num = btau - dkap_rhs / tau_ -
                     (c_.dot(ux) + b_.dot(uy) + h_.dot(uz));
        double den = c_.dot(wx) + b_.dot(wy) + h_.dot(wz) - kappa_ / tau_;
        *dtau = num / den;
        *dx = ux + *dtau * wx;
        *dy = uy + *dtau * wy;
        *dz = uz + *dtau * wz;
        *ds = cones_.apply_Wt(sc, lam_ds - cones_.apply_W(sc, *dz));
        *dkap = (dkap_rhs - kappa_ * *dtau) / tau_;
      };

      // Predictor (affine) step.
      VectorXd ds_aff_rhs = -cones_.jordan(lambda, lambda);
      VectorXd dxa, dya, dza, dsa;
      double dtaua, dkapa;
      newton(ds_aff_rhs, -tau_ * kappa_, 0.0, &dxa, &dya, &dza, &dsa, &dtaua,
             &dkapa);
      double alpha_aff = step_length(sc, lambda, dsa, dza, dtaua, dkapa);
      double sigma = std::pow(1.0 - alpha_aff, 3);
      sigma = std::min(1.0, std::max(0.0, sigma));

      // Corrector (combined) step with Mehrotra second-order term.
      VectorXd ws = cones_.apply_Winvt(sc, dsa);
      VectorXd wzs = cones_.apply_W(sc, dza);
      VectorXd ds_rhs = -cones_.jordan(lambda, lambda) -
                        cones_.jordan(ws, wzs) +
                        sigma * mu * cones_.identity();
      double dkap_rhs = -tau_ * kappa_ - dtaua * dkapa + sigma * mu;
      VectorXd dx, dy, dz, ds;
      double dtau, dkap;
      newton(ds_rhs, dkap_rhs, sigma, &dx, &dy, &dz, &ds, &dtau, &dkap);

      double alpha =
          0.99 * step_length(sc, lambda, ds, dz, dtau, dkap, 1.0 / 0.99);
      alpha = std::min(alpha, 1.0);
      if (!(alpha > 0) || !std::isfinite(alpha)) break;

      x_ += alpha * dx;
      y_ += alpha * dy;
      z_ += alpha * dz;
      s_ += alpha * ds;
      tau_ += alpha * dtau;
      kappa_ += alpha * dkap;
      if (!(tau_ > 0) || !std::isfinite(tau_)) break;
      // The embedding is homogeneous of degree one; pin the free scale.
      x_ /= tau_;
      y_ /= tau_;
      z_ /= tau_;
      s_ /= tau_;
      kappa_ /= tau_;
      tau_ = 1.0;
    }

    // Accept the best iterate at a loose tolerance rather than failing
    // outright.
    double loose = std::sqrt(opts_.tol);
    if (best_phi <= loose) {
      x_ = bx_;
      y_ = by_;
      z_ = bz_;
      s_ = bs_;
      tau_ = btau_;
      sol.status = Status::Optimal;
      finalize(&sol, bpcost_, bpres_, bdres_, brelgap_);
      return sol;
    }
    sol.status = Status::NumericalFailure;
    return sol;
  }

 private:
  VectorXd At(const VectorXd& y) const {
    return p_ ? VectorXd(A_.transpose() * y) : VectorXd::Zero(n_);
  }
  VectorXd Gt(const VectorXd& z) const { return G_.transpose() * z; }

  void finalize(Solution* sol, double pcost, double pres, double dres,
                double relgap) {
    sol->x = x_ / tau_;
    sol->y = y_ / tau_;
    sol->z = z_ / tau_;
    sol->s = s_ / tau_;
    sol->objective = -pcost;  // back to maximization convention
    sol->r_primal = pres;
    sol->r_dual = dres;
    sol->r_gap = relgap;
  }

  void factor_kkt(const std::vector<detail::BlockScaling>& sc) {
    const int N = n_ + p_ + m_;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(size_t(4 * (A_.nonZeros() + G_.nonZeros()) + N));
    for (int k = 0; k < A_.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(A_, k); it; ++it) {
        trip.emplace_back(n_ + int(it.row()), int(it.col()), it.value());
        trip.emplace_back(int(it.col()), n_ + int(it.row()), it.value());
      }
    for (int k = 0; k < G_.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(G_, k); it; ++it) {
        trip.emplace_back(n_ + p_ + int(it.row()), int(it.col()), it.value());
        trip.emplace_back(int(it.col()), n_ + p_ + int(it.row()), it.value());
      }
    cones_.add_WtW_triplets(sc, n_ + p_, &trip);
    kkt_.resize(N, N);
    kkt_.setFromTriplets(trip.begin(), trip.end());
    // Static regularization keeps the factorization well posed; iterative
    // refinement in solve_kkt targets the unregularized system.
    const double reg = 1e-12;
    for (int i = 0; i < n_; ++i) trip.emplace_back(i, i, reg);
    for (int i = n_; i < N; ++i) trip.emplace_back(i, i, -reg);
    Eigen::SparseMatrix<double> kkt_reg(N, N);
    kkt_reg.setFromTriplets(trip.begin(), trip.end());
    lu_.compute(kkt_reg);
    if (lu_.info() != Eigen::Success)
      throw ConicError("KKT factorization failed");
  }

  void solve_kkt(const VectorXd& r1, const VectorXd& r2, const VectorXd& r3,
                 VectorXd* x, VectorXd* y, VectorXd* z) const {
    const int N = n_ + p_ + m_;
    VectorXd rhs(N);
    rhs << r1, r2, r3;
    VectorXd u = lu_.solve(rhs);
    for (int round = 0; round < 2; ++round) {
      VectorXd res = rhs - kkt_ * u;
      u += lu_.solve(res);
    }
    *x = u.head(n_);
    *y = u.segment(n_, p_);
    *z = u.tail(m_);
  }

  double step_length(const std::vector<detail::BlockScaling>& sc,
                     const VectorXd& lambda, const VectorXd& ds,
                     const VectorXd& dz, double dtau, double dkap,
                     double cap = 1.0) const {
    VectorXd ds_sc = cones_.apply_Winvt(sc, ds);
    VectorXd dz_sc = cones_.apply_W(sc, dz);
    double a = cones_.step_to_boundary(lambda, ds_sc, cap);
    a = std::min(a, cones_.step_to_boundary(lambda, dz_sc, cap));
    if (dtau < 0) a = std::min(a, -tau_ / dtau);
    if (dkap < 0) a = std::min(a, -kappa_ / dkap);
    return std::min(a, cap);
  }

  SolverOptions opts_;
  detail::Cones cones_;
  Eigen::SparseMatrix<double> A_, G_;
  VectorXd b_, h_, c_;
  int n_, p_, m_;
  Eigen::SparseMatrix<double> kkt_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
  VectorXd x_, y_, z_, s_;
  double tau_ = 1.0, kappa_ = 1.0;
};

// Module-level solver entry point: primal AND dual solution with residuals.
inline Solution solve(const Program& prog, double tol = 5e-8) {
  SolverOptions opts;
  opts.tol = tol;
  opts.tol_gap = tol;
  IpmSolver solver(prog, opts);
  return solver.solve();
}

}  // namespace gridlmp::conic
