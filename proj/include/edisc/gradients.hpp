#pragma once

#include "edisc/common.hpp"
#include "edisc/model.hpp"

#include <functional>
#include <vector>

namespace edisc {

// Per-snippet posterior sense probabilities given the current parameters:
// r_{d,k} = softmax_k( log phi~_k^{g_d,t_d} + sum_{w in W_d} log psi~_w^{k,t_d} ).
// This is the ratio term every likelihood gradient shares.
inline Matrix responsibilities(const SnippetDataset& W, const ProbabilityTables& tab) {
  const int K = tab.K, T = tab.T;
  Matrix r(W.D(), K);
  Vector acc(K);
  for (int d = 0; d < W.D(); ++d) {
    const Snippet& s = W.snippets[d];
    const int gt = tab.gt_row(s.genre - 1, s.time - 1);
    for (int k = 0; k < K; ++k) {
      double a = tab.log_phi_tilde(gt, k);
      const auto row = tab.log_psi_tilde.row(k * T + (s.time - 1));
      for (int w : s.words) a += row[w];
      acc[k] = a;
    }
    r.row(d) = softmax(acc).transpose();
  }
  return r;
}

namespace detail {

// Gradient of ar1_logdensity with respect to row t: the own term plus the
// coupling through row t+1 when present.
inline Vector ar1_grad_row(const Matrix& rows, int t, double kappa, double alpha) {
  Vector g;
  if (t == 0) {
    g = -(1.0 - alpha * alpha) / kappa * rows.row(0).transpose();
  } else {
    g = -(rows.row(t) - alpha * rows.row(t - 1)).transpose() / kappa;
  }
  if (t + 1 < rows.rows())
    g += alpha / kappa * (rows.row(t + 1) - alpha * rows.row(t)).transpose();
  return g;
}

// Sum of embedding rows over each snippet bag: D x M.
inline Matrix bag_rho_sums(const SnippetDataset& W, const Matrix& rho) {
  Matrix out = Matrix::Zero(W.D(), rho.cols());
  for (int d = 0; d < W.D(); ++d)
    for (int w : W.snippets[d].words) out.row(d) += rho.row(w);
  return out;
}

// c_{k,t} = sum over snippets at time t of L_d r_{d,k}.
inline Matrix weighted_length_by_kt(const SnippetDataset& W, const Matrix& r, int T) {
  Matrix c = Matrix::Zero(r.cols(), T);
  for (int d = 0; d < W.D(); ++d) {
    const Snippet& s = W.snippets[d];
    c.col(s.time - 1) += static_cast<double>(s.length()) * r.row(d).transpose();
  }
  return c;
}

}  // namespace detail

// EDiSC: gradient of lambda * log-likelihood + log-prior with respect to chi (K x M).
inline Matrix grad_chi(const ModelState& state, const SnippetDataset& W, const Matrix& rho,
                       const Hyperparams& hp, double lambda) {
  if (hp.kind != ModelKind::EDiSC) throw ModelError("grad_chi: EDiSC kind required");
  const ProbabilityTables tab = compute_tables(state, &rho, hp);
  const Matrix r = responsibilities(W, tab);
  const Matrix rho_sums = detail::bag_rho_sums(W, rho);
  const Matrix u = tab.psi_tilde * rho;  // (K*T) x M, rows rho^T psi~^{k,t}
  const Matrix c = detail::weighted_length_by_kt(W, r, state.T);

  Matrix grad = r.transpose() * rho_sums;  // K x M
  for (int k = 0; k < state.K; ++k)
    for (int t = 0; t < state.T; ++t) grad.row(k) -= c(k, t) * u.row(k * state.T + t);
  grad *= lambda;
  grad -= state.chi / hp.kappa_chi;
  return grad;
}

// EDiSC: gradient with respect to theta^t (M), 0-based t.
inline Vector grad_theta(const ModelState& state, const SnippetDataset& W, const Matrix& rho,
                         const Hyperparams& hp, double lambda, int t) {
  if (hp.kind != ModelKind::EDiSC) throw ModelError("grad_theta: EDiSC kind required");
  if (t < 0 || t >= state.T) throw ModelError("grad_theta: t out of range");
  const ProbabilityTables tab = compute_tables(state, &rho, hp);
  const Matrix r = responsibilities(W, tab);
  const Matrix u = tab.psi_tilde * rho;

  Vector lik = Vector::Zero(state.E());
  for (int d = 0; d < W.D(); ++d) {
    const Snippet& s = W.snippets[d];
    if (s.time - 1 != t) continue;
    for (int w : s.words) lik += rho.row(w).transpose();
    Vector mix = Vector::Zero(state.E());
    for (int k = 0; k < state.K; ++k) mix += r(d, k) * u.row(k * state.T + t).transpose();
    lik -= static_cast<double>(s.length()) * mix;
  }
  return lambda * lik + detail::ar1_grad_row(state.theta, t, hp.kappa_theta, hp.alpha_theta);
}

// EDiSC: gradient with respect to the bias sigma (V). The count part
// N_j - sum_d L_d sum_k r_{d,k} psi~_j^{k,t_d} sums to zero over j.
inline Vector grad_sigma_corr(const ModelState& state, const SnippetDataset& W, const Matrix& rho,
                              const Hyperparams& hp, double lambda) {
  if (hp.kind != ModelKind::EDiSC) throw ModelError("grad_sigma_corr: EDiSC kind required");
  const ProbabilityTables tab = compute_tables(state, &rho, hp);
  const Matrix r = responsibilities(W, tab);
  const Matrix c = detail::weighted_length_by_kt(W, r, state.T);

  Vector lik = Vector::Zero(W.V());
  for (int d = 0; d < W.D(); ++d)
    for (int w : W.snippets[d].words) lik[w] += 1.0;
  for (int k = 0; k < state.K; ++k)
    for (int t = 0; t < state.T; ++t)
      lik -= c(k, t) * tab.psi_tilde.row(k * state.T + t).transpose();
  return lambda * lik - state.sigma_corr / hp.kappa_sigma;
}

// Both kinds: gradient with respect to phi^{g,t} (K), 0-based g,t. The
// likelihood part sum_{d in (g,t)} (r_d - phi~^{g,t}) sums to zero over senses.
inline Vector grad_phi(const ModelState& state, const SnippetDataset& W, const Matrix* rho,
                       const Hyperparams& hp, double lambda, int g, int t) {
  if (g < 0 || g >= state.G || t < 0 || t >= state.T) throw ModelError("grad_phi: (g,t) out of range");
  const ProbabilityTables tab = compute_tables(state, rho, hp);
  const Matrix r = responsibilities(W, tab);
  const int gt = state.gt_row(g, t);

  Vector lik = Vector::Zero(state.K);
  for (int d = 0; d < W.D(); ++d) {
    const Snippet& s = W.snippets[d];
    if (s.genre - 1 != g || s.time - 1 != t) continue;
    lik += r.row(d).transpose() - tab.phi_tilde.row(gt).transpose();
  }
  const Matrix phi_g = state.phi.middleRows(g * state.T, state.T);
  return lambda * lik + detail::ar1_grad_row(phi_g, t, hp.kappa_phi, hp.alpha_phi);
}

// DiSC: gradient with respect to chi (K x V); the D-32 expression summed over t.
inline Matrix grad_chi_disc(const ModelState& state, const SnippetDataset& W,
                            const Hyperparams& hp, double lambda) {
  if (hp.kind != ModelKind::DiSC) throw ModelError("grad_chi_disc: DiSC kind required");
  const ProbabilityTables tab = compute_tables(state, nullptr, hp);
  const Matrix r = responsibilities(W, tab);
  const Matrix c = detail::weighted_length_by_kt(W, r, state.T);

  Matrix lik = Matrix::Zero(state.K, W.V());
  for (int d = 0; d < W.D(); ++d) {
    const Snippet& s = W.snippets[d];
    for (int w : s.words)
      for (int k = 0; k < state.K; ++k) lik(k, w) += r(d, k);
  }
  for (int k = 0; k < state.K; ++k)
    for (int t = 0; t < state.T; ++t) lik.row(k) -= c(k, t) * tab.psi_tilde.row(k * state.T + t);
  return lambda * lik - state.chi / hp.kappa_chi;
}

// DiSC: gradient with respect to theta^t (V); the D-32 expression summed over k.
inline Vector grad_theta_disc(const ModelState& state, const SnippetDataset& W,
                              const Hyperparams& hp, double lambda, int t) {
  if (hp.kind != ModelKind::DiSC) throw ModelError("grad_theta_disc: DiSC kind required");
  if (t < 0 || t >= state.T) throw ModelError("grad_theta_disc: t out of range");
  const ProbabilityTables tab = compute_tables(state, nullptr, hp);
  const Matrix r = responsibilities(W, tab);

  Vector lik = Vector::Zero(W.V());
  Vector c = Vector::Zero(state.K);
  for (int d = 0; d < W.D(); ++d) {
    const Snippet& s = W.snippets[d];
    if (s.time - 1 != t) continue;
    for (int w : s.words) lik[w] += 1.0;
    c += static_cast<double>(s.length()) * r.row(d).transpose();
  }
  for (int k = 0; k < state.K; ++k) lik -= c[k] * tab.psi_tilde.row(k * state.T + t).transpose();
  return lambda * lik + detail::ar1_grad_row(state.theta, t, hp.kappa_theta, hp.alpha_theta);
}

// Central finite differences with one Richardson step; returns the max relative
// error against the analytic gradient, with an absolute floor of 1e-8 in the
// denominator. Steps are scaled per coordinate by max(1, |x_i|).
inline double finite_diff_check(const std::function<double(const Vector&)>& f,
                                const Vector& analytic_grad, const Vector& point,
                                double step = 1e-5) {
  if (step <= 0) throw ModelError("finite_diff_check: step must be > 0");
  if (analytic_grad.size() != point.size())
    throw ModelError("finite_diff_check: gradient/point size mismatch");
  double max_err = 0.0;
  Vector x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(point[i]));
    auto central = [&](double hh) {
      x[i] = point[i] + hh;
      const double fp = f(x);
      x[i] = point[i] - hh;
      const double fm = f(x);
      x[i] = point[i];
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw ModelError("finite_diff_check: non-finite function value");
      return (fp - fm) / (2.0 * hh);
    };
    const double d_h = central(h);
    const double d_h2 = central(h / 2.0);
    const double d = (4.0 * d_h2 - d_h) / 3.0;
    const double err = std::abs(d - analytic_grad[i]) / std::max(std::abs(d), 1e-8);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace edisc
