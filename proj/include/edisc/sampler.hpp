#pragma once

#include "edisc/common.hpp"
#include "edisc/gradients.hpp"
#include "edisc/model.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <string>
#include <vector>

namespace edisc {

struct SamplerConfig {
  long N = 5000;
  long N_temp = -1;  // -1: N/2
  long N_stop = -1;  // -1: N/2
  long N_tune = 10;
  double lambda_min = 0.1;
  double beta = 1.0 / 3.0;
  int leapfrog_chi = 10;
  int leapfrog_theta = 5;
  int leapfrog_phi = 5;
  int leapfrog_sigma = 5;
  double alpha_opt = 0.651;  // 0.574 for MALA
  long thin = 10;
  std::uint64_t seed = 1;
  bool temper_phi = true;
  bool temper_chi = true;
  bool store_psi = true;
  bool store_raw = false;

  long n_temp() const { return N_temp < 0 ? N / 2 : N_temp; }
  long n_stop() const { return N_stop < 0 ? N / 2 : N_stop; }
  long burn() const { return std::max(n_temp(), n_stop()); }

  void validate() const {
    if (N < 1) throw ModelError("sampler config: N must be >= 1");
    if (lambda_min <= 0 || lambda_min > 1)
      throw ModelError("sampler config: lambda_min must lie in (0,1]");
    if (beta <= 0 || beta > 1) throw ModelError("sampler config: beta must lie in (0,1]");
    if (n_temp() > N) throw ModelError("sampler config: N_temp must be <= N");
    if (thin < 1) throw ModelError("sampler config: thin must be >= 1");
    if (N_tune < 1) throw ModelError("sampler config: N_tune must be >= 1");
    if (leapfrog_chi < 1 || leapfrog_theta < 1 || leapfrog_phi < 1 || leapfrog_sigma < 1)
      throw ModelError("sampler config: leapfrog counts must be >= 1");
  }
};

// Burn-in inverse temperature: lambda_min + (1 - lambda_min) (n/N_temp)^beta for
// n <= N_temp, exactly 1 afterwards.
inline double tempering_lambda(long n, const SamplerConfig& cfg) {
  if (n < 0) throw ModelError("tempering_lambda: n must be >= 0");
  const long nt = cfg.n_temp();
  if (nt <= 0 || n > nt) return 1.0;
  return cfg.lambda_min +
         (1.0 - cfg.lambda_min) * std::pow(static_cast<double>(n) / nt, cfg.beta);
}

struct HmcResult {
  bool accepted = false;
  bool nonfinite = false;
  double alpha = 0.0;      // Hastings acceptance probability
  double log_ratio = 0.0;  // -(H1 - H0); energy drift of the trajectory
};

// One Metropolis-within-Gibbs HMC update of a block. eval(x, grad) returns the
// potential energy -(log prior + lambda log lik) restricted to the block and
// fills its gradient. Leapfrog: half momentum step, LF position steps with
// LF-1 interleaved momentum steps, final half momentum step. Non-finite
// energies reject the proposal without advancing the block.
template <class Eval>
inline HmcResult hmc_block_update(Vector& x, Eval&& eval, double sigma, int LF, Rng& rng) {
  if (sigma <= 0) throw ModelError("hmc_block_update: sigma must be > 0");
  if (LF < 1) throw ModelError("hmc_block_update: LF must be >= 1");
  HmcResult res;
  Vector grad(x.size());
  const double U0 = eval(x, grad);
  if (!std::isfinite(U0) || !grad.allFinite()) {
    res.nonfinite = true;
    return res;
  }
  Vector q = standard_normal_vector(x.size(), rng);
  const double KE0 = 0.5 * q.squaredNorm();
  q -= 0.5 * sigma * grad;

  const Vector x0 = x;
  double U1 = 0;
  bool bad = false;
  for (int l = 1; l <= LF; ++l) {
    x += sigma * q;
    U1 = eval(x, grad);
    if (!std::isfinite(U1) || !grad.allFinite()) {
      bad = true;
      break;
    }
    if (l != LF) q -= sigma * grad;
  }
  if (bad) {
    x = x0;
    res.nonfinite = true;
    return res;
  }
  q -= 0.5 * sigma * grad;
  const double KE1 = 0.5 * q.squaredNorm();
  res.log_ratio = U0 + KE0 - U1 - KE1;
  res.alpha = std::min(1.0, std::exp(res.log_ratio));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (unif(rng) < res.alpha) {
    res.accepted = true;  // x already holds the proposal
  } else {
    x = x0;
  }
  return res;
}

struct BlockStats {
  std::string name;
  double sigma2 = 0;
  long attempts = 0, accepts = 0;
  long post_attempts = 0, post_accepts = 0;  // after tuning stops
  long nonfinite = 0;

  double accept_rate() const { return attempts ? double(accepts) / attempts : 0.0; }
  double post_accept_rate() const {
    return post_attempts ? double(post_accepts) / post_attempts : 0.0;
  }
};

struct Chain {
  ModelKind kind = ModelKind::EDiSC;
  std::string algorithm = "hmc";  // hmc | mala | labelled
  int G = 1, T = 1, K = 1, V = 0, E = 0;
  SamplerConfig cfg;
  std::vector<Matrix> phi_draws;        // (G*T) x K probability rows
  std::vector<Matrix> psi_draws;        // (K*T) x V probability rows (may be empty)
  std::vector<ModelState> raw_draws;    // optional raw states
  Matrix loglik;                        // draws x D
  std::vector<BlockStats> blocks;
  double wall_seconds = 0;

  long n_draws() const { return static_cast<long>(phi_draws.size()); }
  int gt_row(int g0, int t0) const { return g0 * T + t0; }
  int kt_row(int k0, int t0) const { return k0 * T + t0; }
};

namespace detail {

// AR(1) prior terms that involve one row x: the own transition plus the
// coupling into the next row when it exists.
inline double ar1_value_at(const Vector& x, const Vector* prev, const Vector* next, double kappa,
                           double alpha) {
  double lp = prev ? normal_logpdf(x, alpha * *prev, kappa)
                   : normal_logpdf_zero(x, kappa / (1.0 - alpha * alpha));
  if (next) lp += normal_logpdf(*next, alpha * x, kappa);
  return lp;
}

inline void ar1_grad_at(const Vector& x, const Vector* prev, const Vector* next, double kappa,
                        double alpha, Vector& grad) {
  if (prev)
    grad = -(x - alpha * *prev) / kappa;
  else
    grad = -(1.0 - alpha * alpha) / kappa * x;
  if (next) grad += alpha / kappa * (*next - alpha * x);
}

struct FitProblem {
  const SnippetDataset* data = nullptr;
  const Matrix* rho = nullptr;
  Hyperparams hp;
  bool labelled = false;
  int G = 1, T = 1, K = 1, V = 0, D = 0, E = 0;
  std::vector<std::vector<int>> by_t;   // snippets per 0-based time
  std::vector<std::vector<int>> by_gt;  // snippets per g*T+t
  Vector Ld;
  Matrix rho_sum;       // D x M (EDiSC)
  Matrix rho_sum_by_t;  // T x M (EDiSC)
  Matrix cnt_by_t;      // T x V word counts (DiSC)
  Vector word_count;    // V
  Matrix label_count;   // (G*T) x K (labelled runs)

  bool edisc() const { return hp.kind == ModelKind::EDiSC; }

  FitProblem(const SnippetDataset& W, const Matrix* rho_in, const Hyperparams& hp_in,
             bool labelled_run)
      : data(&W), rho(rho_in), hp(hp_in), labelled(labelled_run) {
    hp.validate();
    G = W.G;
    T = W.T;
    K = hp.K;
    V = W.V();
    D = W.D();
    E = edisc() ? hp.M : V;
    if (edisc() && !labelled) {
      if (!rho) throw ModelError("sampler: EDiSC requires embeddings");
      if (rho->rows() != V || rho->cols() != hp.M)
        throw ModelError("sampler: embedding matrix must be V x M");
    }
    by_t.assign(T, {});
    by_gt.assign(static_cast<size_t>(G) * T, {});
    Ld.resize(D);
    word_count = Vector::Zero(V);
    if (labelled) label_count = Matrix::Zero(G * T, K);
    for (int d = 0; d < D; ++d) {
      const Snippet& s = W.snippets[d];
      by_t[s.time - 1].push_back(d);
      by_gt[static_cast<size_t>(s.genre - 1) * T + (s.time - 1)].push_back(d);
      Ld[d] = s.length();
      for (int w : s.words) word_count[w] += 1.0;
      if (labelled) {
        if (!s.labelled())
          throw ModelError("run_labelled: snippet " + std::to_string(d) + " has no true sense");
        if (s.true_sense > K)
          throw ModelError("run_labelled: snippet " + std::to_string(d) + " sense exceeds K");
        label_count((s.genre - 1) * T + (s.time - 1), s.true_sense - 1) += 1.0;
      }
    }
    if (!labelled && edisc()) {
      rho_sum = Matrix::Zero(D, hp.M);
      for (int d = 0; d < D; ++d)
        for (int w : W.snippets[d].words) rho_sum.row(d) += rho->row(w);
      rho_sum_by_t = Matrix::Zero(T, hp.M);
      for (int d = 0; d < D; ++d) rho_sum_by_t.row(W.snippets[d].time - 1) += rho_sum.row(d);
    }
    if (!labelled && !edisc()) {
      cnt_by_t = Matrix::Zero(T, V);
      for (int d = 0; d < D; ++d)
        for (int w : W.snippets[d].words) cnt_by_t(W.snippets[d].time - 1, w) += 1.0;
    }
  }
};

// Current-state caches; block targets evaluate candidates into scratch and the
// accepted slice is committed back here.
struct Workspace {
  ModelState st;
  Matrix log_phi, phi_tilde;            // (G*T) x K
  Matrix psi, log_psi, psi_tilde;       // (K*T) x V
  Vector lse;                           // K*T
  Matrix s;                             // D x K   sum_w log psi~ at (k, tau_d)
  // EDiSC decomposition psi^{k,t} = P_chi_k + P_theta_t + sigma:
  Matrix P_chi;    // K x V
  Matrix P_theta;  // T x V
  Matrix A;        // D x K   rho_sum . chi_k
  Vector rt;       // D       rho_sum_d . theta_{tau_d}
  Vector sig_sum;  // D       sum_w sigma_w

  void refresh_phi(const FitProblem& p) {
    log_phi = st.phi;
    log_softmax_rows(log_phi);
    phi_tilde = log_phi.array().exp();
    (void)p;
  }

  void rebuild_psi_rows() {
    log_psi = psi;
    lse = log_softmax_rows(log_psi);
    psi_tilde = log_psi.array().exp();
  }

  // Full rebuild from st; used at init and after chi commits.
  void refresh_all(const FitProblem& p) {
    refresh_phi(p);
    if (p.labelled) return;
    const int T = p.T, K = p.K;
    if (p.edisc()) {
      P_chi = st.chi * p.rho->transpose();
      P_theta = st.theta * p.rho->transpose();
      psi.resize(K * T, p.V);
      for (int k = 0; k < K; ++k)
        for (int t = 0; t < T; ++t)
          psi.row(k * T + t) =
              P_chi.row(k) + P_theta.row(t) + st.sigma_corr.transpose();
      rebuild_psi_rows();
      A = p.rho_sum * st.chi.transpose();
      rt.resize(p.D);
      sig_sum = Vector::Zero(p.D);
      for (int d = 0; d < p.D; ++d) {
        rt[d] = p.rho_sum.row(d).dot(st.theta.row(p.data->snippets[d].time - 1));
        double ss = 0;
        for (int w : p.data->snippets[d].words) ss += st.sigma_corr[w];
        sig_sum[d] = ss;
      }
      refresh_s_edisc(p);
    } else {
      psi.resize(K * T, p.V);
      for (int k = 0; k < K; ++k)
        for (int t = 0; t < T; ++t) psi.row(k * T + t) = st.chi.row(k) + st.theta.row(t);
      rebuild_psi_rows();
      refresh_s_disc(p);
    }
  }

  void refresh_s_edisc(const FitProblem& p) {
    s.resize(p.D, p.K);
    for (int d = 0; d < p.D; ++d) {
      const int t = p.data->snippets[d].time - 1;
      for (int k = 0; k < p.K; ++k)
        s(d, k) = A(d, k) + rt[d] + sig_sum[d] - Ld_lse(p, d, k, t);
    }
  }

  double Ld_lse(const FitProblem& p, int d, int k, int t) const {
    return p.Ld[d] * lse[k * p.T + t];
  }

  void refresh_s_disc(const FitProblem& p) {
    s.resize(p.D, p.K);
    for (int d = 0; d < p.D; ++d) {
      const Snippet& sn = p.data->snippets[d];
      const int t = sn.time - 1;
      for (int k = 0; k < p.K; ++k) {
        double acc = 0;
        const auto row = log_psi.row(k * p.T + t);
        for (int w : sn.words) acc += row[w];
        s(d, k) = acc;
      }
    }
  }
};

// ---- block targets ---------------------------------------------------------
//
// Each target evaluates the block-restricted potential U(x) = -(log prior(x)
// + lambda log lik(x)) with gradient, keeping scratch from the latest eval so
// an accepted proposal commits without recomputation.

struct PhiTarget {
  const FitProblem& p;
  Workspace& ws;
  int g, t;
  double lambda = 1.0;
  Vector log_phi_x, phi_x;  // scratch (K)
  Vector acc, r;

  PhiTarget(const FitProblem& pp, Workspace& w) : p(pp), ws(w), g(0), t(0) {
    log_phi_x.resize(p.K);
    phi_x.resize(p.K);
    acc.resize(p.K);
    r.resize(p.K);
  }

  double operator()(const Vector& x, Vector& grad) {
    const int T = p.T;
    const double m = x.maxCoeff();
    const double lse_x = m + std::log((x.array() - m).exp().sum());
    log_phi_x = x.array() - lse_x;
    phi_x = log_phi_x.array().exp();

    double lik = 0;
    Vector lik_grad = Vector::Zero(p.K);
    if (p.labelled) {
      const auto counts = p.label_count.row(g * T + t);
      lik = counts.dot(log_phi_x);
      lik_grad = counts.transpose() - counts.sum() * phi_x;
    } else {
      for (int d : p.by_gt[g * T + t]) {
        acc = log_phi_x + ws.s.row(d).transpose();
        const double ld = log_sum_exp(acc);
        lik += ld;
        r = (acc.array() - ld).exp();
        lik_grad += r - phi_x;
      }
    }
    const Matrix phi_g = ws.st.phi.middleRows(g * T, T);
    Vector prev, next;
    const Vector* pv = nullptr;
    const Vector* nx = nullptr;
    if (t > 0) {
      prev = phi_g.row(t - 1);
      pv = &prev;
    }
    if (t + 1 < T) {
      next = phi_g.row(t + 1);
      nx = &next;
    }
    const double lp = ar1_value_at(x, pv, nx, p.hp.kappa_phi, p.hp.alpha_phi);
    Vector pg(p.K);
    ar1_grad_at(x, pv, nx, p.hp.kappa_phi, p.hp.alpha_phi, pg);
    grad = -(pg + lambda * lik_grad);
    return -(lp + lambda * lik);
  }

  void commit(const Vector& x) {
    const int row = g * p.T + t;
    ws.st.phi.row(row) = x.transpose();
    ws.log_phi.row(row) = log_phi_x.transpose();
    ws.phi_tilde.row(row) = phi_x.transpose();
  }
};

struct ChiTarget {
  const FitProblem& p;
  Workspace& ws;
  double lambda = 1.0;
  // scratch
  Matrix chi_x;                       // K x E
  Matrix P_chi_x;                     // K x V (EDiSC)
  Matrix psi_x, log_psi_x, psit_x;    // (K*T) x V
  Vector lse_x;                       // K*T
  Matrix A_x;                         // D x K (EDiSC)
  Matrix s_x;                         // D x K
  Matrix r;                           // D x K
  Matrix c;                           // K x T weighted lengths
  Matrix u;                           // (K*T) x M (EDiSC)

  ChiTarget(const FitProblem& pp, Workspace& w) : p(pp), ws(w) {}

  double operator()(const Vector& x, Vector& grad) {
    const int K = p.K, T = p.T, E = p.E;
    chi_x = Eigen::Map<const Matrix>(x.data(), K, E);

    psi_x.resize(K * T, p.V);
    if (p.edisc()) {
      P_chi_x = chi_x * p.rho->transpose();
      for (int k = 0; k < K; ++k)
        for (int t = 0; t < T; ++t)
          psi_x.row(k * T + t) =
              P_chi_x.row(k) + ws.P_theta.row(t) + ws.st.sigma_corr.transpose();
    } else {
      for (int k = 0; k < K; ++k)
        for (int t = 0; t < T; ++t) psi_x.row(k * T + t) = chi_x.row(k) + ws.st.theta.row(t);
    }
    log_psi_x = psi_x;
    lse_x = log_softmax_rows(log_psi_x);
    psit_x = log_psi_x.array().exp();

    // s under the candidate chi
    s_x.resize(p.D, K);
    if (p.edisc()) {
      A_x = p.rho_sum * chi_x.transpose();
      for (int d = 0; d < p.D; ++d) {
        const int t = p.data->snippets[d].time - 1;
        for (int k = 0; k < K; ++k)
          s_x(d, k) = A_x(d, k) + ws.rt[d] + ws.sig_sum[d] - p.Ld[d] * lse_x[k * T + t];
      }
    } else {
      for (int d = 0; d < p.D; ++d) {
        const Snippet& sn = p.data->snippets[d];
        const int t = sn.time - 1;
        for (int k = 0; k < K; ++k) {
          double acc2 = 0;
          const auto row = log_psi_x.row(k * T + t);
          for (int w : sn.words) acc2 += row[w];
          s_x(d, k) = acc2;
        }
      }
    }

    double lik = 0;
    r.resize(p.D, K);
    Vector acc(K);
    for (int d = 0; d < p.D; ++d) {
      const Snippet& sn = p.data->snippets[d];
      acc = ws.log_phi.row((sn.genre - 1) * T + (sn.time - 1)).transpose() +
            s_x.row(d).transpose();
      const double ld = log_sum_exp(acc);
      lik += ld;
      r.row(d) = (acc.array() - ld).exp();
    }

    c = Matrix::Zero(K, T);
    for (int d = 0; d < p.D; ++d)
      c.col(p.data->snippets[d].time - 1) += p.Ld[d] * r.row(d).transpose();

    Matrix lik_grad;
    if (p.edisc()) {
      u = psit_x * (*p.rho);  // (K*T) x M
      lik_grad = r.transpose() * p.rho_sum;
      for (int k = 0; k < K; ++k)
        for (int t = 0; t < T; ++t) lik_grad.row(k) -= c(k, t) * u.row(k * T + t);
    } else {
      lik_grad = Matrix::Zero(K, p.V);
      for (int d = 0; d < p.D; ++d)
        for (int w : p.data->snippets[d].words)
          for (int k = 0; k < K; ++k) lik_grad(k, w) += r(d, k);
      for (int k = 0; k < K; ++k)
        for (int t = 0; t < T; ++t) lik_grad.row(k) -= c(k, t) * psit_x.row(k * T + t);
    }
    const Matrix grad_m = -(lambda * lik_grad - chi_x / p.hp.kappa_chi);
    grad = Eigen::Map<const Vector>(grad_m.data(), grad_m.size());

    double lp = 0;
    for (int k = 0; k < K; ++k)
      lp += normal_logpdf_zero(chi_x.row(k).transpose(), p.hp.kappa_chi);
    return -(lp + lambda * lik);
  }

  void commit(const Vector& x) {
    ws.st.chi = Eigen::Map<const Matrix>(x.data(), p.K, p.E);
    ws.psi = psi_x;
    ws.log_psi = log_psi_x;
    ws.psi_tilde = psit_x;
    ws.lse = lse_x;
    ws.s = s_x;
    if (p.edisc()) {
      ws.P_chi = P_chi_x;  // matches the committed chi: the last eval was at x
      ws.A = A_x;
    }
  }
};

struct ThetaTarget {
  const FitProblem& p;
  Workspace& ws;
  int t = 0;
  double lambda = 1.0;
  // scratch: the time-t slice
  Matrix psi_x, log_psi_x, psit_x;  // K x V
  Vector lse_x;                     // K
  Vector P_theta_x;                 // V (EDiSC)
  Vector rt_x;                      // per snippet at time t (dense over D for simplicity)
  Matrix s_x;                       // |D(t)| x K
  Matrix u;                         // K x M

  ThetaTarget(const FitProblem& pp, Workspace& w) : p(pp), ws(w) {}

  double operator()(const Vector& x, Vector& grad) {
    const int K = p.K, T = p.T;
    const auto& idx = p.by_t[t];
    psi_x.resize(K, p.V);
    if (p.edisc()) {
      P_theta_x = (*p.rho) * x;
      for (int k = 0; k < K; ++k)
        psi_x.row(k) = ws.P_chi.row(k) + P_theta_x.transpose() + ws.st.sigma_corr.transpose();
    } else {
      for (int k = 0; k < K; ++k) psi_x.row(k) = ws.st.chi.row(k) + x.transpose();
    }
    log_psi_x = psi_x;
    lse_x = log_softmax_rows(log_psi_x);
    psit_x = log_psi_x.array().exp();

    s_x.resize(static_cast<Eigen::Index>(idx.size()), K);
    if (p.edisc()) {
      rt_x.resize(static_cast<Eigen::Index>(idx.size()));
      for (size_t i = 0; i < idx.size(); ++i) {
        const int d = idx[i];
        rt_x[static_cast<Eigen::Index>(i)] = p.rho_sum.row(d).dot(x);
        for (int k = 0; k < K; ++k)
          s_x(i, k) = ws.A(d, k) + rt_x[static_cast<Eigen::Index>(i)] + ws.sig_sum[d] -
                      p.Ld[d] * lse_x[k];
      }
    } else {
      for (size_t i = 0; i < idx.size(); ++i) {
        const Snippet& sn = p.data->snippets[idx[i]];
        for (int k = 0; k < K; ++k) {
          double acc2 = 0;
          const auto row = log_psi_x.row(k);
          for (int w : sn.words) acc2 += row[w];
          s_x(i, k) = acc2;
        }
      }
    }

    double lik = 0;
    Vector acc(K);
    Vector lik_grad = Vector::Zero(p.E);
    Vector mixw = Vector::Zero(K);  // sum_d L_d r_{d,k}
    Matrix r(static_cast<Eigen::Index>(idx.size()), K);
    for (size_t i = 0; i < idx.size(); ++i) {
      const Snippet& sn = p.data->snippets[idx[i]];
      acc = ws.log_phi.row((sn.genre - 1) * T + t).transpose() + s_x.row(i).transpose();
      const double ld = log_sum_exp(acc);
      lik += ld;
      r.row(i) = (acc.array() - ld).exp();
      mixw += p.Ld[idx[i]] * r.row(i).transpose();
    }
    if (p.edisc()) {
      u = psit_x * (*p.rho);  // K x M
      lik_grad = p.rho_sum_by_t.row(t).transpose();
      lik_grad -= u.transpose() * mixw;
    } else {
      lik_grad = p.cnt_by_t.row(t).transpose();
      lik_grad -= psit_x.transpose() * mixw;
    }

    Vector prev, next;
    const Vector* pv = nullptr;
    const Vector* nx = nullptr;
    if (t > 0) {
      prev = ws.st.theta.row(t - 1);
      pv = &prev;
    }
    if (t + 1 < T) {
      next = ws.st.theta.row(t + 1);
      nx = &next;
    }
    const double lp = ar1_value_at(x, pv, nx, p.hp.kappa_theta, p.hp.alpha_theta);
    Vector pg(p.E);
    ar1_grad_at(x, pv, nx, p.hp.kappa_theta, p.hp.alpha_theta, pg);
    grad = -(pg + lambda * lik_grad);
    return -(lp + lambda * lik);
  }

  void commit(const Vector& x) {
    const int K = p.K, T = p.T;
    ws.st.theta.row(t) = x.transpose();
    for (int k = 0; k < K; ++k) {
      ws.psi.row(k * T + t) = psi_x.row(k);
      ws.log_psi.row(k * T + t) = log_psi_x.row(k);
      ws.psi_tilde.row(k * T + t) = psit_x.row(k);
      ws.lse[k * T + t] = lse_x[k];
    }
    if (p.edisc()) ws.P_theta.row(t) = P_theta_x.transpose();
    const auto& idx = p.by_t[t];
    for (size_t i = 0; i < idx.size(); ++i) {
      if (p.edisc()) ws.rt[idx[i]] = rt_x[static_cast<Eigen::Index>(i)];
      ws.s.row(idx[i]) = s_x.row(i);
    }
  }
};

struct SigmaTarget {  // EDiSC only
  const FitProblem& p;
  Workspace& ws;
  double lambda = 1.0;
  Matrix psi_x, log_psi_x, psit_x;  // (K*T) x V
  Vector lse_x;                     // K*T
  Vector sig_sum_x;                 // D
  Matrix s_x;                       // D x K

  SigmaTarget(const FitProblem& pp, Workspace& w) : p(pp), ws(w) {}

  double operator()(const Vector& x, Vector& grad) {
    const int K = p.K, T = p.T;
    psi_x = ws.psi;
    psi_x.rowwise() += (x - ws.st.sigma_corr).transpose();
    log_psi_x = psi_x;
    lse_x = log_softmax_rows(log_psi_x);
    psit_x = log_psi_x.array().exp();

    sig_sum_x.resize(p.D);
    for (int d = 0; d < p.D; ++d) {
      double ss = 0;
      for (int w : p.data->snippets[d].words) ss += x[w];
      sig_sum_x[d] = ss;
    }
    s_x.resize(p.D, K);
    double lik = 0;
    Vector acc(K);
    Matrix c = Matrix::Zero(K, T);
    for (int d = 0; d < p.D; ++d) {
      const Snippet& sn = p.data->snippets[d];
      const int t = sn.time - 1;
      for (int k = 0; k < K; ++k)
        s_x(d, k) = ws.A(d, k) + ws.rt[d] + sig_sum_x[d] - p.Ld[d] * lse_x[k * T + t];
      acc = ws.log_phi.row((sn.genre - 1) * T + t).transpose() + s_x.row(d).transpose();
      const double ld = log_sum_exp(acc);
      lik += ld;
      c.col(t) += p.Ld[d] * (acc.array() - ld).exp().matrix();
    }
    Vector lik_grad = p.word_count;
    for (int k = 0; k < K; ++k)
      for (int t = 0; t < T; ++t) lik_grad -= c(k, t) * psit_x.row(k * T + t).transpose();

    grad = -((-x / p.hp.kappa_sigma) + lambda * lik_grad);
    return -(normal_logpdf_zero(x, p.hp.kappa_sigma) + lambda * lik);
  }

  void commit(const Vector& x) {
    ws.st.sigma_corr = x;
    ws.psi = psi_x;
    ws.log_psi = log_psi_x;
    ws.psi_tilde = psit_x;
    ws.lse = lse_x;
    ws.sig_sum = sig_sum_x;
    ws.s = s_x;
  }
};

}  // namespace detail

namespace detail {

inline Vector per_snippet_loglik(const FitProblem& p, const Workspace& ws) {
  Vector out(p.D);
  Vector acc(p.K);
  for (int d = 0; d < p.D; ++d) {
    const Snippet& sn = p.data->snippets[d];
    const int gt = (sn.genre - 1) * p.T + (sn.time - 1);
    if (p.labelled) {
      out[d] = ws.log_phi(gt, sn.true_sense - 1);
    } else {
      acc = ws.log_phi.row(gt).transpose() + ws.s.row(d).transpose();
      out[d] = log_sum_exp(acc);
    }
  }
  return out;
}

struct BlockTuner {
  double sigma2 = 1.0;
  std::vector<std::uint8_t> ring;
  size_t ring_pos = 0;
  long ring_filled = 0;
  long ring_accepts = 0;

  explicit BlockTuner(long n_tune, double s2) : sigma2(s2), ring(n_tune, 0) {}

  void record(bool accepted) {
    if (ring_filled == static_cast<long>(ring.size())) {
      ring_accepts -= ring[ring_pos];
    } else {
      ++ring_filled;
    }
    ring[ring_pos] = accepted ? 1 : 0;
    ring_accepts += ring[ring_pos];
    ring_pos = (ring_pos + 1) % ring.size();
  }

  void maybe_tune(long n, long n_tune, long n_stop, double alpha_opt) {
    if (n < n_tune || n > n_stop) return;
    const double abar = static_cast<double>(ring_accepts) / static_cast<double>(ring.size());
    const double cn = std::pow(static_cast<double>(n + 1) / n_tune, -0.8);
    sigma2 = std::exp(std::log(sigma2) + cn * (abar - alpha_opt));
  }
};

inline Chain run_sampler(const FitProblem& p, SamplerConfig cfg, const std::string& algorithm,
                         const std::optional<ModelState>& init) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  Rng rng = make_rng(cfg.seed);

  Workspace ws;
  if (init) {
    ws.st = *init;
    if (ws.st.G != p.G || ws.st.T != p.T || ws.st.K != p.K || ws.st.E() != p.E)
      throw ModelError("sampler: provided init state has wrong dimensions");
  } else if (p.labelled) {
    // only phi is sampled in a labelled run; drawing just its prior keeps the
    // chain identical across model kinds
    ws.st = ModelState::zeros(p.hp.kind, p.G, p.T, p.K, p.V, p.hp.M);
    const double stat_sd =
        std::sqrt(p.hp.kappa_phi / (1.0 - p.hp.alpha_phi * p.hp.alpha_phi));
    const double sd = std::sqrt(p.hp.kappa_phi);
    for (int g = 0; g < p.G; ++g) {
      ws.st.phi.row(g * p.T) = stat_sd * standard_normal_vector(p.K, rng).transpose();
      for (int t = 1; t < p.T; ++t)
        ws.st.phi.row(g * p.T + t) = p.hp.alpha_phi * ws.st.phi.row(g * p.T + t - 1) +
                                     sd * standard_normal_vector(p.K, rng).transpose();
    }
  } else {
    ws.st = sample_prior_state(p.hp, p.G, p.T, p.V, rng);
    ws.st.sigma_corr.setZero();
  }
  ws.refresh_all(p);
  {
    const Vector ll = p.D > 0 ? per_snippet_loglik(p, ws) : Vector::Zero(0);
    const double lp = log_prior(ws.st, p.hp) + (p.D > 0 ? ll.sum() : 0.0);
    if (!std::isfinite(lp))
      throw ModelError("sampler: non-finite log posterior at initialisation");
  }

  // block layout: [chi][theta_0..theta_{T-1}][phi_{g,t}...][sigma]; labelled
  // runs carry only the phi blocks.
  struct BlockRef {
    std::string name;
    int kind;  // 0 chi, 1 theta, 2 phi, 3 sigma
    int g = 0, t = 0;
    int LF = 1;
    bool tempered = false;
    int dim = 0;
  };
  std::vector<BlockRef> blocks;
  if (!p.labelled) {
    blocks.push_back({"chi", 0, 0, 0, cfg.leapfrog_chi, cfg.temper_chi, p.K * p.E});
    for (int t = 0; t < p.T; ++t)
      blocks.push_back({"theta[" + std::to_string(t) + "]", 1, 0, t, cfg.leapfrog_theta, false,
                        p.E});
  }
  for (int g = 0; g < p.G; ++g)
    for (int t = 0; t < p.T; ++t)
      blocks.push_back({"phi[" + std::to_string(g) + "," + std::to_string(t) + "]", 2, g, t,
                        cfg.leapfrog_phi, cfg.temper_phi, p.K});
  if (!p.labelled && p.edisc())
    blocks.push_back({"sigma", 3, 0, 0, cfg.leapfrog_sigma, false, p.V});

  std::vector<BlockTuner> tuners;
  std::vector<BlockStats> stats;
  for (const auto& b : blocks) {
    double s2 = 1.0;
    const double base = 2.4 * 2.4;
    switch (b.kind) {
      case 0: s2 = base / (std::pow(double(p.E) * p.K, 2) * b.LF); break;
      case 1: s2 = base / (std::pow(double(p.E), 2) * b.LF); break;
      case 2: s2 = base / (double(p.K) * b.LF); break;
      case 3: s2 = base / (double(p.V) * b.LF); break;
    }
    tuners.emplace_back(cfg.N_tune, s2);
    stats.push_back({b.name, s2, 0, 0, 0, 0, 0});
  }

  detail::PhiTarget phi_target(p, ws);
  std::optional<detail::ChiTarget> chi_target;
  std::optional<detail::ThetaTarget> theta_target;
  std::optional<detail::SigmaTarget> sigma_target;
  if (!p.labelled) {
    chi_target.emplace(p, ws);
    theta_target.emplace(p, ws);
    if (p.edisc()) sigma_target.emplace(p, ws);
  }

  const long burn = cfg.burn();
  Chain chain;
  chain.kind = p.hp.kind;
  chain.algorithm = algorithm;
  chain.G = p.G;
  chain.T = p.T;
  chain.K = p.K;
  chain.V = p.V;
  chain.E = p.E;
  chain.cfg = cfg;
  const long n_draws = cfg.N > burn ? (cfg.N - burn) / cfg.thin : 0;
  chain.loglik.resize(n_draws, p.D);

  Vector x;
  long stored = 0;
  for (long n = 1; n <= cfg.N; ++n) {
    const double lambda_n = tempering_lambda(n, cfg);
    const bool forward = (n % 2 == 1);

    // iterate blocks: chi first, theta over t (alternating direction), phi over
    // (g,t) with the same t-alternation, then sigma
    std::vector<size_t> order;
    order.reserve(blocks.size());
    size_t phi_base = p.labelled ? 0 : (1 + p.T);
    if (!p.labelled) order.push_back(0);
    for (int i = 0; i < p.T && !p.labelled; ++i) order.push_back(1 + (forward ? i : p.T - 1 - i));
    for (int i = 0; i < p.T; ++i) {
      const int t = forward ? i : p.T - 1 - i;
      for (int g = 0; g < p.G; ++g) order.push_back(phi_base + static_cast<size_t>(g) * p.T + t);
    }
    if (!p.labelled && p.edisc()) order.push_back(blocks.size() - 1);

    for (size_t bi : order) {
      const BlockRef& b = blocks[bi];
      const double lambda = b.tempered ? lambda_n : 1.0;
      const double sigma = std::sqrt(tuners[bi].sigma2);
      HmcResult res;
      switch (b.kind) {
        case 0: {
          chi_target->lambda = lambda;
          x = Eigen::Map<const Vector>(ws.st.chi.data(), ws.st.chi.size());
          res = hmc_block_update(x, *chi_target, sigma, b.LF, rng);
          if (res.accepted) chi_target->commit(x);
          break;
        }
        case 1: {
          theta_target->t = b.t;
          theta_target->lambda = lambda;
          x = ws.st.theta.row(b.t).transpose();
          res = hmc_block_update(x, *theta_target, sigma, b.LF, rng);
          if (res.accepted) theta_target->commit(x);
          break;
        }
        case 2: {
          phi_target.g = b.g;
          phi_target.t = b.t;
          phi_target.lambda = lambda;
          x = ws.st.phi.row(b.g * p.T + b.t).transpose();
          res = hmc_block_update(x, phi_target, sigma, b.LF, rng);
          if (res.accepted) phi_target.commit(x);
          break;
        }
        case 3: {
          sigma_target->lambda = lambda;
          x = ws.st.sigma_corr;
          res = hmc_block_update(x, *sigma_target, sigma, b.LF, rng);
          if (res.accepted) sigma_target->commit(x);
          break;
        }
      }
      ++stats[bi].attempts;
      stats[bi].accepts += res.accepted;
      stats[bi].nonfinite += res.nonfinite;
      if (n > cfg.n_stop()) {
        ++stats[bi].post_attempts;
        stats[bi].post_accepts += res.accepted;
      }
      tuners[bi].record(res.accepted);
      tuners[bi].maybe_tune(n, cfg.N_tune, cfg.n_stop(), cfg.alpha_opt);
    }

    if (n > burn && (n - burn) % cfg.thin == 0 && stored < n_draws) {
      chain.phi_draws.push_back(ws.phi_tilde);
      if (cfg.store_psi && !p.labelled) chain.psi_draws.push_back(ws.psi_tilde);
      if (cfg.store_raw) chain.raw_draws.push_back(ws.st);
      chain.loglik.row(stored) = per_snippet_loglik(p, ws).transpose();
      ++stored;
    }
  }

  for (size_t bi = 0; bi < blocks.size(); ++bi) stats[bi].sigma2 = tuners[bi].sigma2;
  chain.blocks = std::move(stats);
  chain.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return chain;
}

}  // namespace detail

inline Chain run_hmc(const SnippetDataset& W, const Matrix* rho, const Hyperparams& hp,
                     const SamplerConfig& cfg, const std::optional<ModelState>& init = std::nullopt) {
  detail::FitProblem p(W, rho, hp, /*labelled=*/false);
  return detail::run_sampler(p, cfg, "hmc", init);
}

// MALA is exactly the HMC kernel with one leapfrog step; the optimal
// acceptance target drops to 0.574.
inline Chain run_mala(const SnippetDataset& W, const Matrix* rho, const Hyperparams& hp,
                      SamplerConfig cfg, const std::optional<ModelState>& init = std::nullopt) {
  cfg.leapfrog_chi = cfg.leapfrog_theta = cfg.leapfrog_phi = cfg.leapfrog_sigma = 1;
  cfg.alpha_opt = 0.574;
  detail::FitProblem p(W, rho, hp, /*labelled=*/false);
  return detail::run_sampler(p, cfg, "mala", init);
}

// Labelled-baseline fit: the same phi prior and HMC kernel, conditioning on
// z = o, so the likelihood is prod_d phi~_{o_d}. Yields the ground-truth proxy
// posterior phi~ | (z = o).
inline Chain run_labelled(const SnippetDataset& W, const Hyperparams& hp, const SamplerConfig& cfg,
                          const std::optional<ModelState>& init = std::nullopt) {
  detail::FitProblem p(W, nullptr, hp, /*labelled=*/true);
  return detail::run_sampler(p, cfg, "labelled", init);
}

// Multiple chains with independent rng streams; deterministic per (seed, index)
// regardless of scheduling.
inline std::vector<Chain> run_chains(const SnippetDataset& W, const Matrix* rho,
                                     const Hyperparams& hp, const SamplerConfig& cfg, int n_chains,
                                     const std::string& algorithm = "hmc", int threads = 1) {
  std::vector<Chain> chains(n_chains);
  auto run_one = [&](int i) {
    SamplerConfig c = cfg;
    c.seed = cfg.seed + 1000003ULL * static_cast<std::uint64_t>(i);
    return algorithm == "mala" ? run_mala(W, rho, hp, c) : run_hmc(W, rho, hp, c);
  };
  if (threads <= 1) {
    for (int i = 0; i < n_chains; ++i) chains[i] = run_one(i);
  } else {
    std::vector<std::future<Chain>> futs;
    futs.reserve(n_chains);
    for (int i = 0; i < n_chains; ++i)
      futs.push_back(std::async(std::launch::async, run_one, i));
    for (int i = 0; i < n_chains; ++i) chains[i] = futs[i].get();
  }
  return chains;
}

}  // namespace edisc
