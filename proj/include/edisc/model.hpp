#pragma once

#include "edisc/common.hpp"
#include "edisc/corpus.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace edisc {

enum class ModelKind { EDiSC, DiSC };

inline std::string to_string(ModelKind k) { return k == ModelKind::EDiSC ? "edisc" : "disc"; }

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "edisc" || s == "EDiSC") return ModelKind::EDiSC;
  if (s == "disc" || s == "DiSC") return ModelKind::DiSC;
  throw ModelError("unknown model kind '" + s + "' (expected edisc|disc)");
}

struct Hyperparams {
  ModelKind kind = ModelKind::EDiSC;
  int K = 2;
  int M = 0;  // embedding dimension; meaningful for EDiSC only
  double alpha_phi = 0.9;
  double alpha_theta = 0.9;
  double kappa_phi = 0.25;
  double kappa_theta = 0.25;
  double kappa_chi = 1.25;
  double kappa_sigma = 0.25;

  void validate() const {
    if (std::abs(alpha_phi) >= 1.0 || std::abs(alpha_theta) >= 1.0)
      throw ModelError("hyperparams: |alpha| must be < 1 for a proper mean-reverting prior");
    if (kappa_phi <= 0 || kappa_theta <= 0 || kappa_chi <= 0 || kappa_sigma <= 0)
      throw ModelError("hyperparams: kappas must be > 0");
    if (K < 1) throw ModelError("hyperparams: K must be >= 1");
    if (kind == ModelKind::EDiSC && M < 1) throw ModelError("hyperparams: EDiSC requires M >= 1");
  }
};

// Appendix-style elicitation. At the default split a_chi = a_theta = 0.5 the
// rounded values kappa_chi = 2.5/c, kappa_theta = 0.5/c are returned; any other
// split uses the un-rounded expressions
//   kappa_chi   = a_chi  * ((log(1000)/3)^2 - 2*kappa_sigma) / c
//   kappa_theta = a_theta * (1 - alpha_theta^2) * ((log(1000)/3)^2 - 2*kappa_sigma) / c.
inline Hyperparams default_hyperparams(ModelKind kind, int K, int M,
                                       std::optional<double> c = std::nullopt,
                                       double a_chi = 0.5, double a_theta = 0.5) {
  Hyperparams hp;
  hp.kind = kind;
  hp.K = K;
  hp.alpha_phi = 0.9;
  hp.alpha_theta = 0.9;
  hp.kappa_phi = 0.25;
  if (kind == ModelKind::DiSC) {
    hp.M = 0;
    hp.kappa_theta = 0.25;
    hp.kappa_chi = 1.25;
    hp.kappa_sigma = 0.25;  // unused by DiSC; kept so one state layout serves both kinds
  } else {
    hp.M = M;
    if (!c) throw ModelError("default_hyperparams: EDiSC needs the embedding scale c");
    if (*c <= 0) throw ModelError("default_hyperparams: c must be > 0");
    if (std::abs(a_chi + a_theta - 1.0) > 1e-12)
      throw ModelError("default_hyperparams: a_chi + a_theta must equal 1");
    hp.kappa_sigma = 0.25;
    if (a_chi == 0.5 && a_theta == 0.5) {
      hp.kappa_chi = 2.5 / *c;
      hp.kappa_theta = 0.5 / *c;
    } else {
      const double base = std::pow(std::log(1000.0) / 3.0, 2) - 2.0 * hp.kappa_sigma;
      hp.kappa_chi = a_chi * base / *c;
      hp.kappa_theta = a_theta * (1.0 - hp.alpha_theta * hp.alpha_theta) * base / *c;
    }
  }
  hp.validate();
  return hp;
}

// Parameter blocks for one model kind. theta/chi live in the embedding space
// (E = M) for EDiSC and directly in logit space (E = V) for DiSC; sigma_corr is
// identically zero for DiSC so the same layout serves both kinds.
struct ModelState {
  Matrix phi;         // (G*T) x K, row (g,t) = g*T + t  (0-based)
  Matrix theta;       // T x E
  Matrix chi;         // K x E
  Vector sigma_corr;  // V
  int G = 1, T = 1, K = 1;

  int E() const { return static_cast<int>(theta.cols()); }
  int gt_row(int g0, int t0) const { return g0 * T + t0; }
  int kt_row(int k0, int t0) const { return k0 * T + t0; }

  static ModelState zeros(ModelKind kind, int G, int T, int K, int V, int M) {
    ModelState st;
    st.G = G;
    st.T = T;
    st.K = K;
    const int E = (kind == ModelKind::EDiSC) ? M : V;
    st.phi = Matrix::Zero(G * T, K);
    st.theta = Matrix::Zero(T, E);
    st.chi = Matrix::Zero(K, E);
    st.sigma_corr = Vector::Zero(V);
    return st;
  }

  bool finite() const {
    return phi.allFinite() && theta.allFinite() && chi.allFinite() && sigma_corr.allFinite();
  }
};

struct ProbabilityTables {
  Matrix phi_tilde, log_phi_tilde;  // (G*T) x K
  Matrix psi_tilde, log_psi_tilde;  // (K*T) x V
  int G = 1, T = 1, K = 1;

  int gt_row(int g0, int t0) const { return g0 * T + t0; }
  int kt_row(int k0, int t0) const { return k0 * T + t0; }
};

// psi^{k,t} = rho (chi^k + theta^t) + sigma for EDiSC, chi^k + theta^t for DiSC;
// rows softmaxed into probabilities.
inline ProbabilityTables compute_tables(const ModelState& state, const Matrix* rho,
                                        const Hyperparams& hp) {
  hp.validate();
  if ((hp.kind == ModelKind::EDiSC) != (rho != nullptr))
    throw ModelError("compute_tables: rho must be present iff kind is EDiSC");
  const int T = state.T, K = state.K;
  if (hp.kind == ModelKind::EDiSC) {
    if (rho->cols() != state.E())
      throw ModelError("compute_tables: block theta/chi: embedding dim mismatch with rho");
    if (rho->rows() != state.sigma_corr.size())
      throw ModelError("compute_tables: block sigma_corr: length mismatch with rho rows");
  } else if (state.theta.cols() != state.sigma_corr.size()) {
    throw ModelError("compute_tables: block theta: DiSC requires E == V");
  }

  ProbabilityTables tab;
  tab.G = state.G;
  tab.T = T;
  tab.K = K;

  Matrix xi(K * T, state.E());
  for (int k = 0; k < K; ++k)
    for (int t = 0; t < T; ++t) xi.row(k * T + t) = state.chi.row(k) + state.theta.row(t);

  Matrix psi;
  if (hp.kind == ModelKind::EDiSC) {
    psi = xi * rho->transpose();
    psi.rowwise() += state.sigma_corr.transpose();
  } else {
    psi = std::move(xi);
  }
  tab.log_psi_tilde = psi;
  log_softmax_rows(tab.log_psi_tilde);
  tab.psi_tilde = tab.log_psi_tilde.array().exp();

  tab.log_phi_tilde = state.phi;
  log_softmax_rows(tab.log_phi_tilde);
  tab.phi_tilde = tab.log_phi_tilde.array().exp();
  return tab;
}

// Marginal log-likelihood: per snippet, log-sum-exp over senses of
// log phi~_k + sum_w log psi~_w, accumulated in log space throughout.
inline double log_likelihood(const SnippetDataset& W, const ProbabilityTables& tab,
                             Vector* per_snippet = nullptr) {
  const int K = tab.K, T = tab.T;
  if (per_snippet) per_snippet->resize(W.D());
  double total = 0.0;
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
    const double ld = log_sum_exp(acc);
    if (per_snippet) (*per_snippet)[d] = ld;
    total += ld;
  }
  return total;
}

namespace detail {

inline double normal_logpdf(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& mean,
                            double var) {
  const double n = static_cast<double>(x.size());
  return -0.5 * (n * std::log(2.0 * M_PI * var) + (x - mean).squaredNorm() / var);
}

inline double normal_logpdf_zero(const Eigen::Ref<const Vector>& x, double var) {
  const double n = static_cast<double>(x.size());
  return -0.5 * (n * std::log(2.0 * M_PI * var) + x.squaredNorm() / var);
}

// AR(1) chain over the rows of a T x n matrix: stationary start, then
// row_t | row_{t-1} ~ N(alpha * row_{t-1}, kappa I).
inline double ar1_logdensity(const Matrix& rows, double kappa, double alpha) {
  const double stat_var = kappa / (1.0 - alpha * alpha);
  double lp = normal_logpdf_zero(rows.row(0).transpose(), stat_var);
  for (Eigen::Index t = 1; t < rows.rows(); ++t)
    lp += normal_logpdf(rows.row(t).transpose(), alpha * rows.row(t - 1).transpose(), kappa);
  return lp;
}

}  // namespace detail

struct PriorBreakdown {
  double phi = 0, theta = 0, chi = 0, sigma = 0;
  double total() const { return phi + theta + chi + sigma; }
};

inline PriorBreakdown log_prior_blocks(const ModelState& state, const Hyperparams& hp) {
  hp.validate();
  if (!state.finite()) throw ModelError("log_prior: non-finite state");
  PriorBreakdown out;
  for (int g = 0; g < state.G; ++g)
    out.phi += detail::ar1_logdensity(state.phi.middleRows(g * state.T, state.T), hp.kappa_phi,
                                      hp.alpha_phi);
  out.theta = detail::ar1_logdensity(state.theta, hp.kappa_theta, hp.alpha_theta);
  for (int k = 0; k < state.K; ++k)
    out.chi += detail::normal_logpdf_zero(state.chi.row(k).transpose(), hp.kappa_chi);
  if (hp.kind == ModelKind::EDiSC)
    out.sigma = detail::normal_logpdf_zero(state.sigma_corr, hp.kappa_sigma);
  return out;
}

inline double log_prior(const ModelState& state, const Hyperparams& hp) {
  return log_prior_blocks(state, hp).total();
}

// Unnormalized tempered log-posterior: log prior + lambda * log likelihood.
// lambda = 0 is admitted (prior only); tempering schedules stay within (0,1].
inline double log_posterior(const ModelState& state, const SnippetDataset& W, const Matrix* rho,
                            const Hyperparams& hp, double lambda = 1.0) {
  if (lambda < 0.0 || lambda > 1.0) throw ModelError("log_posterior: lambda must lie in [0,1]");
  const double lp = log_prior(state, hp);
  if (lambda == 0.0) return lp;
  const ProbabilityTables tab = compute_tables(state, rho, hp);
  return lp + lambda * log_likelihood(W, tab);
}

// Draws a full state from the prior (sigma_corr from its prior for EDiSC, zero
// for DiSC).
inline ModelState sample_prior_state(const Hyperparams& hp, int G, int T, int V, Rng& rng) {
  hp.validate();
  const int E = (hp.kind == ModelKind::EDiSC) ? hp.M : V;
  ModelState st = ModelState::zeros(hp.kind, G, T, hp.K, V, hp.M);
  auto draw_ar1 = [&](Matrix& rows, double kappa, double alpha) {
    const double stat_sd = std::sqrt(kappa / (1.0 - alpha * alpha));
    rows.row(0) = stat_sd * standard_normal_vector(rows.cols(), rng).transpose();
    const double sd = std::sqrt(kappa);
    for (Eigen::Index t = 1; t < rows.rows(); ++t)
      rows.row(t) = alpha * rows.row(t - 1) + sd * standard_normal_vector(rows.cols(), rng).transpose();
  };
  for (int g = 0; g < G; ++g) {
    Matrix block(T, hp.K);
    draw_ar1(block, hp.kappa_phi, hp.alpha_phi);
    st.phi.middleRows(g * T, T) = block;
  }
  draw_ar1(st.theta, hp.kappa_theta, hp.alpha_theta);
  st.chi = std::sqrt(hp.kappa_chi) * standard_normal_matrix(hp.K, E, rng);
  if (hp.kind == ModelKind::EDiSC)
    st.sigma_corr = std::sqrt(hp.kappa_sigma) * standard_normal_vector(V, rng);
  return st;
}

struct SimulationResult {
  SnippetDataset data;
  ModelState truth;
  ProbabilityTables tables;
};

// Forward generative run: state from the prior, then per snippet a sense
// z ~ Mult(phi~) and L_d iid context words from psi~^{z,t}. Snippet lengths are
// drawn uniformly on {max(1, L-4), ..., L} as a stand-in for the unmodelled
// stopword/min-count filtering; every snippet carries its true sense.
inline SimulationResult simulate(const Hyperparams& hp, const Matrix* rho, int G, int T, int V,
                                 int L, const std::vector<long>& counts_gt, std::uint64_t seed) {
  hp.validate();
  if (static_cast<int>(counts_gt.size()) != G * T)
    throw ModelError("simulate: counts_gt must have G*T entries");
  for (long c : counts_gt)
    if (c < 0) throw ModelError("simulate: negative snippet count");
  Rng rng = make_rng(seed);

  SimulationResult out;
  out.truth = sample_prior_state(hp, G, T, V, rng);
  out.tables = compute_tables(out.truth, rho, hp);

  std::vector<std::discrete_distribution<int>> word_dist;
  word_dist.reserve(hp.K * T);
  for (int k = 0; k < hp.K; ++k)
    for (int t = 0; t < T; ++t) {
      const auto row = out.tables.psi_tilde.row(k * T + t);
      word_dist.emplace_back(row.data(), row.data() + row.size());
    }

  SnippetDataset& ds = out.data;
  ds.L = L;
  ds.G = G;
  ds.T = T;
  ds.Kprime = hp.K;
  ds.vocab.lemmas.resize(V);
  ds.vocab.counts.assign(V, 0);
  for (int v = 0; v < V; ++v) ds.vocab.lemmas[v] = "w" + std::to_string(v);

  std::uniform_int_distribution<int> len_dist(std::max(1, L - 4), L);
  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t) {
      const auto prow = out.tables.phi_tilde.row(g * T + t);
      std::discrete_distribution<int> sense_dist(prow.data(), prow.data() + prow.size());
      for (long i = 0; i < counts_gt[static_cast<size_t>(g) * T + t]; ++i) {
        Snippet s;
        s.genre = g + 1;
        s.time = t + 1;
        const int z = sense_dist(rng);
        s.true_sense = z + 1;
        s.collocate = true;
        const int ld = len_dist(rng);
        s.words.reserve(ld);
        auto& wd = word_dist[static_cast<size_t>(z) * T + t];
        for (int j = 0; j < ld; ++j) {
          const int w = wd(rng);
          s.words.push_back(w);
          ++ds.vocab.counts[w];
        }
        ds.snippets.push_back(std::move(s));
      }
    }
  return out;
}

}  // namespace edisc
