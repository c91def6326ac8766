#pragma once

#include "edisc/common.hpp"
#include "edisc/corpus.hpp"
#include "edisc/model.hpp"
#include "edisc/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

namespace edisc {

struct SensePosterior {
  Matrix p_hat;  // D x K, rows sum to 1
};

// Posterior sense probabilities per snippet, averaged over stored draws:
// p(z_d = k | .) normalised over k in log space for every draw.
inline SensePosterior sense_probabilities(const Chain& chain, const SnippetDataset& W) {
  if (chain.n_draws() == 0) throw ModelError("sense_probabilities: empty chain");
  bool need_psi = false;
  for (const auto& s : W.snippets)
    if (!s.words.empty()) need_psi = true;
  if (need_psi && chain.psi_draws.empty())
    throw ModelError("sense_probabilities: chain has no psi draws");
  const int K = chain.K, T = chain.T;
  Matrix p = Matrix::Zero(W.D(), K);
  Vector acc(K);
  for (long s = 0; s < chain.n_draws(); ++s) {
    const Matrix& phi = chain.phi_draws[s];
    for (int d = 0; d < W.D(); ++d) {
      const Snippet& sn = W.snippets[d];
      const int gt = (sn.genre - 1) * T + (sn.time - 1);
      for (int k = 0; k < K; ++k) {
        double a = std::log(phi(gt, k));
        if (!sn.words.empty()) {
          const auto row = chain.psi_draws[s].row(k * T + (sn.time - 1));
          for (int w : sn.words) a += std::log(row[w]);
        }
        acc[k] = a;
      }
      const double lse = log_sum_exp(acc);
      p.row(d) += (acc.array() - lse).exp().matrix().transpose();
    }
  }
  p /= static_cast<double>(chain.n_draws());
  return {std::move(p)};
}

using SenseMapping = std::vector<int>;  // model sense (0-based) -> true sense (0-based)

namespace detail {

inline void enumerate_surjections(int K, int Kp, std::vector<SenseMapping>& out) {
  SenseMapping m(K, 0);
  while (true) {
    std::vector<bool> hit(Kp, false);
    for (int k = 0; k < K; ++k) hit[m[k]] = true;
    if (std::all_of(hit.begin(), hit.end(), [](bool b) { return b; })) out.push_back(m);
    int i = 0;
    for (; i < K; ++i) {
      if (++m[i] < Kp) break;
      m[i] = 0;
    }
    if (i == K) break;
  }
}

inline double brier_for_mapping(const Matrix& p_hat, const SnippetDataset& W,
                                const SenseMapping& map, int Kp) {
  double bs = 0;
  long Dp = 0;
  Vector q(Kp);
  for (int d = 0; d < W.D(); ++d) {
    const Snippet& s = W.snippets[d];
    if (!s.collocate) continue;
    ++Dp;
    q.setZero();
    for (int k = 0; k < p_hat.cols(); ++k) q[map[k]] += p_hat(d, k);
    for (int kp = 0; kp < Kp; ++kp) {
      const double ind = (s.true_sense - 1 == kp) ? 1.0 : 0.0;
      bs += (q[kp] - ind) * (q[kp] - ind);
    }
  }
  if (Dp == 0) throw ModelError("brier_score: no collocate snippets to evaluate on");
  return bs / static_cast<double>(Dp);
}

}  // namespace detail

struct BrierResult {
  double bs = 0;
  SenseMapping mapping;
};

// Brier score over collocate snippets. With no mapping supplied, minimises over
// all surjections of model senses onto true senses (grouping model senses).
inline BrierResult brier_score(const Matrix& p_hat, const SnippetDataset& W,
                               const std::optional<SenseMapping>& mapping = std::nullopt) {
  const int K = static_cast<int>(p_hat.cols());
  const int Kp = W.Kprime;
  if (Kp < 1) throw ModelError("brier_score: dataset has no true senses");
  if (K < Kp) throw ModelError("brier_score: K < K' (cannot map senses onto true senses)");
  if (mapping) {
    for (int v : *mapping)
      if (v < 0 || v >= Kp) throw ModelError("brier_score: mapping value out of range");
    return {detail::brier_for_mapping(p_hat, W, *mapping, Kp), *mapping};
  }
  std::vector<SenseMapping> maps;
  detail::enumerate_surjections(K, Kp, maps);
  BrierResult best;
  best.bs = std::numeric_limits<double>::infinity();
  for (const auto& m : maps) {
    const double bs = detail::brier_for_mapping(p_hat, W, m, Kp);
    if (bs < best.bs) {
      best.bs = bs;
      best.mapping = m;
    }
  }
  return best;
}

struct WaicResult {
  double waic = 0;
  double lpd_hat = 0;
  double p_waic_hat = 0;
  Vector pointwise_var;  // per-snippet variance of log densities
  int n_unreliable = 0;  // snippets with variance > 0.4
};

// WAIC = -2 (LPD^ - p_waic^) from the stored draws x snippets log-likelihood
// matrix; log-mean-exp per snippet is computed stably and the variance uses the
// S-1 denominator.
inline WaicResult waic(const Matrix& loglik) {
  const long S = loglik.rows();
  if (S < 2) throw ModelError("waic: need at least 2 draws (variance undefined)");
  WaicResult out;
  out.pointwise_var.resize(loglik.cols());
  for (Eigen::Index d = 0; d < loglik.cols(); ++d) {
    const Vector col = loglik.col(d);
    const double m = col.maxCoeff();
    const double lpd = m + std::log((col.array() - m).exp().mean());
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(S - 1);
    out.lpd_hat += lpd;
    out.p_waic_hat += var;
    out.pointwise_var[d] = var;
    if (var > 0.4) ++out.n_unreliable;
  }
  out.waic = -2.0 * (out.lpd_hat - out.p_waic_hat);
  return out;
}

inline WaicResult waic(const Chain& chain) { return waic(chain.loglik); }

struct HpdInterval {
  double lo = 0, hi = 0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  double width() const { return hi - lo; }
};

// Shortest interval over sorted draws containing ceil(level * n) points.
inline HpdInterval hpd_interval(std::vector<double> draws, double level = 0.95) {
  const size_t n = draws.size();
  if (n < 100) throw ModelError("hpd_interval: need at least 100 draws");
  if (level <= 0 || level > 1) throw ModelError("hpd_interval: level must lie in (0,1]");
  std::sort(draws.begin(), draws.end());
  const size_t m = std::min<size_t>(n, static_cast<size_t>(std::ceil(level * n)));
  HpdInterval best{draws.front(), draws.back()};
  double best_w = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i + m <= n; ++i) {
    const double w = draws[i + m - 1] - draws[i];
    if (w < best_w) {
      best_w = w;
      best = {draws[i], draws[i + m - 1]};
    }
  }
  return best;
}

// Joint 95% HPD region for one phi~^{g,t}: membership by empirical density
// rank. A Gaussian product-kernel KDE over the first K-1 simplex coordinates is
// fit to the draws; the threshold keeps exactly `level` of them.
struct HpdRegion {
  std::vector<HpdInterval> coord;  // per-sense marginal intervals
  Matrix draws;                    // S x (K-1) support points
  Vector bandwidth;                // K-1 per-dim bandwidths
  double threshold = 0;
  bool whole_simplex = false;

  double kde(const Eigen::Ref<const Vector>& y) const {
    double acc = 0;
    for (Eigen::Index s = 0; s < draws.rows(); ++s) {
      const double q =
          ((y - draws.row(s).transpose()).array() / bandwidth.array()).square().sum();
      acc += std::exp(-0.5 * q);
    }
    return acc / static_cast<double>(draws.rows());
  }

  bool contains(const Eigen::Ref<const Vector>& phi_tilde) const {
    if (whole_simplex) return true;
    return kde(phi_tilde.head(phi_tilde.size() - 1)) >= threshold;
  }
};

struct HpdSet {
  double level = 0.95;
  int G = 1, T = 1, K = 1;
  std::vector<HpdRegion> regions;  // index g*T + t

  const HpdRegion& region(int g0, int t0) const { return regions[g0 * T + t0]; }

  static HpdSet entire(int G, int T, int K) {
    HpdSet s;
    s.level = 1.0;
    s.G = G;
    s.T = T;
    s.K = K;
    s.regions.resize(static_cast<size_t>(G) * T);
    for (auto& r : s.regions) r.whole_simplex = true;
    return s;
  }
};

namespace detail {

inline HpdRegion build_region(const Matrix& draws_full /*S x K*/, double level) {
  HpdRegion r;
  const Eigen::Index S = draws_full.rows();
  const Eigen::Index K = draws_full.cols();
  for (Eigen::Index k = 0; k < K; ++k) {
    std::vector<double> col(draws_full.col(k).data(), draws_full.col(k).data() + S);
    r.coord.push_back(hpd_interval(std::move(col), level));
  }
  r.draws = draws_full.leftCols(K - 1);
  r.bandwidth.resize(K - 1);
  const double scott = std::pow(static_cast<double>(S), -1.0 / (static_cast<double>(K - 1) + 4.0));
  for (Eigen::Index j = 0; j < K - 1; ++j) {
    const double sd = std::sqrt((r.draws.col(j).array() - r.draws.col(j).mean()).square().sum() /
                                std::max<double>(1.0, static_cast<double>(S - 1)));
    r.bandwidth[j] = std::max(sd * scott, 1e-8);
  }
  std::vector<double> dens(S);
  for (Eigen::Index s = 0; s < S; ++s) dens[s] = r.kde(r.draws.row(s).transpose());
  std::sort(dens.begin(), dens.end());
  const size_t drop = static_cast<size_t>(std::floor((1.0 - level) * static_cast<double>(S)));
  r.threshold = dens[std::min<size_t>(drop, dens.size() - 1)];
  return r;
}

}  // namespace detail

// Per-(g,t) HPD summaries for phi~ from a chain (typically the labelled fit).
inline HpdSet hpd(const Chain& chain, double level = 0.95) {
  if (chain.n_draws() < 100) throw ModelError("hpd: need at least 100 draws");
  HpdSet set;
  set.level = level;
  set.G = chain.G;
  set.T = chain.T;
  set.K = chain.K;
  const long S = chain.n_draws();
  Matrix block(S, chain.K);
  for (int g = 0; g < chain.G; ++g)
    for (int t = 0; t < chain.T; ++t) {
      for (long s = 0; s < S; ++s) block.row(s) = chain.phi_draws[s].row(g * chain.T + t);
      set.regions.push_back(detail::build_region(block, level));
    }
  return set;
}

struct BayesFactorResult {
  Matrix log10_bf;    // G x T
  Matrix numerator;   // posterior probability of the region
  Matrix denominator; // prior probability of the region
};

// Savage-Dickey ratio per (g,t): posterior fraction of draws inside the region
// over the prior probability, estimated by softmax-transformed simulations from
// the stationary phi prior (shared across model comparisons; seeded).
inline BayesFactorResult bayes_factor(const Chain& unlabelled, const HpdSet& region,
                                      const Hyperparams& hp, long n_prior_sims = 1000000,
                                      std::uint64_t seed = 7) {
  if (unlabelled.G != region.G || unlabelled.T != region.T || unlabelled.K != region.K)
    throw ModelError("bayes_factor: chain/region dimensions differ");
  if (unlabelled.n_draws() == 0) throw ModelError("bayes_factor: empty chain");
  const int G = region.G, T = region.T, K = region.K;
  BayesFactorResult out;
  out.log10_bf.resize(G, T);
  out.numerator.resize(G, T);
  out.denominator.resize(G, T);

  // one shared set of prior simulations: the AR(1) marginal at every t is the
  // stationary distribution
  Rng rng = make_rng(seed);
  const double stat_sd = std::sqrt(hp.kappa_phi / (1.0 - hp.alpha_phi * hp.alpha_phi));
  Matrix prior_sims(n_prior_sims, K);
  for (long i = 0; i < n_prior_sims; ++i)
    prior_sims.row(i) = softmax(stat_sd * standard_normal_vector(K, rng)).transpose();

  for (int g = 0; g < G; ++g)
    for (int t = 0; t < T; ++t) {
      const HpdRegion& reg = region.region(g, t);
      long in_post = 0;
      for (long s = 0; s < unlabelled.n_draws(); ++s) {
        const Vector phi = unlabelled.phi_draws[s].row(g * T + t).transpose();
        if (reg.contains(phi)) ++in_post;
      }
      long in_prior = 0;
      for (long i = 0; i < n_prior_sims; ++i)
        if (reg.contains(prior_sims.row(i).transpose())) ++in_prior;
      const double num = static_cast<double>(in_post) / unlabelled.n_draws();
      const double den = static_cast<double>(in_prior) / static_cast<double>(n_prior_sims);
      if (den == 0)
        throw ModelError("bayes_factor: prior probability of region is 0; raise n_prior_sims");
      out.numerator(g, t) = num;
      out.denominator(g, t) = den;
      out.log10_bf(g, t) =
          num == 0 ? -std::numeric_limits<double>::infinity() : std::log10(num / den);
    }
  return out;
}

struct EssEstimate {
  double ess = 0;
  bool degenerate = false;
};

// Effective sample size via Geyer's initial monotone positive sequence on the
// autocovariances.
inline EssEstimate ess_1d(const Eigen::Ref<const Vector>& series) {
  const Eigen::Index n = series.size();
  if (n < 200) throw ModelError("ess: need at least 200 draws");
  const double mean = series.mean();
  Vector x = series.array() - mean;
  const double g0 = x.squaredNorm() / static_cast<double>(n);
  if (g0 <= 0 || !std::isfinite(g0)) return {1.0, true};

  auto gamma = [&](Eigen::Index lag) {
    if (lag >= n) return 0.0;
    return x.head(n - lag).dot(x.tail(n - lag)) / static_cast<double>(n);
  };

  double sum = 0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; 2 * m < n; ++m) {
    double pair = gamma(2 * m) + gamma(2 * m + 1);
    if (pair <= 0) break;
    pair = std::min(pair, prev_pair);  // enforce monotone nonincreasing
    prev_pair = pair;
    sum += pair;
  }
  const double tau = -1.0 + 2.0 * sum / g0;
  if (tau <= 0) return {static_cast<double>(n), false};
  return {static_cast<double>(n) / tau, false};
}

struct EssSummary {
  std::vector<double> values;
  double median = 0, q25 = 0, q75 = 0;
  int n_degenerate = 0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  const double pos = q * (static_cast<double>(sorted.size()) - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(sorted.size() - 1, lo + 1);
  const double w = pos - static_cast<double>(lo);
  return (1 - w) * sorted[lo] + w * sorted[hi];
}

inline EssSummary summarise_ess(std::vector<double> values, int degenerate) {
  EssSummary s;
  s.values = values;
  s.n_degenerate = degenerate;
  std::sort(values.begin(), values.end());
  s.median = quantile_sorted(values, 0.5);
  s.q25 = quantile_sorted(values, 0.25);
  s.q75 = quantile_sorted(values, 0.75);
  return s;
}

}  // namespace detail

// ESS over all K*G*T sense-prevalence parameters.
inline EssSummary ess_phi(const Chain& chain) {
  const long S = chain.n_draws();
  std::vector<double> values;
  int degenerate = 0;
  Vector series(S);
  for (int gt = 0; gt < chain.G * chain.T; ++gt)
    for (int k = 0; k < chain.K; ++k) {
      for (long s = 0; s < S; ++s) series[s] = chain.phi_draws[s](gt, k);
      const auto e = ess_1d(series);
      values.push_back(e.ess);
      degenerate += e.degenerate;
    }
  return detail::summarise_ess(std::move(values), degenerate);
}

// Ranked context words for one sense by posterior-mean probability marginally
// over time; ties break toward the lower word id.
inline std::vector<std::pair<int, double>> top_words(const Chain& chain, int k0, int n) {
  if (k0 < 0 || k0 >= chain.K) throw ModelError("top_words: sense index out of range");
  if (chain.psi_draws.empty()) throw ModelError("top_words: chain has no psi draws");
  const long S = chain.n_draws();
  Vector score = Vector::Zero(chain.V);
  for (long s = 0; s < S; ++s)
    for (int t = 0; t < chain.T; ++t)
      score += chain.psi_draws[s].row(k0 * chain.T + t).transpose();
  score /= static_cast<double>(S) * chain.T;
  std::vector<int> idx(chain.V);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  std::vector<std::pair<int, double>> out;
  for (int i = 0; i < n && i < chain.V; ++i) out.emplace_back(idx[i], score[idx[i]]);
  return out;
}

// ESS over the top-20-words psi~ parameters per sense (20*K*T series), as the
// ESS-per-hour tables report.
inline EssSummary ess_psi_top_words(const Chain& chain, int n_words = 20) {
  const long S = chain.n_draws();
  std::vector<double> values;
  int degenerate = 0;
  Vector series(S);
  for (int k = 0; k < chain.K; ++k) {
    const auto top = top_words(chain, k, n_words);
    for (const auto& [v, score] : top)
      for (int t = 0; t < chain.T; ++t) {
        for (long s = 0; s < S; ++s) series[s] = chain.psi_draws[s](k * chain.T + t, v);
        const auto e = ess_1d(series);
        values.push_back(e.ess);
        degenerate += e.degenerate;
      }
  }
  return detail::summarise_ess(std::move(values), degenerate);
}

// R^ = sqrt((W + B/n) / W) over the given sequences; exactly 1 when the
// sequences are identical.
inline double rhat(const std::vector<Vector>& sequences) {
  const size_t m = sequences.size();
  if (m < 2) throw ModelError("rhat: need at least 2 sequences");
  const Eigen::Index n = sequences[0].size();
  for (const auto& s : sequences)
    if (s.size() != n) throw ModelError("rhat: sequences must have equal length");
  if (n < 2) throw ModelError("rhat: sequences too short");
  double W = 0, mean_all = 0;
  std::vector<double> means(m);
  for (size_t j = 0; j < m; ++j) {
    means[j] = sequences[j].mean();
    mean_all += means[j];
    W += (sequences[j].array() - means[j]).square().sum() / static_cast<double>(n - 1);
  }
  W /= static_cast<double>(m);
  mean_all /= static_cast<double>(m);
  double var_means = 0;
  for (size_t j = 0; j < m; ++j) var_means += (means[j] - mean_all) * (means[j] - mean_all);
  var_means /= static_cast<double>(m - 1);
  if (W == 0) return var_means == 0 ? 1.0 : std::numeric_limits<double>::infinity();
  return std::sqrt((W + var_means) / W);
}

struct ConvergenceReport {
  std::vector<double> rhat_phi;  // per phi~ parameter, order (g*T+t)*K + k
  double max_rhat = 0;
  std::vector<int> flagged;      // parameters with split-R^ > 1.05
  // per chain, per 100-draw window: mean total log-likelihood and (when labels
  // are available) the windowed Brier score
  std::vector<std::vector<double>> window_loglik;
  std::vector<std::vector<double>> window_brier;
};

inline ConvergenceReport convergence_report(const std::vector<Chain>& chains,
                                            const SnippetDataset* data = nullptr,
                                            int window = 100) {
  if (chains.size() < 2) throw ModelError("convergence_report: need at least 2 chains");
  const long S = chains[0].n_draws();
  for (const auto& c : chains) {
    if (c.n_draws() != S) throw ModelError("convergence_report: chains have different lengths");
    if (c.G != chains[0].G || c.T != chains[0].T || c.K != chains[0].K || c.V != chains[0].V)
      throw ModelError("convergence_report: chain configurations differ");
  }
  ConvergenceReport rep;
  const long half = S / 2;
  if (half < 2) throw ModelError("convergence_report: chains too short to split");
  const int GT = chains[0].G * chains[0].T, K = chains[0].K;
  std::vector<Vector> seqs;
  for (int gt = 0; gt < GT; ++gt)
    for (int k = 0; k < K; ++k) {
      seqs.clear();
      for (const auto& c : chains) {
        Vector a(half), b(half);
        for (long s = 0; s < half; ++s) {
          a[s] = c.phi_draws[s](gt, k);
          b[s] = c.phi_draws[S - half + s](gt, k);
        }
        seqs.push_back(std::move(a));
        seqs.push_back(std::move(b));
      }
      const double r = rhat(seqs);
      rep.rhat_phi.push_back(r);
      rep.max_rhat = std::max(rep.max_rhat, r);
    }
  for (size_t i = 0; i < rep.rhat_phi.size(); ++i)
    if (rep.rhat_phi[i] > 1.05) rep.flagged.push_back(static_cast<int>(i));

  for (const auto& c : chains) {
    std::vector<double> wl;
    for (long start = 0; start + window <= S; start += window) {
      double acc = 0;
      for (long s = start; s < start + window; ++s) acc += c.loglik.row(s).sum();
      wl.push_back(acc / window);
    }
    rep.window_loglik.push_back(std::move(wl));
  }
  if (data && data->Kprime > 0) {
    for (const auto& c : chains) {
      std::vector<double> wb;
      for (long start = 0; start + window <= S; start += window) {
        Chain sub;
        sub.kind = c.kind;
        sub.G = c.G;
        sub.T = c.T;
        sub.K = c.K;
        sub.V = c.V;
        for (long s = start; s < start + window; ++s) {
          sub.phi_draws.push_back(c.phi_draws[s]);
          if (!c.psi_draws.empty()) sub.psi_draws.push_back(c.psi_draws[s]);
        }
        const auto sp = sense_probabilities(sub, *data);
        wb.push_back(brier_score(sp.p_hat, *data).bs);
      }
      rep.window_brier.push_back(std::move(wb));
    }
  }
  return rep;
}

}  // namespace edisc
