#pragma once

#include "edisc/embeddings.hpp"
#include "edisc/gradients.hpp"
#include "edisc/model.hpp"

#include <string>
#include <utility>
#include <vector>

namespace edisc {

namespace detail {

inline SnippetDataset random_check_dataset(Rng& rng, int G, int T, int V, int L, int D) {
  SnippetDataset ds;
  ds.G = G;
  ds.T = T;
  ds.L = L;
  ds.vocab.lemmas.resize(V);
  ds.vocab.counts.assign(V, 1);
  for (int v = 0; v < V; ++v) ds.vocab.lemmas[v] = "w" + std::to_string(v);
  std::uniform_int_distribution<int> glen(0, L), word(0, V - 1), genre(1, G), time(1, T);
  for (int d = 0; d < D; ++d) {
    Snippet s;
    s.genre = genre(rng);
    s.time = time(rng);
    const int ld = glen(rng);
    for (int i = 0; i < ld; ++i) s.words.push_back(word(rng));
    ds.snippets.push_back(std::move(s));
  }
  return ds;
}

}  // namespace detail

// One random instance per call: every block's analytic gradient of the
// tempered log posterior checked against central finite differences. Instance
// sizes stay within V<=50, M<=8, K<=4, T<=5, G<=2, D<=40.
inline std::vector<std::pair<std::string, double>> gradient_block_errors(Rng& rng, ModelKind kind,
                                                                         double lambda) {
  std::uniform_int_distribution<int> pick_G(1, 2), pick_T(2, 5), pick_K(2, 4), pick_V(8, 50),
      pick_M(2, 8), pick_D(5, 40);
  const int G = pick_G(rng), T = pick_T(rng), K = pick_K(rng), V = pick_V(rng), M = pick_M(rng),
            D = pick_D(rng);
  const SnippetDataset data = detail::random_check_dataset(rng, G, T, V, 6, D);

  Matrix rho;
  Hyperparams hp;
  if (kind == ModelKind::EDiSC) {
    rho = standard_normal_matrix(V, M, rng);
    hp = default_hyperparams(kind, K, M, median_sq_distance(rho));
  } else {
    hp = default_hyperparams(kind, K, 0);
  }
  const ModelState state = sample_prior_state(hp, G, T, V, rng);
  const Matrix* rho_ptr = kind == ModelKind::EDiSC ? &rho : nullptr;
  const bool ed = kind == ModelKind::EDiSC;

  std::vector<std::pair<std::string, double>> out;
  ModelState work = state;
  auto fd = [&](const std::function<void(ModelState&, const Vector&)>& set,
                const Vector& analytic, const Vector& point) {
    auto f = [&](const Vector& x) {
      set(work, x);
      return log_posterior(work, data, rho_ptr, hp, lambda);
    };
    const double err = finite_diff_check(f, analytic, point);
    set(work, point);  // restore
    return err;
  };

  {
    const Matrix g = ed ? grad_chi(state, data, rho, hp, lambda)
                        : grad_chi_disc(state, data, hp, lambda);
    const Vector gv = Eigen::Map<const Vector>(g.data(), g.size());
    const Vector point = Eigen::Map<const Vector>(state.chi.data(), state.chi.size());
    out.emplace_back("chi", fd(
                                [](ModelState& st, const Vector& x) {
                                  st.chi = Eigen::Map<const Matrix>(x.data(), st.chi.rows(),
                                                                    st.chi.cols());
                                },
                                gv, point));
  }
  {
    double worst = 0;
    for (int t = 0; t < T; ++t) {
      const Vector g = ed ? grad_theta(state, data, rho, hp, lambda, t)
                          : grad_theta_disc(state, data, hp, lambda, t);
      const double err = fd([t](ModelState& st, const Vector& x) { st.theta.row(t) = x.transpose(); },
                            g, state.theta.row(t).transpose());
      worst = std::max(worst, err);
    }
    out.emplace_back("theta", worst);
  }
  {
    double worst = 0;
    for (int g0 = 0; g0 < G; ++g0)
      for (int t = 0; t < T; ++t) {
        const Vector g = grad_phi(state, data, rho_ptr, hp, lambda, g0, t);
        const double err =
            fd([g0, t](ModelState& st, const Vector& x) { st.phi.row(g0 * st.T + t) = x.transpose(); },
               g, state.phi.row(g0 * T + t).transpose());
        worst = std::max(worst, err);
      }
    out.emplace_back("phi", worst);
  }
  if (ed) {
    const Vector g = grad_sigma_corr(state, data, rho, hp, lambda);
    out.emplace_back("sigma", fd([](ModelState& st, const Vector& x) { st.sigma_corr = x; }, g,
                                 state.sigma_corr));
  }
  return out;
}

}  // namespace edisc
