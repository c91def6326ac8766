#include <catch2/catch_amalgamated.hpp>

#include "edisc/gradients.hpp"
#include "edisc/model.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace edisc;
using Catch::Approx;

namespace {

// naive unshifted softmax, the oracle for the stable version
Vector naive_softmax(const Vector& x) {
  Vector e = x.array().exp();
  return e / e.sum();
}

// linear-space likelihood enumeration for tiny instances
double linear_space_loglik(const SnippetDataset& W, const ProbabilityTables& tab) {
  double total = 0;
  for (const auto& s : W.snippets) {
    const int gt = tab.gt_row(s.genre - 1, s.time - 1);
    double p = 0;
    for (int k = 0; k < tab.K; ++k) {
      double term = tab.phi_tilde(gt, k);
      for (int w : s.words) term *= tab.psi_tilde(k * tab.T + (s.time - 1), w);
      p += term;
    }
    total += std::log(p);
  }
  return total;
}

// direct Gaussian log-density, loop form
double normal_logpdf_oracle(const Vector& x, const Vector& mean, double var) {
  double acc = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = x[i] - mean[i];
    acc += -0.5 * std::log(2.0 * M_PI * var) - 0.5 * z * z / var;
  }
  return acc;
}

}  // namespace

TEST_CASE("softmax basics", "[model]") {
  Vector x(3);
  x << 0, 0, 0;
  const Vector s = softmax(x);
  for (int i = 0; i < 3; ++i) REQUIRE(s[i] == Approx(1.0 / 3).epsilon(1e-14));

  Vector y(3);
  y << std::log(1.0), std::log(2.0), std::log(3.0);
  const Vector sy = softmax(y);
  REQUIRE(sy[0] == Approx(1.0 / 6).epsilon(1e-13));
  REQUIRE(sy[1] == Approx(2.0 / 6).epsilon(1e-13));
  REQUIRE(sy[2] == Approx(3.0 / 6).epsilon(1e-13));

  Rng rng = make_rng(11);
  const Vector z = standard_normal_vector(5, rng);
  const Vector shifted = softmax((z.array() + 100.0).matrix());
  REQUIRE((softmax(z) - shifted).lpNorm<Eigen::Infinity>() < 1e-12);

  Vector bad(2);
  bad << 1.0, std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(softmax(bad), ModelError);
}

TEST_CASE("compute_tables uniform and rho=I bridge", "[model]") {
  const int G = 1, T = 2, K = 3, V = 4;
  Hyperparams hp = default_hyperparams(ModelKind::EDiSC, K, V, 1.0);
  ModelState st = ModelState::zeros(ModelKind::EDiSC, G, T, K, V, V);
  const Matrix rho = Matrix::Identity(V, V);
  const auto tab = compute_tables(st, &rho, hp);
  for (int r = 0; r < K * T; ++r)
    for (int v = 0; v < V; ++v) REQUIRE(tab.psi_tilde(r, v) == Approx(1.0 / V).epsilon(1e-13));

  // identity embeddings reproduce DiSC tables for the same chi, theta
  Rng rng = make_rng(5);
  Hyperparams hpd = default_hyperparams(ModelKind::DiSC, K, 0);
  ModelState std_ = sample_prior_state(hpd, G, T, V, rng);
  ModelState ste = std_;
  const auto te = compute_tables(ste, &rho, hp);
  const auto td = compute_tables(std_, nullptr, hpd);
  REQUIRE((te.psi_tilde - td.psi_tilde).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("tables rows are simplexes and match naive softmax", "[model]") {
  Rng rng = make_rng(42);
  auto inst = testutil::random_instance(rng, ModelKind::EDiSC, 2, 3, 3, 8, 4, 6, 10);
  const auto tab = compute_tables(inst.state, &inst.rho, inst.hp);
  for (int r = 0; r < tab.psi_tilde.rows(); ++r) {
    REQUIRE(tab.psi_tilde.row(r).sum() == Approx(1.0).margin(1e-12));
    REQUIRE(tab.psi_tilde.row(r).minCoeff() > 0.0);
  }
  for (int r = 0; r < tab.phi_tilde.rows(); ++r)
    REQUIRE(tab.phi_tilde.row(r).sum() == Approx(1.0).margin(1e-12));

  // against the naive softmax oracle on the raw logits
  Matrix xi(inst.hp.K * inst.state.T, inst.state.E());
  for (int k = 0; k < inst.hp.K; ++k)
    for (int t = 0; t < inst.state.T; ++t)
      xi.row(k * inst.state.T + t) = inst.state.chi.row(k) + inst.state.theta.row(t);
  Matrix psi = xi * inst.rho.transpose();
  psi.rowwise() += inst.state.sigma_corr.transpose();
  for (int r = 0; r < psi.rows(); ++r) {
    const Vector naive = naive_softmax(psi.row(r).transpose());
    REQUIRE((tab.psi_tilde.row(r).transpose() - naive).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("log likelihood collapses for K=1 and empty bags", "[model]") {
  Rng rng = make_rng(7);
  auto inst = testutil::random_instance(rng, ModelKind::EDiSC, 1, 2, 1, 6, 3, 6, 8);
  const auto tab = compute_tables(inst.state, &inst.rho, inst.hp);
  double direct = 0;
  for (const auto& s : inst.data.snippets)
    for (int w : s.words) direct += tab.log_psi_tilde(0 * inst.data.T + (s.time - 1), w);
  REQUIRE(log_likelihood(inst.data, tab) == Approx(direct).epsilon(1e-12));

  SnippetDataset empty_bag = inst.data;
  for (auto& s : empty_bag.snippets) s.words.clear();
  Vector per;
  REQUIRE(log_likelihood(empty_bag, tab, &per) == Approx(0.0).margin(1e-12));
  for (int d = 0; d < per.size(); ++d) REQUIRE(per[d] == Approx(0.0).margin(1e-13));
}

TEST_CASE("log likelihood matches linear-space enumeration", "[model]") {
  Rng rng = make_rng(99);
  auto inst = testutil::random_instance(rng, ModelKind::EDiSC, 1, 2, 2, 6, 3, 5, 5);
  const auto tab = compute_tables(inst.state, &inst.rho, inst.hp);
  const double expect = linear_space_loglik(inst.data, tab);
  REQUIRE(log_likelihood(inst.data, tab) == Approx(expect).epsilon(1e-8));
}

TEST_CASE("log likelihood label-switching and snippet-order symmetry", "[model]") {
  Rng rng = make_rng(17);
  auto inst = testutil::random_instance(rng, ModelKind::EDiSC, 2, 2, 3, 10, 4, 6, 12);
  const auto tab = compute_tables(inst.state, &inst.rho, inst.hp);
  const double base = log_likelihood(inst.data, tab);

  SnippetDataset shuffled = inst.data;
  std::reverse(shuffled.snippets.begin(), shuffled.snippets.end());
  REQUIRE(log_likelihood(shuffled, tab) == Approx(base).epsilon(1e-12));

  // permute senses jointly in phi~ and psi~
  ModelState perm = inst.state;
  std::vector<int> p{2, 0, 1};
  for (int k = 0; k < 3; ++k) perm.chi.row(k) = inst.state.chi.row(p[k]);
  for (int gt = 0; gt < perm.phi.rows(); ++gt)
    for (int k = 0; k < 3; ++k) perm.phi(gt, k) = inst.state.phi(gt, p[k]);
  const auto tab2 = compute_tables(perm, &inst.rho, inst.hp);
  REQUIRE(log_likelihood(inst.data, tab2) == Approx(base).epsilon(1e-10));
}

TEST_CASE("log prior scalar blocks at zero", "[model]") {
  // G=K=T=M=V=1, all kappa=1, alpha=0: each scalar block contributes -log(2pi)/2
  Hyperparams hp;
  hp.kind = ModelKind::EDiSC;
  hp.K = 1;
  hp.M = 1;
  hp.alpha_phi = 0.0;
  hp.alpha_theta = 0.0;
  hp.kappa_phi = hp.kappa_theta = hp.kappa_chi = hp.kappa_sigma = 1.0;
  ModelState st = ModelState::zeros(ModelKind::EDiSC, 1, 1, 1, 1, 1);
  const auto parts = log_prior_blocks(st, hp);
  const double expect = -0.5 * std::log(2.0 * M_PI);
  REQUIRE(parts.phi == Approx(expect).epsilon(1e-14));
  REQUIRE(parts.theta == Approx(expect).epsilon(1e-14));
  REQUIRE(parts.chi == Approx(expect).epsilon(1e-14));
  REQUIRE(parts.sigma == Approx(expect).epsilon(1e-14));
}

TEST_CASE("log prior matches direct density oracle", "[model]") {
  Rng rng = make_rng(3);
  auto inst = testutil::random_instance(rng, ModelKind::EDiSC, 2, 3, 2, 5, 3, 6, 4);
  const auto& hp = inst.hp;
  const auto& st = inst.state;

  double expect = 0;
  const double stat_phi = hp.kappa_phi / (1 - hp.alpha_phi * hp.alpha_phi);
  for (int g = 0; g < st.G; ++g) {
    expect += normal_logpdf_oracle(st.phi.row(g * st.T).transpose(),
                                   Vector::Zero(st.K), stat_phi);
    for (int t = 1; t < st.T; ++t)
      expect += normal_logpdf_oracle(st.phi.row(g * st.T + t).transpose(),
                                     hp.alpha_phi * st.phi.row(g * st.T + t - 1).transpose(),
                                     hp.kappa_phi);
  }
  const double stat_theta = hp.kappa_theta / (1 - hp.alpha_theta * hp.alpha_theta);
  expect += normal_logpdf_oracle(st.theta.row(0).transpose(), Vector::Zero(st.E()), stat_theta);
  for (int t = 1; t < st.T; ++t)
    expect += normal_logpdf_oracle(st.theta.row(t).transpose(),
                                   hp.alpha_theta * st.theta.row(t - 1).transpose(),
                                   hp.kappa_theta);
  for (int k = 0; k < st.K; ++k)
    expect +=
        normal_logpdf_oracle(st.chi.row(k).transpose(), Vector::Zero(st.E()), hp.kappa_chi);
  expect += normal_logpdf_oracle(st.sigma_corr, Vector::Zero(st.sigma_corr.size()),
                                 hp.kappa_sigma);

  REQUIRE(log_prior(st, hp) == Approx(expect).epsilon(1e-12));

  // doubling all kappas changes the density in the direction the oracle says
  Hyperparams hp2 = hp;
  hp2.kappa_phi *= 2;
  hp2.kappa_theta *= 2;
  hp2.kappa_chi *= 2;
  hp2.kappa_sigma *= 2;
  double expect2 = 0;
  {
    const double sp = hp2.kappa_phi / (1 - hp2.alpha_phi * hp2.alpha_phi);
    for (int g = 0; g < st.G; ++g) {
      expect2 += normal_logpdf_oracle(st.phi.row(g * st.T).transpose(), Vector::Zero(st.K), sp);
      for (int t = 1; t < st.T; ++t)
        expect2 += normal_logpdf_oracle(st.phi.row(g * st.T + t).transpose(),
                                        hp2.alpha_phi * st.phi.row(g * st.T + t - 1).transpose(),
                                        hp2.kappa_phi);
    }
    const double stt = hp2.kappa_theta / (1 - hp2.alpha_theta * hp2.alpha_theta);
    expect2 += normal_logpdf_oracle(st.theta.row(0).transpose(), Vector::Zero(st.E()), stt);
    for (int t = 1; t < st.T; ++t)
      expect2 += normal_logpdf_oracle(st.theta.row(t).transpose(),
                                      hp2.alpha_theta * st.theta.row(t - 1).transpose(),
                                      hp2.kappa_theta);
    for (int k = 0; k < st.K; ++k)
      expect2 += normal_logpdf_oracle(st.chi.row(k).transpose(), Vector::Zero(st.E()),
                                      hp2.kappa_chi);
    expect2 += normal_logpdf_oracle(st.sigma_corr, Vector::Zero(st.sigma_corr.size()),
                                    hp2.kappa_sigma);
  }
  REQUIRE(log_prior(st, hp2) == Approx(expect2).epsilon(1e-12));
}

TEST_CASE("theta prior two-term hand formula at T=2", "[model]") {
  Hyperparams hp = default_hyperparams(ModelKind::DiSC, 2, 0);
  hp.alpha_theta = 0.9;
  ModelState st = ModelState::zeros(ModelKind::DiSC, 1, 2, 2, 3, 0);
  Rng rng = make_rng(31);
  st.theta = standard_normal_matrix(2, 3, rng);
  const double stat_var = hp.kappa_theta / (1.0 - 0.81);
  const double expect =
      normal_logpdf_oracle(st.theta.row(0).transpose(), Vector::Zero(3), stat_var) +
      normal_logpdf_oracle(st.theta.row(1).transpose(), 0.9 * st.theta.row(0).transpose(),
                           hp.kappa_theta);
  REQUIRE(log_prior_blocks(st, hp).theta == Approx(expect).epsilon(1e-13));
}

TEST_CASE("log posterior tempering identities", "[model]") {
  Rng rng = make_rng(23);
  auto inst = testutil::random_instance(rng, ModelKind::EDiSC, 1, 2, 2, 6, 3, 6, 6);
  const double lp = log_prior(inst.state, inst.hp);
  const auto tab = compute_tables(inst.state, &inst.rho, inst.hp);
  const double ll = log_likelihood(inst.data, tab);

  REQUIRE(log_posterior(inst.state, inst.data, &inst.rho, inst.hp, 1.0) ==
          Approx(lp + ll).epsilon(1e-12));
  REQUIRE(log_posterior(inst.state, inst.data, &inst.rho, inst.hp, 0.0) ==
          Approx(lp).epsilon(1e-12));
  // affine in lambda: value at 0.5 is the average of the endpoints' likelihood
  // terms plus the prior
  const double at_half = log_posterior(inst.state, inst.data, &inst.rho, inst.hp, 0.5);
  REQUIRE(at_half == Approx(lp + 0.5 * ll).epsilon(1e-12));
  REQUIRE_THROWS_AS(log_posterior(inst.state, inst.data, &inst.rho, inst.hp, 1.5), ModelError);
}

TEST_CASE("default hyperparams follow the elicitation", "[model]") {
  const auto e = default_hyperparams(ModelKind::EDiSC, 3, 25, 10.0);
  REQUIRE(e.kappa_chi == Approx(0.25).epsilon(1e-15));
  REQUIRE(e.kappa_theta == Approx(0.05).epsilon(1e-15));
  REQUIRE(e.kappa_phi == 0.25);
  REQUIRE(e.kappa_sigma == 0.25);
  REQUIRE(e.alpha_phi == 0.9);
  REQUIRE(e.alpha_theta == 0.9);

  const auto d = default_hyperparams(ModelKind::DiSC, 3, 0);
  REQUIRE(d.alpha_phi == 0.9);
  REQUIRE(d.alpha_theta == 0.9);
  REQUIRE(d.kappa_phi == 0.25);
  REQUIRE(d.kappa_theta == 0.25);
  REQUIRE(d.kappa_chi == 1.25);

  // general split reproduces the un-rounded expressions
  const double c = 7.0, a_chi = 0.75, a_theta = 0.25;
  const auto g = default_hyperparams(ModelKind::EDiSC, 2, 16, c, a_chi, a_theta);
  const double base = std::pow(std::log(1000.0) / 3.0, 2) - 2 * 0.25;
  REQUIRE(g.kappa_chi == Approx(a_chi * base / c).epsilon(1e-14));
  REQUIRE(g.kappa_theta == Approx(a_theta * (1 - 0.81) * base / c).epsilon(1e-14));

  REQUIRE_THROWS_AS(default_hyperparams(ModelKind::EDiSC, 2, 16, -1.0), ModelError);
  REQUIRE_THROWS_AS(default_hyperparams(ModelKind::EDiSC, 2, 16), ModelError);
}

TEST_CASE("simulate: K=1, determinism, sense frequencies", "[model]") {
  Rng rng = make_rng(1);
  const Matrix rho = standard_normal_matrix(20, 4, rng);
  const auto hp1 = default_hyperparams(ModelKind::EDiSC, 1, 4, median_sq_distance(rho));
  const auto one = simulate(hp1, &rho, 1, 2, 20, 6, {5, 5}, 77);
  for (const auto& s : one.data.snippets) REQUIRE(s.true_sense == 1);

  const auto hp2 = default_hyperparams(ModelKind::EDiSC, 2, 4, median_sq_distance(rho));
  const auto a = simulate(hp2, &rho, 1, 1, 20, 6, {2000}, 123);
  const auto b = simulate(hp2, &rho, 1, 1, 20, 6, {2000}, 123);
  REQUIRE(a.data.D() == b.data.D());
  for (int d = 0; d < a.data.D(); ++d) {
    REQUIRE(a.data.snippets[d].true_sense == b.data.snippets[d].true_sense);
    REQUIRE(a.data.snippets[d].words == b.data.snippets[d].words);
  }

  // law of large numbers on sense frequencies at a single (g,t)
  const long n = 100000;
  const auto big = simulate(hp2, &rho, 1, 1, 20, 6, {n}, 2024);
  Vector freq = Vector::Zero(2);
  for (const auto& s : big.data.snippets) freq[s.true_sense - 1] += 1.0;
  freq /= static_cast<double>(n);
  for (int k = 0; k < 2; ++k) {
    const double p = big.tables.phi_tilde(0, k);
    const double se = std::sqrt(p * (1 - p) / n);
    REQUIRE(std::abs(freq[k] - p) < 3 * se + 1e-12);
  }
}

TEST_CASE("simulate: generative consistency sanity", "[model]") {
  // average log-likelihood at the truth beats a prior-resampled state
  Rng rng = make_rng(55);
  const Matrix rho = standard_normal_matrix(30, 4, rng);
  const auto hp = default_hyperparams(ModelKind::EDiSC, 2, 4, median_sq_distance(rho));
  double truth_sum = 0, resample_sum = 0;
  for (int rep = 0; rep < 10; ++rep) {
    const auto sim = simulate(hp, &rho, 1, 2, 30, 8, {40, 40}, 900 + rep);
    truth_sum += log_likelihood(sim.data, sim.tables);
    Rng rr = make_rng(5000 + rep);
    const ModelState other = sample_prior_state(hp, 1, 2, 30, rr);
    resample_sum += log_likelihood(sim.data, compute_tables(other, &rho, hp));
  }
  REQUIRE(truth_sum / 10 > resample_sum / 10);
}

TEST_CASE("EDiSC equivalence bridge to DiSC", "[model]") {
  // rho = I, M = V, sigma = 0 reproduces the DiSC likelihood exactly
  Rng rng = make_rng(66);
  const int V = 7, K = 2, G = 1, T = 3;
  Hyperparams hpd = default_hyperparams(ModelKind::DiSC, K, 0);
  ModelState st = sample_prior_state(hpd, G, T, V, rng);
  auto data = testutil::random_dataset(rng, G, T, V, 5, 12);

  Hyperparams hpe = hpd;
  hpe.kind = ModelKind::EDiSC;
  hpe.M = V;
  const Matrix eye = Matrix::Identity(V, V);
  const double ll_e = log_likelihood(data, compute_tables(st, &eye, hpe));
  const double ll_d = log_likelihood(data, compute_tables(st, nullptr, hpd));
  REQUIRE(ll_e == Approx(ll_d).margin(1e-10));
}
