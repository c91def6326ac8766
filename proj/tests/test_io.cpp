#include <catch2/catch_amalgamated.hpp>

#include "edisc/chain_io.hpp"
#include "edisc/sampler.hpp"
#include "test_util.hpp"

#include <sstream>

using namespace edisc;
using Catch::Approx;

TEST_CASE("hyperparams and state JSON round-trip", "[io]") {
  const auto hp = default_hyperparams(ModelKind::EDiSC, 3, 16, 12.5);
  const auto back = hyperparams_from_json(hyperparams_to_json(hp));
  REQUIRE(back.kind == hp.kind);
  REQUIRE(back.K == hp.K);
  REQUIRE(back.M == hp.M);
  REQUIRE(back.kappa_chi == hp.kappa_chi);
  REQUIRE(back.kappa_theta == hp.kappa_theta);

  Rng rng = make_rng(1);
  const ModelState st = sample_prior_state(hp, 2, 3, 9, rng);
  const ModelState st2 = state_from_json(state_to_json(st, hp.kind));
  REQUIRE((st.phi - st2.phi).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((st.theta - st2.theta).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((st.chi - st2.chi).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE((st.sigma_corr - st2.sigma_corr).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("chain container round-trips bit-exactly", "[io]") {
  Rng rng = make_rng(2);
  const Matrix rho = standard_normal_matrix(8, 3, rng);
  const auto hp = default_hyperparams(ModelKind::EDiSC, 2, 3, median_sq_distance(rho));
  const auto sim = simulate(hp, &rho, 1, 2, 8, 5, {20, 20}, 3);
  SamplerConfig cfg;
  cfg.N = 200;
  cfg.thin = 4;
  cfg.seed = 17;
  cfg.store_raw = true;
  const Chain chain = run_hmc(sim.data, &rho, hp, cfg);

  std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
  save_chain(buf, chain, fnv1a("config"));
  const Chain back = load_chain(buf);

  REQUIRE(back.kind == chain.kind);
  REQUIRE(back.algorithm == chain.algorithm);
  REQUIRE(back.n_draws() == chain.n_draws());
  REQUIRE(back.cfg.seed == chain.cfg.seed);
  REQUIRE(back.cfg.thin == chain.cfg.thin);
  for (long s = 0; s < chain.n_draws(); ++s) {
    REQUIRE((back.phi_draws[s] - chain.phi_draws[s]).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE((back.psi_draws[s] - chain.psi_draws[s]).lpNorm<Eigen::Infinity>() == 0.0);
    REQUIRE((back.raw_draws[s].chi - chain.raw_draws[s].chi).lpNorm<Eigen::Infinity>() == 0.0);
  }
  REQUIRE((back.loglik - chain.loglik).lpNorm<Eigen::Infinity>() == 0.0);
  REQUIRE(back.blocks.size() == chain.blocks.size());
  for (size_t i = 0; i < chain.blocks.size(); ++i) {
    REQUIRE(back.blocks[i].name == chain.blocks[i].name);
    REQUIRE(back.blocks[i].sigma2 == chain.blocks[i].sigma2);
    REQUIRE(back.blocks[i].accepts == chain.blocks[i].accepts);
  }

  std::stringstream bad("not a chain file");
  REQUIRE_THROWS_AS(load_chain(bad), DataError);
}
