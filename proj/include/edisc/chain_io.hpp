#pragma once

#include "edisc/common.hpp"
#include "edisc/model.hpp"
#include "edisc/sampler.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace edisc {

using Json = nlohmann::json;

inline Json hyperparams_to_json(const Hyperparams& hp) {
  return Json{{"kind", to_string(hp.kind)},
              {"K", hp.K},
              {"M", hp.M},
              {"alpha_phi", hp.alpha_phi},
              {"alpha_theta", hp.alpha_theta},
              {"kappa_phi", hp.kappa_phi},
              {"kappa_theta", hp.kappa_theta},
              {"kappa_chi", hp.kappa_chi},
              {"kappa_sigma", hp.kappa_sigma}};
}

inline Hyperparams hyperparams_from_json(const Json& j) {
  Hyperparams hp;
  hp.kind = model_kind_from_string(j.at("kind").get<std::string>());
  hp.K = j.at("K").get<int>();
  hp.M = j.at("M").get<int>();
  hp.alpha_phi = j.at("alpha_phi").get<double>();
  hp.alpha_theta = j.at("alpha_theta").get<double>();
  hp.kappa_phi = j.at("kappa_phi").get<double>();
  hp.kappa_theta = j.at("kappa_theta").get<double>();
  hp.kappa_chi = j.at("kappa_chi").get<double>();
  hp.kappa_sigma = j.at("kappa_sigma").get<double>();
  hp.validate();
  return hp;
}

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  return m;
}

}  // namespace detail

// Self-describing textual container for a model state (versioned).
inline Json state_to_json(const ModelState& st, ModelKind kind) {
  return Json{{"format", "edisc-state"},
              {"version", 1},
              {"kind", to_string(kind)},
              {"G", st.G},
              {"T", st.T},
              {"K", st.K},
              {"E", st.E()},
              {"V", static_cast<int>(st.sigma_corr.size())},
              {"phi", detail::matrix_to_json(st.phi)},
              {"theta", detail::matrix_to_json(st.theta)},
              {"chi", detail::matrix_to_json(st.chi)},
              {"sigma_corr", std::vector<double>(st.sigma_corr.data(),
                                                 st.sigma_corr.data() + st.sigma_corr.size())}};
}

inline ModelState state_from_json(const Json& j) {
  if (j.value("format", "") != "edisc-state") throw DataError("state_from_json: not a state file");
  ModelState st;
  st.G = j.at("G").get<int>();
  st.T = j.at("T").get<int>();
  st.K = j.at("K").get<int>();
  st.phi = detail::matrix_from_json(j.at("phi"));
  st.theta = detail::matrix_from_json(j.at("theta"));
  st.chi = detail::matrix_from_json(j.at("chi"));
  const auto sv = j.at("sigma_corr").get<std::vector<double>>();
  st.sigma_corr = Eigen::Map<const Vector>(sv.data(), static_cast<Eigen::Index>(sv.size()));
  return st;
}

namespace detail {

inline void write_doubles(std::ostream& out, const double* p, size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::istream& in, double* p, size_t n) {
  in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError("chain file: truncated data section");
}

}  // namespace detail

// Chain container: magic, JSON header (config echo, seed, tuned scales,
// acceptance counts, dims), then raw little-endian doubles for the draw
// tensors and the draws x D log-likelihood matrix. Wall time deliberately
// lives outside this file so reruns are byte-identical.
inline void save_chain(std::ostream& out, const Chain& chain,
                       std::optional<std::uint64_t> config_hash = std::nullopt) {
  Json blocks = Json::array();
  for (const auto& b : chain.blocks)
    blocks.push_back(Json{{"name", b.name},
                          {"sigma2", b.sigma2},
                          {"attempts", b.attempts},
                          {"accepts", b.accepts},
                          {"post_attempts", b.post_attempts},
                          {"post_accepts", b.post_accepts},
                          {"nonfinite", b.nonfinite}});
  Json header{{"format", "edisc-chain"},
              {"version", 1},
              {"kind", to_string(chain.kind)},
              {"algorithm", chain.algorithm},
              {"G", chain.G},
              {"T", chain.T},
              {"K", chain.K},
              {"V", chain.V},
              {"E", chain.E},
              {"n_draws", chain.n_draws()},
              {"D", static_cast<long>(chain.loglik.cols())},
              {"has_psi", !chain.psi_draws.empty()},
              {"has_raw", !chain.raw_draws.empty()},
              {"blocks", std::move(blocks)},
              {"config",
               Json{{"N", chain.cfg.N},
                    {"N_temp", chain.cfg.n_temp()},
                    {"N_stop", chain.cfg.n_stop()},
                    {"N_tune", chain.cfg.N_tune},
                    {"lambda_min", chain.cfg.lambda_min},
                    {"beta", chain.cfg.beta},
                    {"leapfrog_chi", chain.cfg.leapfrog_chi},
                    {"leapfrog_theta", chain.cfg.leapfrog_theta},
                    {"leapfrog_phi", chain.cfg.leapfrog_phi},
                    {"leapfrog_sigma", chain.cfg.leapfrog_sigma},
                    {"alpha_opt", chain.cfg.alpha_opt},
                    {"thin", chain.cfg.thin},
                    {"seed", chain.cfg.seed},
                    {"temper_phi", chain.cfg.temper_phi},
                    {"temper_chi", chain.cfg.temper_chi}}}};
  if (config_hash) header["config_hash"] = *config_hash;
  const std::string hs = header.dump();
  out.write("EDCHN001", 8);
  const std::uint64_t len = hs.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& m : chain.phi_draws) detail::write_doubles(out, m.data(), m.size());
  for (const auto& m : chain.psi_draws) detail::write_doubles(out, m.data(), m.size());
  detail::write_doubles(out, chain.loglik.data(), chain.loglik.size());
  for (const auto& st : chain.raw_draws) {
    detail::write_doubles(out, st.phi.data(), st.phi.size());
    detail::write_doubles(out, st.theta.data(), st.theta.size());
    detail::write_doubles(out, st.chi.data(), st.chi.size());
    detail::write_doubles(out, st.sigma_corr.data(), st.sigma_corr.size());
  }
}

inline Chain load_chain(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "EDCHN001") throw DataError("chain file: bad magic");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string hs(len, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("chain file: truncated header");
  const Json header = Json::parse(hs);
  if (header.value("format", "") != "edisc-chain") throw DataError("chain file: wrong format tag");

  Chain chain;
  chain.kind = model_kind_from_string(header.at("kind").get<std::string>());
  chain.algorithm = header.at("algorithm").get<std::string>();
  chain.G = header.at("G").get<int>();
  chain.T = header.at("T").get<int>();
  chain.K = header.at("K").get<int>();
  chain.V = header.at("V").get<int>();
  chain.E = header.at("E").get<int>();
  const long S = header.at("n_draws").get<long>();
  const long D = header.at("D").get<long>();
  const bool has_psi = header.at("has_psi").get<bool>();
  const bool has_raw = header.value("has_raw", false);
  const Json& jc = header.at("config");
  chain.cfg.N = jc.at("N").get<long>();
  chain.cfg.N_temp = jc.at("N_temp").get<long>();
  chain.cfg.N_stop = jc.at("N_stop").get<long>();
  chain.cfg.N_tune = jc.at("N_tune").get<long>();
  chain.cfg.lambda_min = jc.at("lambda_min").get<double>();
  chain.cfg.beta = jc.at("beta").get<double>();
  chain.cfg.leapfrog_chi = jc.at("leapfrog_chi").get<int>();
  chain.cfg.leapfrog_theta = jc.at("leapfrog_theta").get<int>();
  chain.cfg.leapfrog_phi = jc.at("leapfrog_phi").get<int>();
  chain.cfg.leapfrog_sigma = jc.at("leapfrog_sigma").get<int>();
  chain.cfg.alpha_opt = jc.at("alpha_opt").get<double>();
  chain.cfg.thin = jc.at("thin").get<long>();
  chain.cfg.seed = jc.at("seed").get<std::uint64_t>();
  chain.cfg.temper_phi = jc.at("temper_phi").get<bool>();
  chain.cfg.temper_chi = jc.at("temper_chi").get<bool>();
  for (const auto& jb : header.at("blocks")) {
    BlockStats b;
    b.name = jb.at("name").get<std::string>();
    b.sigma2 = jb.at("sigma2").get<double>();
    b.attempts = jb.at("attempts").get<long>();
    b.accepts = jb.at("accepts").get<long>();
    b.post_attempts = jb.at("post_attempts").get<long>();
    b.post_accepts = jb.at("post_accepts").get<long>();
    b.nonfinite = jb.at("nonfinite").get<long>();
    chain.blocks.push_back(std::move(b));
  }

  chain.phi_draws.resize(S);
  for (long s = 0; s < S; ++s) {
    chain.phi_draws[s].resize(chain.G * chain.T, chain.K);
    detail::read_doubles(in, chain.phi_draws[s].data(), chain.phi_draws[s].size());
  }
  if (has_psi) {
    chain.psi_draws.resize(S);
    for (long s = 0; s < S; ++s) {
      chain.psi_draws[s].resize(chain.K * chain.T, chain.V);
      detail::read_doubles(in, chain.psi_draws[s].data(), chain.psi_draws[s].size());
    }
  }
  chain.loglik.resize(S, D);
  detail::read_doubles(in, chain.loglik.data(), chain.loglik.size());
  if (has_raw) {
    chain.raw_draws.resize(S);
    for (long s = 0; s < S; ++s) {
      ModelState st = ModelState::zeros(chain.kind, chain.G, chain.T, chain.K, chain.V, chain.E);
      detail::read_doubles(in, st.phi.data(), st.phi.size());
      detail::read_doubles(in, st.theta.data(), st.theta.size());
      detail::read_doubles(in, st.chi.data(), st.chi.size());
      detail::read_doubles(in, st.sigma_corr.data(), st.sigma_corr.size());
      chain.raw_draws[s] = std::move(st);
    }
  }
  return chain;
}

inline void save_chain_file(const std::string& path, const Chain& chain,
                            std::optional<std::uint64_t> config_hash = std::nullopt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open chain file for writing: " + path);
  save_chain(out, chain, config_hash);
}

inline Chain load_chain_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open chain file: " + path);
  return load_chain(in);
}

}  // namespace edisc
