#pragma once

#include "edisc/common.hpp"
#include "edisc/corpus.hpp"
#include "edisc/embeddings.hpp"
#include "edisc/model.hpp"

#include <random>
#include <vector>

namespace testutil {

using namespace edisc;

// Random dataset with uniform word bags; labels optional.
inline SnippetDataset random_dataset(Rng& rng, int G, int T, int V, int L, int D,
                                     int Kprime = 0, double collocate_prob = 0.7) {
  SnippetDataset ds;
  ds.G = G;
  ds.T = T;
  ds.L = L;
  ds.Kprime = Kprime;
  ds.vocab.lemmas.resize(V);
  ds.vocab.counts.assign(V, 1);
  for (int v = 0; v < V; ++v) ds.vocab.lemmas[v] = "w" + std::to_string(v);
  std::uniform_int_distribution<int> glen(0, L);
  std::uniform_int_distribution<int> word(0, V - 1);
  std::uniform_int_distribution<int> genre(1, G), time(1, T);
  std::uniform_real_distribution<double> unif(0, 1);
  std::uniform_int_distribution<int> sense(1, Kprime > 0 ? Kprime : 1);
  for (int d = 0; d < D; ++d) {
    Snippet s;
    s.genre = genre(rng);
    s.time = time(rng);
    const int ld = glen(rng);
    for (int i = 0; i < ld; ++i) s.words.push_back(word(rng));
    if (Kprime > 0) {
      s.true_sense = sense(rng);
      s.collocate = unif(rng) < collocate_prob;
    }
    for (int w : s.words) ++ds.vocab.counts[w];
    ds.snippets.push_back(std::move(s));
  }
  return ds;
}

struct Instance {
  SnippetDataset data;
  Matrix rho;  // empty for DiSC
  Hyperparams hp;
  ModelState state;
};

// Random model instance of either kind, state drawn from the prior.
inline Instance random_instance(Rng& rng, ModelKind kind, int G, int T, int K, int V, int M,
                                int L, int D) {
  Instance inst;
  inst.data = random_dataset(rng, G, T, V, L, D);
  if (kind == ModelKind::EDiSC) {
    inst.rho = standard_normal_matrix(V, M, rng);
    inst.hp = default_hyperparams(kind, K, M, median_sq_distance(inst.rho));
  } else {
    inst.hp = default_hyperparams(kind, K, 0);
  }
  inst.state = sample_prior_state(inst.hp, G, T, V, rng);
  return inst;
}

}  // namespace testutil
