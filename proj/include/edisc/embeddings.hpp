#pragma once

#include "edisc/common.hpp"
#include "edisc/corpus.hpp"

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace edisc {

// Exact median of (rho_x - rho_y)^T (rho_x - rho_y) over unordered pairs for
// V <= 2000, seeded uniform random-pair estimate above that (the exhaustive
// oracle stays feasible below the cutoff).
inline double median_sq_distance(const Matrix& rho, std::uint64_t seed = 20240901ULL) {
  const Eigen::Index V = rho.rows();
  if (V < 2) throw ModelError("median_sq_distance: need at least 2 rows");
  std::vector<double> d2;
  const long long all_pairs = static_cast<long long>(V) * (V - 1) / 2;
  if (V <= 2000) {
    d2.reserve(static_cast<size_t>(all_pairs));
    for (Eigen::Index x = 0; x < V; ++x)
      for (Eigen::Index y = x + 1; y < V; ++y) d2.push_back((rho.row(x) - rho.row(y)).squaredNorm());
  } else {
    const long long n = std::min<long long>(all_pairs, 1000000LL);
    Rng rng = make_rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, V - 1);
    d2.reserve(static_cast<size_t>(n));
    while (static_cast<long long>(d2.size()) < n) {
      const Eigen::Index x = pick(rng), y = pick(rng);
      if (x == y) continue;
      d2.push_back((rho.row(x) - rho.row(y)).squaredNorm());
    }
  }
  const size_t n = d2.size();
  auto mid = d2.begin() + n / 2;
  std::nth_element(d2.begin(), mid, d2.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  std::nth_element(d2.begin(), d2.begin() + n / 2 - 1, d2.end());
  return 0.5 * (d2[n / 2 - 1] + hi);
}

struct EmbeddingMatrix {
  Matrix rho;  // V x M, row per word id
  int M = 0;
  double c = 0.0;  // median pairwise squared distance

  static EmbeddingMatrix from_rows(Matrix rows) {
    EmbeddingMatrix e;
    e.M = static_cast<int>(rows.cols());
    e.rho = std::move(rows);
    if (!e.rho.allFinite()) throw ModelError("EmbeddingMatrix: non-finite entries");
    e.c = (e.rho.rows() >= 2) ? median_sq_distance(e.rho) : 0.0;
    return e;
  }
};

// Sparse symmetric distance-weighted co-occurrence counts; each unordered
// position pair at distance d adds 1/d to X_{ij} = X_{ji}.
struct CoocMatrix {
  int V = 0;
  std::unordered_map<std::uint64_t, double> cells;  // key i*V+j with i <= j
  long long skipped_tokens = 0;

  static std::uint64_t key(int i, int j, int V) {
    if (i > j) std::swap(i, j);
    return static_cast<std::uint64_t>(i) * V + j;
  }
  void add(int i, int j, double w) { cells[key(i, j, V)] += w; }
  double at(int i, int j) const {
    auto it = cells.find(key(i, j, V));
    return it == cells.end() ? 0.0 : it->second;
  }
  double total_mass() const {
    double s = 0.0;
    for (const auto& [k, v] : cells) s += v;
    return s;
  }
};

// Distances are measured in retained-token positions: tokens outside the
// vocabulary are removed from the document before windowing, and counted in
// skipped_tokens.
inline CoocMatrix build_cooccurrence(const std::vector<CorpusDoc>& docs, const Vocabulary& vocab,
                                     int window) {
  if (window < 1) throw DataError("build_cooccurrence: window must be >= 1");
  std::unordered_map<std::string, int> ids;
  for (int v = 0; v < vocab.size(); ++v) ids[vocab.lemmas[v]] = v;

  CoocMatrix X;
  X.V = vocab.size();
  std::vector<int> doc_ids;
  for (const auto& doc : docs) {
    doc_ids.clear();
    for (const auto& lemma : doc.lemmas) {
      auto it = ids.find(lemma);
      if (it == ids.end())
        ++X.skipped_tokens;
      else
        doc_ids.push_back(it->second);
    }
    const int n = static_cast<int>(doc_ids.size());
    for (int p = 0; p < n; ++p)
      for (int d = 1; d <= window && p + d < n; ++d)
        X.add(doc_ids[p], doc_ids[p + d], 1.0 / d);
  }
  return X;
}

struct GloveSettings {
  double x_max = 100.0;
  double alpha = 0.75;
  double lr = 0.05;
  double tol = 0.01;  // relative epoch-loss change
  int epochs_max = 50;
  std::uint64_t seed = 1;
};

struct GloveTrace {
  std::vector<double> epoch_loss;
  int epochs_run = 0;
};

// Weighted least squares on log co-occurrence counts with AdaGrad updates,
// iterating both directions of every stored pair each epoch in seeded shuffled
// order. Returns word vectors as the sum of the `in' and `out' vectors.
inline EmbeddingMatrix train_glove(const CoocMatrix& X, int M, const GloveSettings& cfg = {},
                                   GloveTrace* trace = nullptr) {
  if (M < 1) throw ModelError("train_glove: M must be >= 1");
  if (X.cells.empty()) throw ModelError("train_glove: empty co-occurrence matrix");
  const int V = X.V;

  struct Cell {
    int i, j;
    double x;
  };
  std::vector<Cell> cells;
  cells.reserve(2 * X.cells.size());
  for (const auto& [key, x] : X.cells) {
    const int i = static_cast<int>(key / V), j = static_cast<int>(key % V);
    if (x <= 0) continue;
    cells.push_back({i, j, x});
    if (i != j) cells.push_back({j, i, x});
  }
  if (cells.empty()) throw ModelError("train_glove: no positive co-occurrence counts");

  Rng rng = make_rng(cfg.seed);
  std::uniform_real_distribution<double> init(-0.5 / M, 0.5 / M);
  Matrix w(V, M), wt(V, M);
  Vector b(V), bt(V);
  for (int v = 0; v < V; ++v) {
    for (int m = 0; m < M; ++m) {
      w(v, m) = init(rng);
      wt(v, m) = init(rng);
    }
    b[v] = init(rng);
    bt[v] = init(rng);
  }
  Matrix gw = Matrix::Ones(V, M), gwt = Matrix::Ones(V, M);
  Vector gb = Vector::Ones(V), gbt = Vector::Ones(V);

  double prev_loss = 0.0;
  GloveTrace local;
  GloveTrace& tr = trace ? *trace : local;
  Vector grad_i(M), grad_j(M);
  for (int epoch = 0; epoch < cfg.epochs_max; ++epoch) {
    std::shuffle(cells.begin(), cells.end(), rng);
    double loss = 0.0;
    for (const Cell& cell : cells) {
      const double fx = (cell.x < cfg.x_max) ? std::pow(cell.x / cfg.x_max, cfg.alpha) : 1.0;
      const double diff = w.row(cell.i).dot(wt.row(cell.j)) + b[cell.i] + bt[cell.j] - std::log(cell.x);
      const double fdiff = fx * diff;
      loss += 0.5 * fdiff * diff;

      grad_i = fdiff * wt.row(cell.j).transpose();
      grad_j = fdiff * w.row(cell.i).transpose();
      w.row(cell.i) -= cfg.lr * (grad_i.array() / gw.row(cell.i).transpose().array().sqrt()).matrix();
      wt.row(cell.j) -= cfg.lr * (grad_j.array() / gwt.row(cell.j).transpose().array().sqrt()).matrix();
      gw.row(cell.i) += grad_i.array().square().matrix().transpose();
      gwt.row(cell.j) += grad_j.array().square().matrix().transpose();

      b[cell.i] -= cfg.lr * fdiff / std::sqrt(gb[cell.i]);
      bt[cell.j] -= cfg.lr * fdiff / std::sqrt(gbt[cell.j]);
      gb[cell.i] += fdiff * fdiff;
      gbt[cell.j] += fdiff * fdiff;
    }
    if (!std::isfinite(loss))
      throw ModelError("train_glove: non-finite loss at epoch " + std::to_string(epoch));
    tr.epoch_loss.push_back(loss);
    tr.epochs_run = epoch + 1;
    if (epoch > 0 && prev_loss > 0 && std::abs(loss - prev_loss) / prev_loss < cfg.tol) break;
    prev_loss = loss;
  }
  return EmbeddingMatrix::from_rows(w + wt);
}

// Text format: optional "V M" first line, then one word per line:
// lemma SP v1 SP ... SP vM. Lines starting with '#' are skipped.
inline void save_embeddings(std::ostream& out, const EmbeddingMatrix& emb, const Vocabulary& vocab,
                            std::optional<std::uint64_t> config_hash = std::nullopt) {
  if (vocab.size() != emb.rho.rows()) throw DataError("save_embeddings: vocab/matrix size mismatch");
  if (config_hash) out << "#config " << std::hex << *config_hash << std::dec << "\n";
  out << emb.rho.rows() << " " << emb.M << "\n";
  out << std::setprecision(17);
  for (int v = 0; v < vocab.size(); ++v) {
    out << vocab.lemmas[v];
    for (int m = 0; m < emb.M; ++m) out << " " << emb.rho(v, m);
    out << "\n";
  }
}

inline EmbeddingMatrix load_embeddings(std::istream& in, const Vocabulary& vocab) {
  std::unordered_map<std::string, std::vector<double>> rows;
  std::string line;
  int M = -1;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    std::vector<double> vals;
    double x;
    while (ls >> x) vals.push_back(x);
    // optional "V M" header: numeric first token and exactly one value
    if (line_no <= 2 && vals.size() == 1 && !first.empty() &&
        first.find_first_not_of("0123456789") == std::string::npos && rows.empty()) {
      continue;
    }
    if (M < 0) M = static_cast<int>(vals.size());
    if (static_cast<int>(vals.size()) != M || M == 0)
      throw DataError("load_embeddings: inconsistent dimension at line " + std::to_string(line_no));
    rows[first] = std::move(vals);
  }
  if (M <= 0) throw DataError("load_embeddings: no embedding rows found");

  std::vector<std::string> missing;
  Matrix rho(vocab.size(), M);
  for (int v = 0; v < vocab.size(); ++v) {
    auto it = rows.find(vocab.lemmas[v]);
    if (it == rows.end()) {
      missing.push_back(vocab.lemmas[v]);
      continue;
    }
    for (int m = 0; m < M; ++m) rho(v, m) = it->second[m];
  }
  if (!missing.empty()) {
    std::string msg = "load_embeddings: missing lemmas:";
    for (size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + missing[i];
    if (missing.size() > 20) msg += " ... (" + std::to_string(missing.size()) + " total)";
    throw DataError(msg);
  }
  return EmbeddingMatrix::from_rows(std::move(rho));
}

}  // namespace edisc
