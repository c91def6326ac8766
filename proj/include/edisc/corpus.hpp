#pragma once

#include "edisc/common.hpp"

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace edisc {

struct Vocabulary {
  std::vector<std::string> lemmas;  // id -> lemma, ids dense 0..V-1
  std::vector<long> counts;         // id -> corpus-wide frequency

  int size() const { return static_cast<int>(lemmas.size()); }

  int id_of(const std::string& lemma) const {
    for (int i = 0; i < size(); ++i)
      if (lemmas[i] == lemma) return i;
    return -1;
  }
};

struct Snippet {
  std::vector<int> words;  // retained bag W_d, word ids < V
  int genre = 1;           // 1..G
  int time = 1;            // 1..T
  int true_sense = 0;      // 1..K', 0 = unlabelled
  bool collocate = false;

  int length() const { return static_cast<int>(words.size()); }
  bool labelled() const { return true_sense > 0; }
};

struct SnippetDataset {
  std::vector<Snippet> snippets;
  Vocabulary vocab;
  int L = 0;       // max window length
  int G = 1;
  int T = 1;
  int Kprime = 0;  // 0 when no snippet is labelled

  int D() const { return static_cast<int>(snippets.size()); }
  int V() const { return vocab.size(); }
};

struct DataSummary {
  int D = 0;
  int Dprime = 0;
  int V = 0;
  int L = 0;
  int Kprime = 0;
  int G = 1;
  int T = 1;
  std::vector<long> counts_gt;  // N_{.,g,t}, index g*T + t (0-based g,t)
};

struct CorpusDoc {
  std::string id;
  int genre = 0;
  int time = 0;
  std::vector<std::string> lemmas;
};

// One document per line: doc_id TAB genre_id TAB time_id TAB space-separated lemmas.
inline std::vector<CorpusDoc> read_corpus(std::istream& in) {
  std::vector<CorpusDoc> docs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    CorpusDoc doc;
    std::string genre_s, time_s, rest;
    std::istringstream ls(line);
    if (!std::getline(ls, doc.id, '\t') || !std::getline(ls, genre_s, '\t') ||
        !std::getline(ls, time_s, '\t'))
      throw DataError("corpus: malformed record (expected doc_id\\tgenre\\ttime\\tlemmas): " + line);
    std::getline(ls, rest);
    try {
      size_t pos = 0;
      doc.genre = std::stoi(genre_s, &pos);
      if (pos != genre_s.size()) throw std::invalid_argument("trailing");
      doc.time = std::stoi(time_s, &pos);
      if (pos != time_s.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("corpus: document '" + doc.id + "': genre/time metadata not an integer");
    }
    if (doc.genre < 1 || doc.time < 1)
      throw DataError("corpus: document '" + doc.id + "': genre/time must be >= 1");
    std::istringstream ts(rest);
    std::string tok;
    while (ts >> tok) doc.lemmas.push_back(tok);
    docs.push_back(std::move(doc));
  }
  return docs;
}

inline std::unordered_set<std::string> read_stopwords(std::istream& in) {
  std::unordered_set<std::string> sw;
  std::string tok;
  while (in >> tok)
    if (tok[0] != '#') sw.insert(tok);
  return sw;
}

// Extracts one snippet per target occurrence: up to L/2 raw context positions each
// side (center excluded, truncated at document edges), then drops stopwords and
// lemmas below the corpus-wide min_count. Other occurrences of the target inside
// the window count as ordinary context words. Word ids are assigned in descending
// corpus-frequency order, ties broken alphabetically.
inline SnippetDataset prepare_snippets(const std::vector<CorpusDoc>& docs,
                                       const std::string& target, int L, int min_count,
                                       const std::unordered_set<std::string>& stopwords) {
  if (L < 2 || L % 2 != 0) throw DataError("prepare_snippets: window length L must be even and >= 2");
  if (min_count < 1) throw DataError("prepare_snippets: min_count must be >= 1");

  std::unordered_map<std::string, long> freq;
  int G = 0, T = 0;
  for (const auto& doc : docs) {
    G = std::max(G, doc.genre);
    T = std::max(T, doc.time);
    for (const auto& lemma : doc.lemmas) ++freq[lemma];
  }

  const int half = L / 2;
  auto keep = [&](const std::string& lemma) {
    if (stopwords.count(lemma)) return false;  // stopword removal first, then min_count
    auto it = freq.find(lemma);
    return it != freq.end() && it->second >= min_count;
  };

  std::vector<std::vector<std::string>> bags;
  std::vector<std::pair<int, int>> meta;  // (genre, time)
  for (const auto& doc : docs) {
    const auto& toks = doc.lemmas;
    for (int p = 0; p < static_cast<int>(toks.size()); ++p) {
      if (toks[p] != target) continue;
      std::vector<std::string> bag;
      const int lo = std::max(0, p - half);
      const int hi = std::min(static_cast<int>(toks.size()) - 1, p + half);
      for (int q = lo; q <= hi; ++q) {
        if (q == p) continue;
        if (keep(toks[q])) bag.push_back(toks[q]);
      }
      bags.push_back(std::move(bag));
      meta.emplace_back(doc.genre, doc.time);
    }
  }
  if (bags.empty())
    throw DataError("prepare_snippets: target '" + target + "' not found in corpus (empty dataset)");

  // Vocabulary over lemmas that survive into at least one snippet.
  std::set<std::string> retained;
  for (const auto& bag : bags) retained.insert(bag.begin(), bag.end());
  std::vector<std::string> ordered(retained.begin(), retained.end());
  std::sort(ordered.begin(), ordered.end(), [&](const std::string& a, const std::string& b) {
    if (freq[a] != freq[b]) return freq[a] > freq[b];
    return a < b;
  });

  SnippetDataset ds;
  ds.L = L;
  ds.G = std::max(1, G);
  ds.T = std::max(1, T);
  std::unordered_map<std::string, int> ids;
  for (const auto& lemma : ordered) {
    ids[lemma] = ds.vocab.size();
    ds.vocab.lemmas.push_back(lemma);
    ds.vocab.counts.push_back(freq[lemma]);
  }
  for (size_t d = 0; d < bags.size(); ++d) {
    Snippet s;
    s.genre = meta[d].first;
    s.time = meta[d].second;
    for (const auto& lemma : bags[d]) s.words.push_back(ids[lemma]);
    ds.snippets.push_back(std::move(s));
  }
  return ds;
}

// Full structural scan; throws DataError naming the snippet index and field on
// the first invariant violation.
inline DataSummary validate(const SnippetDataset& ds) {
  if (ds.D() < 1) throw DataError("validate: dataset empty (D must be >= 1)");
  if (ds.G < 1 || ds.T < 1) throw DataError("validate: declared dims G,T must be >= 1");
  {
    std::unordered_set<std::string> seen;
    for (const auto& lemma : ds.vocab.lemmas)
      if (!seen.insert(lemma).second) throw DataError("validate: duplicate lemma '" + lemma + "'");
  }
  if (ds.vocab.counts.size() != ds.vocab.lemmas.size())
    throw DataError("validate: vocabulary counts/lemmas size mismatch");

  DataSummary sum;
  sum.D = ds.D();
  sum.V = ds.V();
  sum.L = ds.L;
  sum.G = ds.G;
  sum.T = ds.T;
  sum.counts_gt.assign(static_cast<size_t>(ds.G) * ds.T, 0);
  bool any_labelled = false;
  for (int d = 0; d < ds.D(); ++d) {
    const Snippet& s = ds.snippets[d];
    const std::string at = "snippet " + std::to_string(d) + ": ";
    if (s.length() > ds.L) throw DataError("validate: " + at + "field words: L_d exceeds L");
    for (int w : s.words)
      if (w < 0 || w >= ds.V()) throw DataError("validate: " + at + "field words: id out of range");
    if (s.genre < 1 || s.genre > ds.G) throw DataError("validate: " + at + "field genre: out of 1..G");
    if (s.time < 1 || s.time > ds.T) throw DataError("validate: " + at + "field time: out of 1..T");
    if (s.collocate && !s.labelled())
      throw DataError("validate: " + at + "field collocate: set without true_sense");
    if (s.labelled()) {
      any_labelled = true;
      if (ds.Kprime < 1 || s.true_sense > ds.Kprime)
        throw DataError("validate: " + at + "field true_sense: out of 1..K'");
    }
    if (s.collocate) ++sum.Dprime;
    ++sum.counts_gt[static_cast<size_t>(s.genre - 1) * ds.T + (s.time - 1)];
  }
  if (any_labelled != (ds.Kprime > 0))
    throw DataError("validate: K' must be declared iff any snippet is labelled");
  sum.Kprime = ds.Kprime;
  return sum;
}

// Snippet file: header lines (#edisc-snippets, optional #config, #dims, #lemma...),
// then one snippet per line: genre TAB time TAB sense-or-dash TAB collocate TAB ids.
inline void save_snippets(std::ostream& out, const SnippetDataset& ds,
                          std::optional<std::uint64_t> config_hash = std::nullopt) {
  out << "#edisc-snippets v1\n";
  if (config_hash) out << "#config " << std::hex << *config_hash << std::dec << "\n";
  out << "#dims " << ds.D() << " " << ds.V() << " " << ds.L << " " << ds.G << " " << ds.T << " "
      << ds.Kprime << "\n";
  for (int v = 0; v < ds.V(); ++v)
    out << "#lemma " << v << " " << ds.vocab.lemmas[v] << " " << ds.vocab.counts[v] << "\n";
  for (const auto& s : ds.snippets) {
    out << s.genre << "\t" << s.time << "\t";
    if (s.labelled())
      out << s.true_sense;
    else
      out << "-";
    out << "\t" << (s.collocate ? 1 : 0) << "\t";
    for (size_t i = 0; i < s.words.size(); ++i) out << (i ? " " : "") << s.words[i];
    out << "\n";
  }
}

inline SnippetDataset load_snippets(std::istream& in) {
  SnippetDataset ds;
  std::string line;
  int declared_D = -1, declared_V = -1;
  if (!std::getline(in, line) || line.rfind("#edisc-snippets", 0) != 0)
    throw DataError("load_snippets: missing #edisc-snippets header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "#dims") {
        if (!(ls >> declared_D >> declared_V >> ds.L >> ds.G >> ds.T >> ds.Kprime))
          throw DataError("load_snippets: malformed #dims line");
      } else if (tag == "#lemma") {
        int id;
        std::string lemma;
        long count;
        if (!(ls >> id >> lemma >> count)) throw DataError("load_snippets: malformed #lemma line");
        if (id != ds.vocab.size()) throw DataError("load_snippets: lemma ids must be dense and ordered");
        ds.vocab.lemmas.push_back(lemma);
        ds.vocab.counts.push_back(count);
      }
      continue;
    }
    std::istringstream ls(line);
    std::string genre_s, time_s, sense_s, coll_s, ids_s;
    if (!std::getline(ls, genre_s, '\t') || !std::getline(ls, time_s, '\t') ||
        !std::getline(ls, sense_s, '\t') || !std::getline(ls, coll_s, '\t'))
      throw DataError("load_snippets: malformed snippet line: " + line);
    std::getline(ls, ids_s);
    Snippet s;
    s.genre = std::stoi(genre_s);
    s.time = std::stoi(time_s);
    s.true_sense = (sense_s == "-") ? 0 : std::stoi(sense_s);
    s.collocate = (coll_s == "1");
    std::istringstream ws(ids_s);
    int id;
    while (ws >> id) s.words.push_back(id);
    ds.snippets.push_back(std::move(s));
  }
  if (declared_D >= 0 && declared_D != ds.D())
    throw DataError("load_snippets: declared D does not match snippet count");
  if (declared_V >= 0 && declared_V != ds.V())
    throw DataError("load_snippets: declared V does not match lemma table");
  return ds;
}

}  // namespace edisc
