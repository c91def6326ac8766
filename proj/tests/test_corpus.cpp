#include <catch2/catch_amalgamated.hpp>

#include "edisc/corpus.hpp"
#include "test_util.hpp"

#include <sstream>

using namespace edisc;

namespace {

std::vector<CorpusDoc> parse(const std::string& text) {
  std::istringstream in(text);
  return read_corpus(in);
}

}  // namespace

TEST_CASE("read_corpus parses records and rejects bad metadata", "[corpus]") {
  const auto docs = parse("doc1\t1\t2\talpha beta gamma\n"
                          "doc2\t2\t1\tdelta\n");
  REQUIRE(docs.size() == 2);
  REQUIRE(docs[0].genre == 1);
  REQUIRE(docs[0].time == 2);
  REQUIRE(docs[0].lemmas == std::vector<std::string>{"alpha", "beta", "gamma"});

  REQUIRE_THROWS_WITH(parse("docX\tfoo\t1\ta b\n"), Catch::Matchers::ContainsSubstring("docX"));
  REQUIRE_THROWS_WITH(parse("docY\t0\t1\ta b\n"), Catch::Matchers::ContainsSubstring("docY"));
}

TEST_CASE("prepare_snippets matches hand enumeration on a toy corpus", "[corpus]") {
  // 3 documents, target 'bank'; window L=4 (2 each side); stopword 'the';
  // corpus counts: the=4, river=3, money=2, bank=3, of=1, mud=1, sand=1
  const std::string corpus_text =
      "d1\t1\t1\tthe river bank of mud\n"
      "d2\t1\t2\tmoney bank the river sand\n"
      "d3\t2\t1\tthe bank money river the\n";
  const auto docs = parse(corpus_text);
  const std::unordered_set<std::string> stop{"the"};

  // min_count=2 drops of/mud/sand (count 1). Hand extraction:
  // d1: window around bank at pos 2 -> {river, of(dropped), the(stop)} => {river}
  // d2: bank at pos 1 -> {money, the(stop), river} => {money, river}
  // d3: bank at pos 1 -> {the(stop), money, river} => {money, river}
  const auto ds = prepare_snippets(docs, "bank", 4, 2, stop);
  REQUIRE(ds.D() == 3);
  REQUIRE(ds.G == 2);
  REQUIRE(ds.T == 2);
  // vocab in descending corpus frequency: river(3), money(2)
  REQUIRE(ds.vocab.lemmas == std::vector<std::string>{"river", "money"});
  REQUIRE(ds.snippets[0].words == std::vector<int>{0});
  REQUIRE(ds.snippets[0].genre == 1);
  REQUIRE(ds.snippets[0].time == 1);
  REQUIRE(ds.snippets[1].words == std::vector<int>{1, 0});
  REQUIRE(ds.snippets[2].words == std::vector<int>{1, 0});

  // neighbouring occurrences of the target itself are kept as context
  const auto docs2 = parse("d1\t1\t1\tbank bank river\n");
  const auto ds2 = prepare_snippets(docs2, "bank", 4, 1, {});
  REQUIRE(ds2.D() == 2);
  REQUIRE(ds2.snippets[0].length() == 2);  // the other 'bank' and 'river'
}

TEST_CASE("prepare_snippets edge cases", "[corpus]") {
  // target once with all context stopworded -> one snippet with empty bag
  const auto docs = parse("d1\t1\t1\tthe bank the\n");
  const auto ds = prepare_snippets(docs, "bank", 4, 1, {"the"});
  REQUIRE(ds.D() == 1);
  REQUIRE(ds.snippets[0].length() == 0);
  REQUIRE(ds.V() == 0);

  REQUIRE_THROWS_AS(prepare_snippets(docs, "missing", 4, 1, {}), DataError);
  REQUIRE_THROWS_AS(prepare_snippets(docs, "bank", 3, 1, {}), DataError);  // odd L
  REQUIRE_THROWS_AS(prepare_snippets(docs, "bank", 4, 0, {}), DataError);  // min_count
}

TEST_CASE("validate returns Table-1 style counts", "[corpus]") {
  SnippetDataset ds;
  ds.G = 1;
  ds.T = 1;
  ds.L = 4;
  ds.Kprime = 0;
  ds.vocab.lemmas = {"a"};
  ds.vocab.counts = {5};
  Snippet s;
  s.genre = 1;
  s.time = 1;
  s.words = {0};
  ds.snippets.push_back(s);
  const auto sum = validate(ds);
  REQUIRE(sum.D == 1);
  REQUIRE(sum.Dprime == 0);
  REQUIRE(sum.V == 1);
}

TEST_CASE("validate agrees with a second-pass counting oracle", "[corpus]") {
  Rng rng = make_rng(12);
  auto ds = testutil::random_dataset(rng, 2, 3, 15, 6, 40, 2);
  const auto sum = validate(ds);

  // independent full scan
  int Dp = 0;
  std::vector<long> counts(static_cast<size_t>(ds.G) * ds.T, 0);
  for (const auto& s : ds.snippets) {
    if (s.collocate) ++Dp;
    ++counts[static_cast<size_t>(s.genre - 1) * ds.T + (s.time - 1)];
  }
  REQUIRE(sum.D == ds.D());
  REQUIRE(sum.Dprime == Dp);
  REQUIRE(sum.counts_gt == counts);
  long total = 0;
  for (long c : sum.counts_gt) total += c;
  REQUIRE(total == sum.D);
}

TEST_CASE("validate names the offending snippet and field", "[corpus]") {
  Rng rng = make_rng(13);
  auto ds = testutil::random_dataset(rng, 1, 2, 5, 4, 6);
  ds.snippets[3].genre = 9;
  REQUIRE_THROWS_WITH(validate(ds), Catch::Matchers::ContainsSubstring("snippet 3") &&
                                        Catch::Matchers::ContainsSubstring("genre"));
  ds.snippets[3].genre = 1;
  ds.snippets[2].collocate = true;  // collocate without label
  REQUIRE_THROWS_WITH(validate(ds), Catch::Matchers::ContainsSubstring("snippet 2"));
}

TEST_CASE("snippet files round-trip field by field", "[corpus]") {
  Rng rng = make_rng(14);
  const auto ds = testutil::random_dataset(rng, 2, 2, 9, 6, 25, 3);
  std::stringstream buf;
  save_snippets(buf, ds, fnv1a("cfg"));
  const auto back = load_snippets(buf);
  REQUIRE(back.D() == ds.D());
  REQUIRE(back.V() == ds.V());
  REQUIRE(back.L == ds.L);
  REQUIRE(back.G == ds.G);
  REQUIRE(back.T == ds.T);
  REQUIRE(back.Kprime == ds.Kprime);
  REQUIRE(back.vocab.lemmas == ds.vocab.lemmas);
  REQUIRE(back.vocab.counts == ds.vocab.counts);
  for (int d = 0; d < ds.D(); ++d) {
    REQUIRE(back.snippets[d].words == ds.snippets[d].words);
    REQUIRE(back.snippets[d].genre == ds.snippets[d].genre);
    REQUIRE(back.snippets[d].time == ds.snippets[d].time);
    REQUIRE(back.snippets[d].true_sense == ds.snippets[d].true_sense);
    REQUIRE(back.snippets[d].collocate == ds.snippets[d].collocate);
  }
}

TEST_CASE("raising min_count never increases V or any L_d", "[corpus]") {
  Rng rng = make_rng(15);
  // random corpus text over a small alphabet
  std::uniform_int_distribution<int> word(0, 11), len(5, 30), gt(1, 2);
  std::string text;
  for (int doc = 0; doc < 8; ++doc) {
    text += "d" + std::to_string(doc) + "\t" + std::to_string(gt(rng)) + "\t" +
            std::to_string(gt(rng)) + "\t";
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      const int w = word(rng);
      text += (w == 0 ? std::string("bank") : "w" + std::to_string(w));
      text += (i + 1 == n) ? "\n" : " ";
    }
  }
  const auto docs = parse(text);
  std::optional<SnippetDataset> prev;
  for (int mc = 1; mc <= 6; ++mc) {
    SnippetDataset cur;
    try {
      cur = prepare_snippets(docs, "bank", 6, mc, {});
    } catch (const DataError&) {
      break;  // no target occurrences retained is impossible; only empty corpus
    }
    if (prev) {
      REQUIRE(cur.V() <= prev->V());
      REQUIRE(cur.D() == prev->D());
      for (int d = 0; d < cur.D(); ++d)
        REQUIRE(cur.snippets[d].length() <= prev->snippets[d].length());
    }
    prev = cur;
  }
}
