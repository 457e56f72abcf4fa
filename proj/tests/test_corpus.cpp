#include "misent/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "doctest.h"
#include "misent/error.hpp"
#include "misent/rng.hpp"
#include "support.hpp"

using namespace misent;
using test_support::TempDir;
using test_support::write_file;

TEST_SUITE("corpus") {

TEST_CASE("tokenize applies the stated rules") {
  CHECK(tokenize("The cat sat.").tokens ==
        std::vector<std::string>{"the", "cat", "sat", "."});
  CHECK(tokenize("A").tokens == std::vector<std::string>{"a"});
  // leading/trailing whitespace trimmed, trailing comma peeled
  CHECK(tokenize("  Hello,  world  ").tokens ==
        std::vector<std::string>{"hello", ",", "world"});
}

TEST_CASE("tokenize peels stacked punctuation in order") {
  CHECK(tokenize("\"quoted.\"").tokens ==
        std::vector<std::string>{"\"", "quoted", ".", "\""});
  CHECK(tokenize("...").tokens == std::vector<std::string>{".", ".", "."});
  CHECK(tokenize("(a)").tokens == std::vector<std::string>{"(", "a", ")"});
  // interior punctuation stays attached
  CHECK(tokenize("don't stop").tokens ==
        std::vector<std::string>{"don't", "stop"});
}

TEST_CASE("tokenize handles unicode whitespace and case") {
  // U+00A0 no-break space separates, U+00C9 lowercases
  CHECK(tokenize("cafÉ bar").tokens ==
        std::vector<std::string>{"café", "bar"});
  // combining acute composes with the base letter (NFC)
  CHECK(tokenize("café").tokens == std::vector<std::string>{"café"});
}

TEST_CASE("tokenize rejects empty and invalid input") {
  CHECK_THROWS_AS(tokenize(""), EmptySentence);
  CHECK_THROWS_AS(tokenize("   \t "), EmptySentence);
  CHECK_THROWS_AS(tokenize("ok\xFF"), EncodingError);
  CHECK_THROWS_AS(tokenize(std::string_view("\xC3", 1)), EncodingError);
}

TEST_CASE("tokenize is idempotent on its own joined output") {
  Rng rng(7);
  const std::vector<std::string> seeds = {
      "The Quick, Brown Fox!",  "a.b c;d (nested) [ok]...",
      "Mixed CASE tokens, ok?", "\"hi\" there -- edge's case.",
      "tabs\tand   spaces",     "punct!!! only??? ..",
  };
  for (const auto& text : seeds) {
    const TokenizedSentence once = tokenize(text);
    const TokenizedSentence twice = tokenize(join_tokens(once));
    CHECK(once.tokens == twice.tokens);
    for (const auto& tok : once.tokens)
      for (char c : tok) CHECK_FALSE(std::isspace(static_cast<unsigned char>(c)));
  }
}

TEST_CASE("load_corpus keeps order and skips blanks") {
  TempDir dir;
  const auto path =
      write_file(dir, "corpus.txt", "First one.\nSecond one.\nThird one.\n");
  const auto sentences = load_corpus(path);
  REQUIRE(sentences.size() == 3);
  CHECK(sentences[0].tokens.front() == "first");
  CHECK(sentences[2].tokens.front() == "third");

  const auto with_blank = write_file(dir, "blank.txt", "one\n\n  \ntwo\n");
  CHECK(load_corpus(with_blank).size() == 2);

  const auto empty = write_file(dir, "empty.txt", "");
  CHECK(load_corpus(empty).empty());
}

TEST_CASE("load_corpus accepts CRLF and rejects bad input") {
  TempDir dir;
  const auto crlf = write_file(dir, "crlf.txt", "one two\r\nthree\r\n");
  const auto sentences = load_corpus(crlf);
  REQUIRE(sentences.size() == 2);
  CHECK(sentences[0].tokens == std::vector<std::string>{"one", "two"});

  CHECK_THROWS_AS(load_corpus(dir.file("missing.txt")), IoError);
  const auto bad = write_file(dir, "bad.txt", std::string("ok\n\xFE\xFF\n"));
  CHECK_THROWS_AS(load_corpus(bad), EncodingError);
}

TEST_CASE("load_corpus truncates over-long sentences") {
  TempDir dir;
  std::string line;
  for (int i = 0; i < 40; ++i) line += "tok" + std::to_string(i) + " ";
  const auto path = write_file(dir, "long.txt", line + "\n");
  const auto sentences = load_corpus(path, 16);
  REQUIRE(sentences.size() == 1);
  CHECK(sentences[0].length() == 16);
}

TEST_CASE("load_scored_pairs parses and validates") {
  TempDir dir;
  const auto path = write_file(dir, "pairs.tsv",
                               "5.0\ta b\ta b\n"
                               "0\tx\ty\n"
                               "2.5\tleft side\tright side\n");
  const auto pairs = load_scored_pairs(path);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].score == doctest::Approx(5.0));
  CHECK(pairs[0].sentence_a.tokens == pairs[0].sentence_b.tokens);
  CHECK(pairs[1].score == doctest::Approx(0.0));

  const auto out_of_range = write_file(dir, "bad1.tsv", "6.1\tx\ty\n");
  CHECK_THROWS_AS(load_scored_pairs(out_of_range), ParseError);
  const auto negative = write_file(dir, "bad2.tsv", "-0.5\tx\ty\n");
  CHECK_THROWS_AS(load_scored_pairs(negative), ParseError);
  const auto missing_field = write_file(dir, "bad3.tsv", "1.0\tonly one\n");
  CHECK_THROWS_AS(load_scored_pairs(missing_field), ParseError);
  const auto junk_score = write_file(dir, "bad4.tsv", "1.0x\ta\tb\n");
  CHECK_THROWS_AS(load_scored_pairs(junk_score), ParseError);

  // ParseError carries the offending line number
  const auto later = write_file(dir, "bad5.tsv", "1.0\ta\tb\n9\tx\ty\n");
  try {
    load_scored_pairs(later);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("load_labeled parses labels") {
  TempDir dir;
  const auto path = write_file(dir, "labels.tsv", "0\tfirst one\n1\tsecond\n");
  const auto items = load_labeled(path);
  REQUIRE(items.size() == 2);
  CHECK(items[0].label == 0);
  CHECK(items[1].label == 1);
  CHECK_THROWS_AS(load_labeled(write_file(dir, "bad.tsv", "-1\tx\n")), ParseError);
  CHECK_THROWS_AS(load_labeled(write_file(dir, "bad2.tsv", "a\tx\n")), ParseError);
}

TEST_CASE("make_batches merges a short final batch") {
  std::vector<TokenizedSentence> sentences;
  for (int i = 0; i < 5; ++i)
    sentences.push_back({{"tok" + std::to_string(i)}});
  const auto batches = make_batches(sentences, 2, 1, false);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].size() == 2);
  CHECK(batches[1].size() == 3);
}

TEST_CASE("make_batches is deterministic under a seed") {
  std::vector<TokenizedSentence> sentences;
  for (int i = 0; i < 23; ++i)
    sentences.push_back({{"w" + std::to_string(i)}});
  const auto a = make_batches(sentences, 4, 99, true);
  const auto b = make_batches(sentences, 4, 99, true);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].ids == b[i].ids);
  const auto c = make_batches(sentences, 4, 100, true);
  bool same = true;
  for (std::size_t i = 0; i < a.size() && same; ++i) same = a[i].ids == c[i].ids;
  CHECK_FALSE(same);
}

TEST_CASE("make_batches rejects tiny corpora") {
  std::vector<TokenizedSentence> one = {{{"only"}}};
  CHECK_THROWS_AS(make_batches(one, 32, 1, false), BatchTooSmall);
}

TEST_CASE("shuffling permutes without loss or duplication") {
  std::vector<TokenizedSentence> sentences;
  for (int i = 0; i < 57; ++i)
    sentences.push_back({{"s" + std::to_string(i), "body"}});
  const auto batches = make_batches(sentences, 8, 1234, true);

  std::multiset<std::string> seen;
  std::size_t mask_total = 0;
  for (const auto& batch : batches) {
    for (const auto& s : batch.sentences) seen.insert(join_tokens(s));
    for (std::size_t s = 0; s < batch.size(); ++s) {
      std::size_t row_sum = 0;
      for (std::size_t i = 0; i < batch.l_max; ++i) row_sum += batch.mask(s, i);
      CHECK(row_sum == batch.sentences[s].length());
      mask_total += row_sum;
    }
  }
  std::multiset<std::string> expected;
  std::size_t token_total = 0;
  for (const auto& s : sentences) {
    expected.insert(join_tokens(s));
    token_total += s.length();
  }
  CHECK(seen == expected);
  CHECK(mask_total == token_total);
}

}  // TEST_SUITE
