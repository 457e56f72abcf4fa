#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "misent/corpus.hpp"
#include "misent/error.hpp"
#include "misent/synth.hpp"
#include "support.hpp"

using namespace misent;
using test_support::TempDir;
using test_support::read_file;
using test_support::write_file;

namespace {

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"misent"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return misent::cli::run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("topics use disjoint vocabularies") {
  SynthConfig config;
  config.topics = 2;
  config.per_topic = 100;
  config.seed = 5;
  const SynthFixture fixture = make_synth_fixture(config);
  CHECK(fixture.corpus_lines.size() == 200);

  std::set<std::string> vocab0, vocab1;
  for (std::size_t i = 0; i < fixture.corpus_lines.size(); ++i) {
    const auto tokens = tokenize(fixture.corpus_lines[i]).tokens;
    auto& dst = fixture.topic_of_sentence[i] == 0 ? vocab0 : vocab1;
    dst.insert(tokens.begin(), tokens.end());
    const std::size_t len = tokens.size();
    CHECK(len >= 5);
    CHECK(len <= 12);
  }
  for (const auto& t : vocab0) CHECK(vocab1.count(t) == 0);
}

TEST_CASE("fixture generation is deterministic and scores identical pairs 5.0") {
  SynthConfig config;
  config.seed = 77;
  config.per_topic = 10;
  const SynthFixture a = make_synth_fixture(config);
  const SynthFixture b = make_synth_fixture(config);
  CHECK(a.corpus_lines == b.corpus_lines);
  CHECK(a.pair_lines == b.pair_lines);
  CHECK(a.label_lines == b.label_lines);

  // the first pair is a sentence with itself
  CHECK(a.pair_lines.front().substr(0, 4) == "5.0\t");

  // every score parses and lies in [0, 5] with one decimal
  for (const auto& line : a.pair_lines) {
    const double score = std::stod(line.substr(0, line.find('\t')));
    CHECK(score >= 0.0);
    CHECK(score <= 5.0);
  }
  CHECK_THROWS_AS(make_synth_fixture(SynthConfig{1, 100, 0}), InvalidConfig);
  CHECK_THROWS_AS(make_synth_fixture(SynthConfig{2, 5, 0}), InvalidConfig);
}

TEST_CASE("written fixtures load back through the corpus module") {
  TempDir dir;
  SynthConfig config;
  config.per_topic = 10;
  const SynthFixture fixture = make_synth_fixture(config);
  write_synth_fixture(fixture, dir.file("fx"));
  const auto sentences = load_corpus(dir.file("fx.corpus.txt"));
  CHECK(sentences.size() == 20);
  const auto pairs = load_scored_pairs(dir.file("fx.pairs.tsv"));
  CHECK(pairs.size() == 20);
  const auto labeled = load_labeled(dir.file("fx.labels.tsv"));
  CHECK(labeled.size() == 20);
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with 1") {
  CHECK(run_cli({"train"}) == 1);                      // missing flags
  CHECK(run_cli({"does-not-exist"}) == 1);             // unknown subcommand
  CHECK(run_cli({}) == 1);                             // no subcommand
  TempDir dir;
  write_file(dir, "c.txt", "a b\nc d\n");
  CHECK(run_cli({"train", "--corpus", dir.file("c.txt").string(),
                 "--embeddings", "bogus:3", "--out",
                 dir.file("x.ckpt").string()}) == 1);
  CHECK(run_cli({"train", "--corpus", dir.file("c.txt").string(),
                 "--embeddings", "trainable:0", "--out",
                 dir.file("x.ckpt").string()}) == 1);
}

TEST_CASE("data errors exit with 2 and carry line numbers") {
  TempDir dir;
  const auto ckpt = dir.file("m.ckpt").string();
  const auto corpus = write_file(dir, "c.txt", "aa bb cc\ndd ee aa\ncc dd\n");
  REQUIRE(run_cli({"train", "--corpus", corpus.string(), "--embeddings",
                   "trainable:6", "--filters", "4", "--windows", "1,3",
                   "--batch-size", "2", "--steps", "2", "--out", ckpt}) == 0);

  const auto malformed = write_file(dir, "bad.tsv", "5.0\ta\tb\nnot-a-score\tx\ty\n");
  CHECK(run_cli({"eval-sts", "--checkpoint", ckpt, "--pairs",
                 malformed.string()}) == 2);

  CHECK(run_cli({"eval-sts", "--checkpoint", ckpt, "--pairs",
                 dir.file("missing.tsv").string()}) == 2);
  CHECK(run_cli({"train", "--corpus", dir.file("missing.txt").string(),
                 "--embeddings", "trainable:4", "--out", ckpt}) == 2);
}

TEST_CASE("gradcheck subcommand reports and exits 0") {
  CHECK(run_cli({"gradcheck", "--seed", "7", "--coords", "8"}) == 0);
}

TEST_CASE("same-flag reruns are byte-identical") {
  TempDir dir;
  const auto out1 = dir.file("a").string();
  const auto out2 = dir.file("b").string();
  REQUIRE(run_cli({"synth", "--topics", "2", "--per-topic", "12", "--seed",
                   "9", "--out", out1}) == 0);
  REQUIRE(run_cli({"synth", "--topics", "2", "--per-topic", "12", "--seed",
                   "9", "--out", out2}) == 0);
  CHECK(read_file(out1 + ".corpus.txt") == read_file(out2 + ".corpus.txt"));
  CHECK(read_file(out1 + ".pairs.tsv") == read_file(out2 + ".pairs.tsv"));
  CHECK(read_file(out1 + ".labels.tsv") == read_file(out2 + ".labels.tsv"));

  const auto ck1 = dir.file("m1.ckpt").string();
  const auto ck2 = dir.file("m2.ckpt").string();
  const std::vector<std::string> train_flags = {
      "--embeddings", "trainable:6", "--filters", "4", "--windows", "1,3",
      "--batch-size", "4",           "--steps",   "3", "--seed",    "11"};
  auto with = [&](const std::string& corpus, const std::string& out) {
    std::vector<std::string> args = {"train", "--corpus", corpus, "--out", out};
    args.insert(args.end(), train_flags.begin(), train_flags.end());
    return run_cli(args);
  };
  REQUIRE(with(out1 + ".corpus.txt", ck1) == 0);
  REQUIRE(with(out1 + ".corpus.txt", ck2) == 0);
  CHECK(read_file(ck1) == read_file(ck2));
}

TEST_CASE("training pipeline round-trips through eval subcommands") {
  TempDir dir;
  const auto fx = dir.file("fx").string();
  REQUIRE(run_cli({"synth", "--topics", "2", "--per-topic", "10", "--seed",
                   "3", "--out", fx}) == 0);
  const auto ckpt = dir.file("m.ckpt").string();
  REQUIRE(run_cli({"train", "--corpus", fx + ".corpus.txt", "--embeddings",
                   "trainable:8", "--filters", "4", "--windows", "1,3",
                   "--batch-size", "4", "--steps", "4", "--seed", "2", "--out",
                   ckpt}) == 0);
  CHECK(std::filesystem::exists(ckpt + ".metrics.jsonl"));

  CHECK(run_cli({"eval-sts", "--checkpoint", ckpt, "--pairs",
                 fx + ".pairs.tsv"}) == 0);
  CHECK(run_cli({"eval-cls", "--checkpoint", ckpt, "--labeled",
                 fx + ".labels.tsv", "--folds", "5"}) == 0);
  CHECK(run_cli({"embed", "--checkpoint", ckpt, "--corpus", fx + ".corpus.txt",
                 "--out", dir.file("e.jsonl").string()}) == 0);
  CHECK(run_cli({"finetune", "--checkpoint", ckpt, "--pairs", fx + ".pairs.tsv",
                 "--steps", "2", "--out", dir.file("ft.ckpt").string()}) == 0);

  // --no-length-norm trains the literal-sum variant
  CHECK(run_cli({"train", "--corpus", fx + ".corpus.txt", "--embeddings",
                 "trainable:8", "--filters", "4", "--windows", "1,3",
                 "--batch-size", "4", "--steps", "2", "--no-length-norm",
                 "--out", dir.file("nl.ckpt").string()}) == 0);
}

TEST_CASE("contextual sources drive training and evaluation") {
  TempDir dir;
  // two sentences, ids 0 and 1, 3-dim vectors
  const auto ctx = write_file(
      dir, "ctx.jsonl",
      R"({"id": 0, "tokens": ["aa", "bb"], "vectors": [[1,0,0],[0,1,0]]})"
      "\n"
      R"({"id": 1, "tokens": ["cc"], "vectors": [[0,0,1]]})"
      "\n");
  const auto ckpt = dir.file("ctx.ckpt").string();
  REQUIRE(run_cli({"train", "--embeddings", "contextual:" + ctx.string(),
                   "--filters", "3", "--windows", "1", "--batch-size", "2",
                   "--steps", "2", "--out", ckpt}) == 0);

  const auto pairs = write_file(dir, "p.tsv", "5.0\taa bb\taa bb\n0.5\tcc\taa bb\n");
  CHECK(run_cli({"eval-sts", "--checkpoint", ckpt, "--pairs",
                 pairs.string()}) == 0);

  // a pair sentence absent from the contextual store is a data error
  const auto missing = write_file(dir, "p2.tsv", "5.0\tzz\tzz\n1.0\taa bb\tcc\n");
  CHECK(run_cli({"eval-sts", "--checkpoint", ckpt, "--pairs",
                 missing.string()}) == 2);
}

TEST_CASE("static vector sources work end to end") {
  TempDir dir;
  const auto vecs = write_file(dir, "v.txt",
                               "aa 0.5 0.1\nbb -0.2 0.4\ncc 0.9 -0.3\n");
  const auto corpus = write_file(dir, "c.txt", "aa bb\ncc aa\nbb cc aa\n");
  const auto ckpt = dir.file("s.ckpt").string();
  REQUIRE(run_cli({"train", "--corpus", corpus.string(), "--embeddings",
                   "static:" + vecs.string(), "--filters", "3", "--windows",
                   "1,3", "--batch-size", "2", "--steps", "2", "--out",
                   ckpt}) == 0);
  CHECK(run_cli({"embed", "--checkpoint", ckpt, "--corpus", corpus.string(),
                 "--out", dir.file("se.jsonl").string()}) == 0);
}

}  // TEST_SUITE
