#include <cmath>
#include <vector>

#include "doctest.h"
#include "soundstage/common.h"
#include "soundstage/datagen.h"
#include "soundstage/eval.h"
#include "soundstage/rng.h"
#include "test_support.h"

using namespace soundstage;
using namespace soundstage::eval;

namespace {

std::vector<Tensor> randn_set(int n, int e, Rng& rng, double stddev = 1.0) {
  std::vector<Tensor> out;
  for (int i = 0; i < n; ++i) {
    Tensor v = Tensor::zeros({e});
    for (double& x : v.data()) x = stddev * rng.normal();
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("frechet_distance is zero on identical sets and symmetric") {
  Rng rng(3);
  auto a = randn_set(40, 6, rng);
  auto b = randn_set(40, 6, rng);
  CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(std::abs(frechet_distance(a, a)) < 1e-6);
  CHECK(frechet_distance(a, b) ==
        doctest::Approx(frechet_distance(b, a)).epsilon(1e-9));
  CHECK(frechet_distance(a, b) > 0.0);
}

TEST_CASE("frechet_distance unit mean shift with equal covariance gives 1") {
  Rng rng(7);
  auto a = randn_set(10, 6, rng);
  std::vector<Tensor> b;
  for (const auto& v : a) {
    Tensor s = Tensor::zeros({6});
    s.data() = v.data();
    s.data()[0] += 1.0;  // identical covariance, mean moved by e0
    b.push_back(s);
  }
  bool ridged = true;
  double d = frechet_distance(a, b, &ridged);
  CHECK(!ridged);  // 10 >= E+1 = 7
  CHECK(d == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("frechet_distance matches the 1-D closed form exactly") {
  // A = {0,2}: mean 1, var 2. B = {4,8}: mean 6, var 8 (n-1 divisor).
  // d = (1-6)^2 + 2 + 8 - 2*sqrt(16) = 27.
  std::vector<Tensor> a = {Tensor::from_data({1}, {0.0}), Tensor::from_data({1}, {2.0})};
  std::vector<Tensor> b = {Tensor::from_data({1}, {4.0}), Tensor::from_data({1}, {8.0})};
  CHECK(frechet_distance(a, b) == doctest::Approx(27.0).epsilon(1e-9));
}

TEST_CASE("frechet_distance Monte-Carlo N(0,I) vs N(0,4I) in 2-D") {
  Rng rng(2024);
  auto a = randn_set(10000, 2, rng, 1.0);
  auto b = randn_set(10000, 2, rng, 2.0);
  // Tr(I + 4I - 2*(I*4I)^{1/2}) = 2 + 8 - 2*4 = 2
  CHECK(frechet_distance(a, b) == doctest::Approx(2.0).epsilon(0.05));
  CHECK(std::abs(frechet_distance(a, b) - 2.0) < 0.1);
}

TEST_CASE("frechet_distance ridges rank-deficient fits and reports it") {
  Rng rng(5);
  auto small = randn_set(3, 6, rng);   // 3 < E+1
  auto large = randn_set(12, 6, rng);  // 12 >= E+1
  bool ridged = false;
  frechet_distance(small, large, &ridged);
  CHECK(ridged);
  frechet_distance(large, large, &ridged);
  CHECK(!ridged);
}

TEST_CASE("frechet_distance input validation") {
  Rng rng(9);
  auto a = randn_set(5, 4, rng);
  CHECK_THROWS_AS(frechet_distance({}, a), InputError);
  CHECK_THROWS_AS(frechet_distance(a, {}), InputError);
  CHECK_THROWS_AS(frechet_distance(a, randn_set(5, 3, rng)), InputError);
}

TEST_CASE("clap_score closed forms") {
  Tensor e0 = Tensor::from_data({3}, {1.0, 0.0, 0.0});
  Tensor e1 = Tensor::from_data({3}, {0.0, 1.0, 0.0});
  CHECK(clap_score({e0, e1}, {e0, e1}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(clap_score({e0}, {e1}) == doctest::Approx(0.0).epsilon(1e-12));

  // mixed: one aligned pair, one orthogonal pair
  CHECK(clap_score({e0, e0}, {e0, e1}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("clap_score is scale invariant") {
  Rng rng(12);
  auto a = randn_set(6, 8, rng);
  auto t = randn_set(6, 8, rng);
  double base = clap_score(a, t);
  std::vector<Tensor> a2, t2;
  for (const auto& v : a) {
    Tensor s = Tensor::zeros({8});
    for (size_t i = 0; i < 8; ++i) s.data()[i] = 3.7 * v.data()[i];
    a2.push_back(s);
  }
  for (const auto& v : t) {
    Tensor s = Tensor::zeros({8});
    for (size_t i = 0; i < 8; ++i) s.data()[i] = 0.2 * v.data()[i];
    t2.push_back(s);
  }
  CHECK(clap_score(a2, t2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("clap_score concentrates near zero for random unit vectors") {
  Rng rng(88);
  auto a = randn_set(1000, 32, rng);
  auto t = randn_set(1000, 32, rng);
  CHECK(std::abs(clap_score(a, t)) < 0.1);
}

TEST_CASE("clap_score validation") {
  Rng rng(1);
  auto a = randn_set(3, 4, rng);
  auto t = randn_set(2, 4, rng);
  CHECK_THROWS_AS(clap_score(a, t), InputError);
  CHECK_THROWS_AS(clap_score({}, {}), InputError);
  CHECK_THROWS_AS(clap_score(randn_set(1, 4, rng), randn_set(1, 5, rng)), InputError);
}

namespace {

ManifestEntry entry(const std::string& id, const std::string& ref, const char* hyp) {
  ManifestEntry e;
  e.id = id;
  e.transcript = ref;
  if (hyp) e.hypothesis_transcript = hyp;
  return e;
}

}  // namespace

TEST_CASE("wer_report exact matches give zero") {
  auto r = wer_report({entry("a", "the quick fox", "the quick fox"),
                       entry("b", "hello there", "hello there")});
  CHECK(r.corpus_wer == 0.0);
  CHECK(r.skipped == 0);
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0].wer == 0.0);
  CHECK(r.entries[1].wer == 0.0);
}

TEST_CASE("wer_report pools edits over the corpus") {
  auto r = wer_report({entry("a", "a b", "a x"), entry("b", "c", "c")});
  REQUIRE(r.entries.size() == 2);
  CHECK(r.entries[0].edits == 1);
  CHECK(r.entries[0].ref_words == 2);
  CHECK(r.entries[0].wer == doctest::Approx(0.5));
  CHECK(r.entries[1].edits == 0);
  CHECK(r.corpus_wer == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  // pooling, not averaging: the mean of per-entry WERs would be 0.25
  CHECK(r.corpus_wer != doctest::Approx(0.25));
}

TEST_CASE("wer_report single entry equals its own WER") {
  auto r = wer_report({entry("only", "one two three four", "one two zzz four")});
  REQUIRE(r.entries.size() == 1);
  CHECK(r.corpus_wer == doctest::Approx(r.entries[0].wer));
  CHECK(r.corpus_wer == doctest::Approx(0.25));
}

TEST_CASE("wer_report skips entries without hypotheses") {
  auto r = wer_report({entry("a", "x y", "x y"), entry("b", "p q", nullptr),
                       entry("c", "m", nullptr)});
  CHECK(r.skipped == 2);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.corpus_wer == 0.0);

  auto empty = wer_report({entry("b", "p q", nullptr)});
  CHECK(empty.skipped == 1);
  CHECK(empty.entries.empty());
  CHECK(empty.corpus_wer == 0.0);
}

TEST_CASE("wer_report agrees with a brute-force pooled oracle") {
  std::vector<ManifestEntry> ms = {
      entry("1", "the cat sat on the mat", "the cat sat on mat"),
      entry("2", "a stitch in time", "a stitch in in time"),
      entry("3", "all good things", "all bad things end"),
      entry("4", "one", "two"),
  };
  auto r = wer_report(ms);
  long long edits = 0, words = 0;
  for (const auto& m : ms) {
    auto c = datagen::word_edit_counts(m.transcript, *m.hypothesis_transcript);
    edits += c.edits;
    words += c.ref_words;
  }
  CHECK(r.corpus_wer ==
        doctest::Approx(static_cast<double>(edits) / words).epsilon(1e-12));
}
