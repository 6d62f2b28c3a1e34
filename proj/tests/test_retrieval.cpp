#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "femur/image.hpp"
#include "femur/retrieval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace femur;
using doctest::Approx;
using femur::testing::TempDir;
using femur::testing::uniform_int;

namespace {

struct Pool {
  std::vector<std::vector<float>> vectors;
  std::vector<int> labels;
  std::vector<std::string> refs;
};

// Small integer coordinates make distances exact and ties common.
Pool integer_pool(Rng& rng, int n, int dim, int k) {
  Pool p;
  for (int i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(uniform_int(rng, -3, 3));
    p.vectors.push_back(v);
    p.labels.push_back(i < k ? i : uniform_int(rng, 0, k - 1));
    p.refs.push_back("img" + std::to_string(i));
  }
  return p;
}

std::vector<int> brute_force(const Pool& p, const std::vector<float>& q, int k) {
  std::vector<std::pair<double, int>> d;
  for (std::size_t i = 0; i < p.vectors.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double t = static_cast<double>(p.vectors[i][j]) - q[j];
      s += t * t;
    }
    d.push_back({s, static_cast<int>(i)});
  }
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(d[i].second);
  return out;
}

RetrievalResult ranked(const std::vector<int>& labels) {
  RetrievalResult r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    r.items.push_back({static_cast<int>(i), "x" + std::to_string(i), static_cast<double>(i),
                       labels[i]});
  }
  return r;
}

}  // namespace

TEST_CASE("exact neighbors with index tie-break, serial and parallel") {
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = uniform_int(rng, 3, 40), dim = uniform_int(rng, 1, 4);
    const Pool p = integer_pool(rng, n, dim, 3);
    const auto index = build_index(p.vectors, p.labels, p.refs, "m");
    const int k = uniform_int(rng, 1, n);
    std::vector<float> q(dim);
    for (auto& x : q) x = static_cast<float>(uniform_int(rng, -3, 3));
    const auto want = brute_force(p, q, k);
    for (auto mode : {ExecutionMode::kReference, ExecutionMode::kParallel}) {
      const auto got = query(index, q, k, "q", mode);
      REQUIRE(got.items.size() == static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) {
        CHECK(got.items[i].index == want[i]);
        CHECK(got.items[i].label == p.labels[want[i]]);
        CHECK(got.items[i].item_ref == p.refs[want[i]]);
      }
    }
  }
}

TEST_CASE("batch queries equal single queries") {
  Rng rng(2);
  const Pool p = integer_pool(rng, 25, 3, 3);
  const auto index = build_index(p.vectors, p.labels, p.refs, "m");
  std::vector<float> qs;
  for (int i = 0; i < 5 * 3; ++i) qs.push_back(static_cast<float>(uniform_int(rng, -3, 3)));
  const auto batch = query_batch(index, qs, 7, {}, ExecutionMode::kParallel);
  REQUIRE(batch.size() == 5);
  for (int i = 0; i < 5; ++i) {
    const auto single = query(index, std::span<const float>(qs).subspan(i * 3, 3), 7);
    for (int j = 0; j < 7; ++j) CHECK(batch[i].items[j].index == single.items[j].index);
  }
}

TEST_CASE("query validation") {
  const auto index = build_index({{0, 0}, {1, 1}}, {0, 1}, {"a", "b"}, "m");
  const std::vector<float> q{0, 0};
  CHECK_THROWS_AS(query(index, q, 0), std::invalid_argument);
  CHECK_THROWS_AS(query(index, q, 3), std::invalid_argument);
  const std::vector<float> bad{0, 0, 0};
  CHECK_THROWS_AS(query(index, bad, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_index({{0, 0}, {1}}, {0, 1}, {"a", "b"}, "m"), std::invalid_argument);
  CHECK_THROWS_AS(build_index({{0, NAN}}, {0}, {"a"}, "m"), std::invalid_argument);
}

TEST_CASE("index file round trip and corruption") {
  Rng rng(3);
  const Pool p = integer_pool(rng, 10, 4, 3);
  const auto index = build_index(p.vectors, p.labels, p.refs, "model42", {"n", "a", "b"});
  TempDir dir;
  index.save(dir / "index.bin");
  const auto back = EmbeddingIndex::load(dir / "index.bin");
  CHECK(back.vectors() == index.vectors());
  CHECK(back.labels() == index.labels());
  CHECK(back.item_refs() == index.item_refs());
  CHECK(back.model_id() == "model42");
  CHECK(back.label_names() == index.label_names());
  CHECK(back.checksum() == index.checksum());
  CHECK(build_index(p.vectors, p.labels, p.refs, "model42", {"n", "a", "b"}).checksum() ==
        index.checksum());

  auto bytes = index.serialize();
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(EmbeddingIndex::deserialize(flipped), IndexError);
  CHECK_THROWS_AS(EmbeddingIndex::deserialize(std::span(bytes).first(bytes.size() - 5)),
                  IndexError);
  std::vector<std::uint8_t> junk(64, 7);
  CHECK_THROWS_AS(EmbeddingIndex::deserialize(junk), IndexError);
  CHECK_THROWS(EmbeddingIndex::load(dir / "missing.bin"));
}

TEST_CASE("hand-computed eleven-point curve") {
  const auto c = eleven_point_pr({ranked({1, 0, 1, 0, 0})}, {1}, {{1, 2}}, {1, 2, 3, 4, 5});
  REQUIRE(c.overall.size() == 11);
  CHECK(c.overall[0] == 1.0);
  CHECK(c.overall[5] == 1.0);
  CHECK(c.overall[6] == Approx(2.0 / 3));
  CHECK(c.overall[10] == Approx(2.0 / 3));
  CHECK(c.map == Approx(28.0 / 33));
  CHECK(c.recall_levels[3] == 0.3);
  CHECK(c.precision_at_k[2] == Approx(2.0 / 3));
  CHECK(c.recall_at_k[2] == 1.0);
}

TEST_CASE("macro mAP averages classes, not queries") {
  const auto c = eleven_point_pr({ranked({0, 0}), ranked({0, 0}), ranked({1, 1})}, {0, 0, 1},
                                 {{0, 2}, {1, 4}}, {1, 2});
  CHECK(c.per_class_map[0] == 1.0);
  CHECK(c.per_class_map[1] == Approx(6.0 / 11));
  CHECK(c.map == Approx((1.0 + 6.0 / 11) / 2));
  CHECK(c.overall_map == Approx((2.0 + 6.0 / 11) / 3));
}

TEST_CASE("padding past the largest k does not change the curve") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> labels = femur::testing::random_labels(rng, uniform_int(rng, 5, 20), 2);
    const std::vector<int> ks{1, 3, 5};
    const auto a = eleven_point_pr({ranked(labels)}, {1}, {{1, 40}}, ks);
    for (int i = 0; i < 5; ++i) labels.push_back(uniform_int(rng, 0, 1));
    const auto b = eleven_point_pr({ranked(labels)}, {1}, {{1, 40}}, ks);
    CHECK(a.overall == b.overall);
  }
}

TEST_CASE("recall is monotone in k and precision/recall at k") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto labels = femur::testing::random_labels(rng, uniform_int(rng, 1, 25), 3);
    const int truth = uniform_int(rng, 0, 2);
    const int total = static_cast<int>(std::count(labels.begin(), labels.end(), truth)) + 1;
    const auto curve = recall_curve(ranked(labels), truth, total);
    REQUIRE(curve.size() == labels.size());
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i] >= curve[i - 1]);
  }
  const auto pr = precision_recall_at_k({ranked({1, 0, 1}), ranked({0, 0, 0})}, {1, 0}, 2,
                                        {{0, 4}, {1, 2}});
  CHECK(pr.precision == Approx(0.75));
  CHECK(pr.recall == Approx((0.5 + 0.5) / 2));
  CHECK_THROWS_AS(precision_recall_at_k({ranked({1})}, {1}, 2, {{1, 1}}), std::invalid_argument);
}

TEST_CASE("raw pixel baseline") {
  Rng rng(6);
  std::vector<Image> imgs;
  for (int i = 0; i < 4; ++i) imgs.push_back(femur::testing::random_image(rng, 32, 32));
  std::vector<const Image*> ptrs;
  for (auto& i : imgs) ptrs.push_back(&i);
  const auto index = build_raw_pixel_index(ptrs, {0, 1, 0, 1}, {"a", "b", "c", "d"}, 16);
  CHECK(index.dim() == 256);
  const auto r = raw_pixel_baseline(imgs[2], index, 2);
  CHECK(r.items[0].index == 2);
  CHECK(r.items[0].distance == 0.0);
  CHECK(raw_pixel_vector(imgs[0], 16).size() == 256);
}

TEST_CASE("curve json round trip") {
  const auto c = eleven_point_pr({ranked({1, 0, 1, 0, 0}), ranked({0, 1})}, {1, 0},
                                 {{0, 3}, {1, 2}}, {1, 2, 5});
  const auto back = eleven_point_from_json(to_json(c));
  CHECK(back.map == c.map);
  CHECK(back.per_class == c.per_class);
  CHECK(back.classes == c.classes);
  CHECK(pr_curve_csv(c).find("recall") != std::string::npos);
}
