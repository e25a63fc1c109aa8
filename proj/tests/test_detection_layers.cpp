#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dod/detection_layers.hpp"
#include "dod/ops.hpp"
#include "test_util.hpp"

using namespace dod;

namespace {

RoiBatch make_batch(const std::vector<Tensor>& maps, const std::vector<double>& scores) {
  RoiBatch b;
  for (const Tensor& m : maps) b.maps.emplace_back(m, true);
  b.scores = scores;
  b.source_boxes.assign(maps.size(), Box(0, 0, 1, 1));
  return b;
}

}  // namespace

TEST_CASE("Box invariants") {
  CHECK_THROWS_AS(Box(3, 0, 3, 5), DimensionError);
  CHECK_THROWS_AS(Box(0, 5, 4, 2), DimensionError);
  Box c = Box::clipped(-3, -1, 20, 9, 16, 8);
  CHECK(c.x0 == 0);
  CHECK(c.y0 == 0);
  CHECK(c.x1 == 16);
  CHECK(c.y1 == 8);
  CHECK(Box(0, 0, 4, 2).area() == 8.0);
  Box s = Box(1, 2, 3, 4).scaled(0.5);
  CHECK(s == Box(0.5, 1, 1.5, 2));
}

TEST_CASE("roi_pool: whole map at map resolution is the identity") {
  std::mt19937_64 rng(31);
  Tensor m = oracle::random_tensor({2, 5, 5}, rng);
  Value out = roi_pool(Value(m), Box(0, 0, 5, 5), 5, 5);
  CHECK(out.val().data == m.data);
}

TEST_CASE("roi_pool: constant map gives constant output") {
  Value out = roi_pool(Value(Tensor::full({3, 8, 8}, 4.5)), Box(1.3, 0.7, 6.2, 7.9), 6, 6);
  for (double v : out.val().data) CHECK(v == 4.5);
}

TEST_CASE("roi_pool: matches subwindow-enumeration oracle") {
  std::mt19937_64 rng(32);
  Tensor m = oracle::random_tensor({1, 7, 7}, rng);
  Value out = roi_pool(Value(m), Box(0, 0, 7, 7), 6, 6);
  Tensor exp = oracle::roi_max_pool(m, 0, 0, 7, 7, 6, 6);
  REQUIRE(out.val().shape == exp.shape);
  for (size_t i = 0; i < exp.data.size(); ++i) CHECK(out.val().data[i] == exp.data[i]);

  for (int trial = 0; trial < 50; ++trial) {
    Tensor t = oracle::random_tensor({2, 9, 9}, rng);
    const double x0 = std::floor(rng() % 4), y0 = std::floor(rng() % 4);
    const double x1 = x0 + 2 + static_cast<double>(rng() % 5), y1 = y0 + 2 + static_cast<double>(rng() % 5);
    Value got = roi_pool(Value(t), Box(x0, y0, std::min(x1, 9.0), std::min(y1, 9.0)), 4, 4);
    Tensor exp2 = oracle::roi_max_pool(t, x0, y0, std::min(x1, 9.0), std::min(y1, 9.0), 4, 4);
    for (size_t i = 0; i < exp2.data.size(); ++i) CHECK(got.val().data[i] == exp2.data[i]);
  }
}

TEST_CASE("roi_pool: degenerate roi is clamped and counted, not an error") {
  std::mt19937_64 rng(33);
  Tensor m = oracle::random_tensor({1, 8, 8}, rng);
  const uint64_t before = roi_pool_degenerate_count().load();
  Value out = roi_pool(Value(m), Box(3.1, 3.1, 3.4, 3.4), 6, 6);
  CHECK(roi_pool_degenerate_count().load() > before);
  CHECK(out.val().shape == Shape{1, 6, 6});
  CHECK(out.val().all_finite());
}

TEST_CASE("roi_pool: backward routes gradient to argmax positions") {
  Tensor m = Tensor::zeros({1, 4, 4});
  m.at(0, 1, 2) = 5.0;
  Value in(m, true);
  sum(roi_pool(in, Box(0, 0, 4, 4), 1, 1)).backward();
  CHECK(in.grad().at(0, 1, 2) == 1.0);
  double total = 0;
  for (double v : in.grad().data) total += v;
  CHECK(total == 1.0);
}

TEST_CASE("batch_pool: N=1 returns the input map") {
  std::mt19937_64 rng(34);
  Tensor m = oracle::random_tensor({3, 4, 4}, rng);
  RoiBatch b = make_batch({m}, {0.5});
  CHECK(batch_pool(b).val().data == m.data);
}

TEST_CASE("batch_pool: a dominating map wins everywhere") {
  std::mt19937_64 rng(35);
  Tensor lo = oracle::random_tensor({2, 3, 3}, rng, -1, 0);
  Tensor hi = oracle::random_tensor({2, 3, 3}, rng, 1, 2);
  RoiBatch b = make_batch({lo, hi}, {0.2, 0.9});
  CHECK(batch_pool(b).val().data == hi.data);
}

TEST_CASE("batch_pool: matches elementwise-max oracle and dominates inputs") {
  std::mt19937_64 rng(36);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Tensor> maps;
    for (int l = 0; l < 3; ++l) maps.push_back(oracle::random_tensor({4, 3, 3}, rng));
    RoiBatch b = make_batch(maps, {0.1, 0.2, 0.3});
    Tensor got = batch_pool(b).val();
    Tensor exp = oracle::elementwise_max(maps);
    CHECK(got.data == exp.data);
    for (size_t i = 0; i < got.data.size(); ++i) {
      bool attained = false;
      for (const Tensor& m : maps) {
        CHECK(got.data[i] >= m.data[i]);
        attained |= got.data[i] == m.data[i];
      }
      CHECK(attained);
    }
  }
}

TEST_CASE("batch_pool: downstream backward deposits exactly zero gradient") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Tensor> maps;
    for (int l = 0; l < 3; ++l) maps.push_back(oracle::random_tensor({2, 3, 3}, rng));
    RoiBatch b = make_batch(maps, {0.4, 0.5, 0.6});
    Value pooled = batch_pool(b);

    // small event-head-like tail: concat with a trainable map, conv, sum
    Value own(oracle::random_tensor({2, 3, 3}, rng), true);
    Value w(oracle::random_tensor({1, 4, 3, 3}, rng), true);
    Value loss = sum(conv2d(channel_concat({own, pooled}), w, Value(Tensor::zeros({1}), true), 1, 1));
    loss.backward();

    for (Value& m : b.maps)
      for (double g : m.grad().data) CHECK(g == 0.0);
    double own_grad_mag = 0;
    for (double g : own.grad().data) own_grad_mag += std::abs(g);
    CHECK(own_grad_mag > 0.0);
  }
}

TEST_CASE("batch_pool: shape disagreement is an error") {
  RoiBatch b = make_batch({Tensor::zeros({2, 3, 3}), Tensor::zeros({2, 4, 3})}, {0.1, 0.2});
  CHECK_THROWS_AS(batch_pool(b), DimensionError);
}

TEST_CASE("channel_concat: 3 x 256 channels -> 768, order preserved") {
  std::vector<Value> maps;
  for (int i = 0; i < 3; ++i) maps.emplace_back(Tensor::full({256, 6, 6}, static_cast<double>(i)));
  Value out = channel_concat(maps);
  CHECK(out.shape() == Shape{768, 6, 6});
  CHECK(out.val().at(0, 0, 0) == 0.0);
  CHECK(out.val().at(256, 0, 0) == 1.0);
  CHECK(out.val().at(512, 0, 0) == 2.0);
}

TEST_CASE("channel_concat: single input is the identity") {
  std::mt19937_64 rng(38);
  Tensor m = oracle::random_tensor({5, 2, 2}, rng);
  CHECK(channel_concat({Value(m)}).val().data == m.data);
}

TEST_CASE("channel_concat: concat then split recovers inputs; backward splits by range") {
  std::mt19937_64 rng(39);
  Tensor a = oracle::random_tensor({2, 3, 3}, rng);
  Tensor b = oracle::random_tensor({3, 3, 3}, rng);
  Value va(a, true), vb(b, true);
  Value cat = channel_concat({va, vb});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) CHECK(cat.val().at(c, y, x) == a.at(c, y, x));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) CHECK(cat.val().at(2 + c, y, x) == b.at(c, y, x));

  sum(cat).backward();
  for (double g : va.grad().data) CHECK(g == 1.0);
  for (double g : vb.grad().data) CHECK(g == 1.0);

  CHECK_THROWS_AS(channel_concat({Value(a), Value(Tensor::zeros({1, 2, 3}))}), DimensionError);
}

TEST_CASE("roi_sampler: stated tie rule on (0.9, 0.1, 0.8, 0.8, 0.2)") {
  std::vector<Tensor> maps;
  std::vector<Box> boxes;
  for (int i = 0; i < 5; ++i) {
    maps.push_back(Tensor::full({1, 1, 1}, static_cast<double>(i)));
    boxes.emplace_back(i, 0, i + 1, 1);
  }
  RoiBatch b = make_batch(maps, {0.9, 0.1, 0.8, 0.8, 0.2});
  b.source_boxes = boxes;
  RoiBatch top = roi_sampler(b, 3);
  REQUIRE(top.size() == 3);
  // descending score; tie between original indices 2 and 3 resolved to 2 first
  CHECK(top.maps[0].val().data[0] == 0.0);
  CHECK(top.maps[1].val().data[0] == 2.0);
  CHECK(top.maps[2].val().data[0] == 3.0);
  CHECK(top.scores == std::vector<double>{0.9, 0.8, 0.8});
  CHECK(top.source_boxes[1] == Box(2, 0, 3, 1));
}

TEST_CASE("roi_sampler: k >= N returns all entries sorted; k clamps") {
  RoiBatch b = make_batch({Tensor::zeros({1, 1, 1}), Tensor::zeros({1, 1, 1})}, {0.3, 0.7});
  RoiBatch all = roi_sampler(b, 2);
  CHECK(all.size() == 2);
  CHECK(all.scores == std::vector<double>{0.7, 0.3});
  CHECK(roi_sampler(b, 3).size() == 2);
}

TEST_CASE("roi_sampler: selected scores equal top-k of a full sort, 1000 random cases") {
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 12);
    const int k = 1 + static_cast<int>(rng() % 6);
    std::vector<Tensor> maps;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      maps.push_back(Tensor::full({1, 1, 1}, static_cast<double>(i)));
      // coarse grid to force frequent ties
      scores.push_back(std::round(dist(rng) * 4.0) / 4.0);
    }
    RoiBatch b = make_batch(maps, scores);
    RoiBatch top = roi_sampler(b, k);
    REQUIRE(top.size() == static_cast<size_t>(std::min(k, n)));

    // sort oracle: stable sort of (score, index) by descending score
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int c) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(c)]; });
    for (size_t i = 0; i < top.size(); ++i) {
      const int idx = order[i];
      CHECK(top.maps[i].val().data[0] == static_cast<double>(idx));
      CHECK(top.scores[i] == scores[static_cast<size_t>(idx)]);
    }
  }
}

TEST_CASE("RoiBatch::validate rejects inconsistent batches") {
  RoiBatch empty;
  CHECK_THROWS_AS(empty.validate(), DimensionError);
  RoiBatch b = make_batch({Tensor::zeros({1, 2, 2})}, {0.5});
  b.scores.push_back(0.9);
  CHECK_THROWS_AS(b.validate(), DimensionError);
}
