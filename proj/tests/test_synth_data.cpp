#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "dod/evaluation.hpp"
#include "dod/synth_data.hpp"
#include "test_util.hpp"

using namespace dod;
namespace fs = std::filesystem;

namespace {

// Annotation-free separability score: fraction of pixels with a strong
// channel spread. Object glyphs are saturated primaries; backgrounds and
// distractors are near-gray.
double color_spread_score(const Tensor& img) {
  const int h = img.shape[1], w = img.shape[2];
  int hot = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const double spread = std::max({r, g, b}) - std::min({r, g, b});
      if (spread > 0.55) ++hot;
    }
  return static_cast<double>(hot) / (h * w);
}

}  // namespace

TEST_CASE("generate_scene: benign scenes carry no annotated objects") {
  SceneConfig cfg;
  std::mt19937_64 rng(61);
  for (int i = 0; i < 10; ++i) {
    auto [img, ann] = generate_scene(rng, kEventBenign, cfg);
    CHECK(ann.event_label == kEventBenign);
    CHECK(ann.rigid.empty());
    CHECK(ann.nonrigid.empty());
    CHECK(img.shape == Shape{3, 64, 64});
    CHECK(img.all_finite());
    for (double v : img.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("generate_scene: same seed reproduces identical bytes") {
  SceneConfig cfg;
  std::mt19937_64 a(62), b(62);
  auto [ia, aa] = generate_scene(a, kEventMalicious, cfg);
  auto [ib, ab] = generate_scene(b, kEventMalicious, cfg);
  CHECK(ia.data == ib.data);
  CHECK(aa.rigid.size() == ab.rigid.size());
  for (size_t i = 0; i < aa.rigid.size(); ++i) {
    CHECK(aa.rigid[i].first == ab.rigid[i].first);
    CHECK(aa.rigid[i].second == ab.rigid[i].second);
  }
}

TEST_CASE("generate_scene: malicious scenes always contain objects, in bounds") {
  SceneConfig cfg;
  std::mt19937_64 rng(63);
  int with_objects = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    auto [img, ann] = generate_scene(rng, kEventMalicious, cfg);
    if (!ann.rigid.empty() || !ann.nonrigid.empty()) ++with_objects;
    for (const auto& [cls, b] : ann.rigid) {
      CHECK(cls >= 0);
      CHECK(cls <= 2);
      CHECK(b.x0 >= 0);
      CHECK(b.y0 >= 0);
      CHECK(b.x1 <= 64);
      CHECK(b.y1 <= 64);
    }
    for (const auto& [cls, b] : ann.nonrigid) {
      CHECK(cls >= 0);
      CHECK(cls <= 1);
      CHECK(b.x1 <= 64);
      CHECK(b.y1 <= 64);
    }
  }
  CHECK(with_objects == n);
}

TEST_CASE("generate_scene: oversized rigid config is an error") {
  SceneConfig cfg;
  cfg.rigid_sizes = {128};
  std::mt19937_64 rng(64);
  CHECK_THROWS_AS(generate_scene(rng, kEventMalicious, cfg), DimensionError);
}

TEST_CASE("oracle classifier over generated images reaches AP >= 0.95") {
  SceneConfig cfg;
  std::vector<ScoredPrediction> preds;
  for (int i = 0; i < 200; ++i) {
    std::mt19937_64 rng(1000 + static_cast<uint64_t>(i));
    const int label = (i % 2 == 0) ? kEventBenign : kEventMalicious;
    auto [img, ann] = generate_scene(rng, label, cfg);
    preds.push_back({color_spread_score(img), label == kEventMalicious});
  }
  CHECK(average_precision(preds) >= 0.95);
}

TEST_CASE("propose_rois: non-rigid mode yields exactly 5 in-bounds boxes") {
  ProposalConfig cfg;
  Tensor img = Tensor::zeros({3, 64, 64});
  std::vector<Box> boxes = propose_rois(img, ProposalMode::nonrigid, cfg);
  REQUIRE(boxes.size() == 5);
  CHECK(boxes[0] == Box(0, 0, 64, 64));
  for (const Box& b : boxes) {
    CHECK(b.x0 >= 0);
    CHECK(b.y0 >= 0);
    CHECK(b.x1 <= 64);
    CHECK(b.y1 <= 64);
  }

  // odd image size still covers the full extent
  Tensor odd = Tensor::zeros({3, 9, 7});
  std::vector<Box> ob = propose_rois(odd, ProposalMode::nonrigid, cfg);
  REQUIRE(ob.size() == 5);
  CHECK(ob[4].x1 == 7);
  CHECK(ob[4].y1 == 9);
}

TEST_CASE("propose_rois: rigid window count matches enumeration oracle") {
  ProposalConfig cfg;
  Tensor img = Tensor::zeros({3, 64, 64});
  std::vector<Box> boxes = propose_rois(img, ProposalMode::rigid, cfg);

  int64_t expected = 0;
  for (int s : cfg.scales)
    for (int y = 0; y + s <= 64; y += s / 2)
      for (int x = 0; x + s <= 64; x += s / 2) ++expected;
  CHECK(static_cast<int64_t>(boxes.size()) == expected);
  CHECK(expected == 225 + 49 + 9);
  CHECK(sliding_window_count(64, 64, cfg) == expected);

  for (const Box& b : boxes) {
    CHECK(b.x0 >= 0);
    CHECK(b.y0 >= 0);
    CHECK(b.x1 <= 64);
    CHECK(b.y1 <= 64);
  }
  // determinism
  CHECK(propose_rois(img, ProposalMode::rigid, cfg) == boxes);
}

TEST_CASE("proposal recall over gt rigid boxes >= 0.9 at IoU 0.5") {
  SceneConfig scfg;
  ProposalConfig pcfg;
  Tensor probe = Tensor::zeros({3, 64, 64});
  std::vector<Box> props = propose_rois(probe, ProposalMode::rigid, pcfg);
  int total = 0, recalled = 0;
  for (int i = 0; i < 100; ++i) {
    std::mt19937_64 rng(2000 + static_cast<uint64_t>(i));
    auto [img, ann] = generate_scene(rng, kEventMalicious, scfg);
    for (const auto& [cls, gt] : ann.rigid) {
      ++total;
      for (const Box& p : props)
        if (iou(p, gt) > 0.5) {
          ++recalled;
          break;
        }
    }
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(recalled) / total >= 0.9);
}

TEST_CASE("jittered_gt_boxes: count and bounds") {
  SceneConfig scfg;
  ProposalConfig pcfg;
  std::mt19937_64 rng(65);
  auto [img, ann] = generate_scene(rng, kEventMalicious, scfg);
  std::vector<Box> jit = jittered_gt_boxes(ann, pcfg, 64, 64, rng);
  CHECK(jit.size() <= ann.rigid.size() * static_cast<size_t>(pcfg.gt_jitter_count));
  for (const Box& b : jit) {
    CHECK(b.x0 >= 0);
    CHECK(b.x1 <= 64);
    CHECK(b.y1 <= 64);
    // jitter keeps substantial overlap with some gt box
    double best = 0;
    for (const auto& [cls, g] : ann.rigid) best = std::max(best, iou(b, g));
    CHECK(best > 0.3);
  }
}

TEST_CASE("generate_dataset: determinism, balance, and per-image streams") {
  SceneConfig cfg;
  Dataset a = generate_dataset(77, 10, 6, cfg);
  Dataset b = generate_dataset(77, 10, 6, cfg);
  REQUIRE(a.train.size() == 10);
  REQUIRE(a.test.size() == 6);
  int malicious = 0;
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].image.data == b.train[i].image.data);
    malicious += a.train[i].ann.event_label == kEventMalicious ? 1 : 0;
  }
  CHECK(malicious == 5);
  // train and test streams differ
  CHECK(a.train[0].image.data != a.test[0].image.data);
  // a different seed changes content
  Dataset c = generate_dataset(78, 10, 6, cfg);
  CHECK(a.train[1].image.data != c.train[1].image.data);
}

TEST_CASE("dataset write/read round-trip is lossless") {
  const std::string dir = (fs::temp_directory_path() / "dod_ds_roundtrip").string();
  fs::remove_all(dir);
  SceneConfig cfg;
  Dataset ds = generate_dataset(99, 4, 2, cfg);
  write_dataset(dir, ds);
  Dataset rd = read_dataset(dir);

  CHECK(rd.manifest.n_train == 4);
  CHECK(rd.manifest.seed == 99);
  REQUIRE(rd.train.size() == ds.train.size());
  for (size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(rd.train[i].file == ds.train[i].file);
    CHECK(rd.train[i].image.data == ds.train[i].image.data);
    CHECK(rd.train[i].ann.event_label == ds.train[i].ann.event_label);
    REQUIRE(rd.train[i].ann.rigid.size() == ds.train[i].ann.rigid.size());
    for (size_t j = 0; j < ds.train[i].ann.rigid.size(); ++j) {
      CHECK(rd.train[i].ann.rigid[j].first == ds.train[i].ann.rigid[j].first);
      CHECK(rd.train[i].ann.rigid[j].second == ds.train[i].ann.rigid[j].second);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset read errors are structured and name the offending file") {
  const std::string dir = (fs::temp_directory_path() / "dod_ds_errors").string();
  fs::remove_all(dir);
  SceneConfig cfg;
  Dataset ds = generate_dataset(100, 2, 2, cfg);
  write_dataset(dir, ds);

  SUBCASE("missing annotation file") {
    fs::remove(dir + "/train/annotations.json");
    try {
      read_dataset(dir);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("train/annotations.json") != std::string::npos);
    }
  }
  SUBCASE("malformed json") {
    std::ofstream os(dir + "/manifest.json");
    os << "{ not json";
    os.close();
    CHECK_THROWS_AS(read_dataset(dir), ParseError);
  }
  SUBCASE("out-of-bounds box rejected") {
    std::ifstream is(dir + "/train/annotations.json");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    // inject an impossible annotation entry
    const std::string bad =
        "[{\"file\":\"img_00000.dten\",\"event\":\"malicious\","
        "\"rigid\":[{\"cls\":0,\"box\":[0,0,999,10]}],\"nonrigid\":[]}]";
    std::ofstream os(dir + "/train/annotations.json");
    os << bad;
    os.close();
    CHECK_THROWS_AS(read_dataset(dir), ParseError);
  }
  fs::remove_all(dir);
}
