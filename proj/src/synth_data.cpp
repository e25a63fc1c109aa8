#include "dod/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "dod/evaluation.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dod {

namespace {

double urand(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int irand(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

void fill_background(Tensor& img, std::mt19937_64& rng) {
  const int h = img.shape[1], w = img.shape[2];
  for (int c = 0; c < 3; ++c) {
    const double base = urand(rng, 0.10, 0.30);
    const double gx = urand(rng, -0.08, 0.08), gy = urand(rng, -0.08, 0.08);
    const double fx = urand(rng, 0.5, 2.0), fy = urand(rng, 0.5, 2.0);
    const double amp = urand(rng, 0.0, 0.05);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = static_cast<double>(x) / w, v = static_cast<double>(y) / h;
        img.at(c, y, x) = base + gx * u + gy * v +
                          amp * std::sin(2 * M_PI * (fx * u + fy * v));
      }
  }
}

// rigid glyph colors, one bright primary per class
constexpr double kRigidColor[3][3] = {{0.95, 0.15, 0.15},   // square
                                      {0.15, 0.95, 0.15},   // triangle
                                      {0.15, 0.25, 0.95}};  // disc

void draw_rigid(Tensor& img, int cls, const Box& b) {
  const int x0 = static_cast<int>(b.x0), y0 = static_cast<int>(b.y0);
  const int x1 = static_cast<int>(b.x1), y1 = static_cast<int>(b.y1);
  const int s = x1 - x0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const int lx = x - x0, ly = y - y0;
      bool inside = false;
      switch (cls) {
        case 0:  // solid square
          inside = true;
          break;
        case 1:  // upward triangle
          inside = std::abs(lx - s / 2.0) <= (ly + 1) * 0.5;
          break;
        case 2: {  // disc
          const double dx = lx - (s - 1) / 2.0, dy = ly - (s - 1) / 2.0;
          inside = dx * dx + dy * dy <= (s / 2.0) * (s / 2.0);
          break;
        }
      }
      if (inside)
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = kRigidColor[cls][c];
    }
}

void draw_nonrigid(Tensor& img, int cls, const Box& b, std::mt19937_64& rng) {
  const int x0 = static_cast<int>(b.x0), y0 = static_cast<int>(b.y0);
  const int x1 = static_cast<int>(b.x1), y1 = static_cast<int>(b.y1);
  const double cx = (b.x0 + b.x1) / 2.0, cy = (b.y0 + b.y1) / 2.0;
  const double rx = b.width() / 2.0, ry = b.height() / 2.0;
  const double phase = urand(rng, 0.0, 2 * M_PI);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 1.0) continue;
      const double fall = 1.0 - r2;
      const double tex = 0.5 + 0.5 * std::sin(0.9 * x + 1.3 * y + phase);
      if (cls == 0) {
        // warm flickering region
        img.at(0, y, x) += fall * (0.55 + 0.25 * tex);
        img.at(1, y, x) += fall * (0.30 + 0.20 * tex);
      } else {
        // gray diffuse region
        const double g = fall * (0.35 + 0.25 * tex);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += g;
      }
    }
}

// benign-only shape family: thin outlines, muted gray
void draw_distractor(Tensor& img, std::mt19937_64& rng) {
  const int h = img.shape[1], w = img.shape[2];
  const int s = irand(rng, 8, 16);
  const int x0 = irand(rng, 0, w - s), y0 = irand(rng, 0, h - s);
  const int kind = irand(rng, 0, 1);
  const double shade = urand(rng, 0.45, 0.6);
  if (kind == 0) {  // ring outline
    const double cx = x0 + s / 2.0, cy = y0 + s / 2.0, r = s / 2.0;
    for (int y = y0; y < y0 + s; ++y)
      for (int x = x0; x < x0 + s; ++x) {
        const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
        if (std::abs(d - r + 1.0) < 1.0)
          for (int c = 0; c < 3; ++c) img.at(c, y, x) = shade;
      }
  } else {  // cross
    const int mx = x0 + s / 2, my = y0 + s / 2;
    for (int x = x0; x < x0 + s; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, my, x) = shade;
    for (int y = y0; y < y0 + s; ++y)
      for (int c = 0; c < 3; ++c) img.at(c, y, mx) = shade;
  }
}

bool overlaps_any(const Box& b, const std::vector<Box>& placed, double max_iou) {
  for (const Box& p : placed)
    if (iou(b, p) > max_iou) return true;
  return false;
}

json box_to_json(const Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

Box box_from_json(const json& j, int img_w, int img_h, const std::string& ctx) {
  if (!j.is_array() || j.size() != 4)
    throw ParseError(ctx + ": box must be a 4-element array");
  const double x0 = j[0], y0 = j[1], x1 = j[2], y1 = j[3];
  if (x0 < 0 || y0 < 0 || x1 > img_w || y1 > img_h || x0 >= x1 || y0 >= y1)
    throw ParseError(ctx + ": box out of bounds or degenerate");
  return Box(x0, y0, x1, y1);
}

json ann_to_json(const DatasetItem& item) {
  json rigid = json::array(), nonrigid = json::array();
  for (const auto& [cls, box] : item.ann.rigid) rigid.push_back({{"cls", cls}, {"box", box_to_json(box)}});
  for (const auto& [cls, box] : item.ann.nonrigid)
    nonrigid.push_back({{"cls", cls}, {"box", box_to_json(box)}});
  return json{{"file", item.file},
              {"event", item.ann.event_label == kEventMalicious ? "malicious" : "benign"},
              {"rigid", rigid},
              {"nonrigid", nonrigid}};
}

}  // namespace

std::pair<Tensor, Annotation> generate_scene(std::mt19937_64& rng, int event_label,
                                             const SceneConfig& config) {
  const int h = config.image_h, w = config.image_w;
  for (int s : config.rigid_sizes)
    if (s > h || s > w)
      throw DimensionError("generate_scene: rigid size " + std::to_string(s) +
                           " exceeds image " + std::to_string(w) + "x" + std::to_string(h));

  Tensor img({3, h, w});
  Annotation ann;
  ann.event_label = event_label;
  fill_background(img, rng);

  const int nd = irand(rng, config.min_distractors, config.max_distractors);
  for (int i = 0; i < nd; ++i) draw_distractor(img, rng);

  if (event_label == kEventMalicious) {
    std::vector<Box> placed;
    const int nr = irand(rng, config.min_rigid, config.max_rigid);
    for (int i = 0; i < nr; ++i) {
      const int cls = irand(rng, 0, 2);
      const int s = config.rigid_sizes[static_cast<size_t>(
          irand(rng, 0, static_cast<int>(config.rigid_sizes.size()) - 1))];
      // positions snapped to the proposal grid (stride = s/2)
      const int step = s / 2;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const int x = step * irand(rng, 0, (w - s) / step);
        const int y = step * irand(rng, 0, (h - s) / step);
        Box b(x, y, x + s, y + s);
        if (overlaps_any(b, placed, 0.2)) continue;
        draw_rigid(img, cls, b);
        ann.rigid.emplace_back(cls, b);
        placed.push_back(b);
        break;
      }
    }
    const int nn = irand(rng, config.min_nonrigid, config.max_nonrigid);
    for (int i = 0; i < nn; ++i) {
      const int cls = irand(rng, 0, 1);
      const int s = irand(rng, 14, 26);
      for (int attempt = 0; attempt < 20; ++attempt) {
        const int x = irand(rng, 0, w - s), y = irand(rng, 0, h - s);
        Box b(x, y, x + s, y + s);
        if (overlaps_any(b, placed, 0.2)) continue;
        draw_nonrigid(img, cls, b, rng);
        ann.nonrigid.emplace_back(cls, b);
        placed.push_back(b);
        break;
      }
    }
  }

  std::normal_distribution<double> noise(0.0, config.noise_sigma);
  for (double& v : img.data) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return {std::move(img), std::move(ann)};
}

std::vector<Box> propose_rois(const Tensor& image, ProposalMode mode,
                              const ProposalConfig& config) {
  const int h = image.shape[1], w = image.shape[2];
  std::vector<Box> boxes;
  if (mode == ProposalMode::nonrigid) {
    boxes.emplace_back(0, 0, w, h);
    const int hw = w / 2, hh = h / 2;
    boxes.emplace_back(0, 0, hw, hh);
    boxes.emplace_back(hw, 0, w, hh);
    boxes.emplace_back(0, hh, hw, h);
    boxes.emplace_back(hw, hh, w, h);
    return boxes;
  }
  for (int s : config.scales) {
    const int stride = std::max(1, s / 2);
    for (int y = 0; y + s <= h; y += stride)
      for (int x = 0; x + s <= w; x += stride) boxes.emplace_back(x, y, x + s, y + s);
  }
  return boxes;
}

std::vector<Box> jittered_gt_boxes(const Annotation& ann, const ProposalConfig& config,
                                   int img_h, int img_w, std::mt19937_64& rng) {
  std::vector<Box> out;
  for (const auto& [cls, b] : ann.rigid) {
    for (int i = 0; i < config.gt_jitter_count; ++i) {
      const double jw = b.width() * config.gt_jitter_frac;
      const double jh = b.height() * config.gt_jitter_frac;
      const double dx = urand(rng, -jw, jw), dy = urand(rng, -jh, jh);
      Box jb = Box::clipped(b.x0 + dx, b.y0 + dy, b.x1 + dx, b.y1 + dy,
                            static_cast<double>(img_w), static_cast<double>(img_h));
      if (jb.width() >= 2 && jb.height() >= 2) out.push_back(jb);
    }
  }
  return out;
}

int64_t sliding_window_count(int img_h, int img_w, const ProposalConfig& config) {
  int64_t n = 0;
  for (int s : config.scales) {
    const int stride = std::max(1, s / 2);
    const int64_t ny = (img_h - s) / stride + 1;
    const int64_t nx = (img_w - s) / stride + 1;
    if (ny > 0 && nx > 0) n += ny * nx;
  }
  return n;
}

Dataset generate_dataset(uint64_t seed, int n_train, int n_test, const SceneConfig& config) {
  Dataset ds;
  ds.manifest.n_train = n_train;
  ds.manifest.n_test = n_test;
  ds.manifest.image_h = config.image_h;
  ds.manifest.image_w = config.image_w;
  ds.manifest.seed = seed;

  auto make_split = [&](int n, uint64_t split_tag) {
    std::vector<DatasetItem> items;
    for (int i = 0; i < n; ++i) {
      // per-image derived stream
      std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + split_tag * 0x100000001ULL +
                          static_cast<uint64_t>(i));
      const int label = (i % 2 == 0) ? kEventBenign : kEventMalicious;
      auto [img, ann] = generate_scene(rng, label, config);
      DatasetItem item;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "img_%05d.dten", i);
      item.file = buf;
      item.image = std::move(img);
      item.ann = std::move(ann);
      items.push_back(std::move(item));
    }
    return items;
  };
  ds.train = make_split(n_train, 1);
  ds.test = make_split(n_test, 2);
  return ds;
}

void write_dataset(const std::string& dir, const Dataset& ds) {
  fs::create_directories(dir);
  json manifest{{"n_train", ds.manifest.n_train},
                {"n_test", ds.manifest.n_test},
                {"image_h", ds.manifest.image_h},
                {"image_w", ds.manifest.image_w},
                {"seed", ds.manifest.seed},
                {"class_balance", ds.manifest.class_balance}};
  {
    std::ofstream os(dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
  }
  auto write_split = [&](const std::string& split, const std::vector<DatasetItem>& items) {
    fs::create_directories(dir + "/" + split + "/images");
    json anns = json::array();
    for (const DatasetItem& item : items) {
      save_dten(dir + "/" + split + "/images/" + item.file, item.image);
      anns.push_back(ann_to_json(item));
    }
    std::ofstream os(dir + "/" + split + "/annotations.json");
    os << anns.dump(2) << "\n";
  };
  write_split("train", ds.train);
  write_split("test", ds.test);
}

Dataset read_dataset(const std::string& dir) {
  auto load_json = [](const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("missing file: " + path);
    json j;
    try {
      is >> j;
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": " + e.what());
    }
    return j;
  };

  Dataset ds;
  json manifest = load_json(dir + "/manifest.json");
  try {
    ds.manifest.n_train = manifest.at("n_train");
    ds.manifest.n_test = manifest.at("n_test");
    ds.manifest.image_h = manifest.at("image_h");
    ds.manifest.image_w = manifest.at("image_w");
    ds.manifest.seed = manifest.at("seed");
    ds.manifest.class_balance = manifest.at("class_balance");
  } catch (const json::exception& e) {
    throw ParseError(dir + "/manifest.json: " + e.what());
  }

  auto read_split = [&](const std::string& split) {
    const std::string ann_path = dir + "/" + split + "/annotations.json";
    json anns = load_json(ann_path);
    if (!anns.is_array()) throw ParseError(ann_path + ": top level must be an array");
    std::vector<DatasetItem> items;
    for (size_t i = 0; i < anns.size(); ++i) {
      const json& j = anns[i];
      const std::string ctx = ann_path + " entry " + std::to_string(i);
      DatasetItem item;
      try {
        item.file = j.at("file");
        const std::string ev = j.at("event");
        if (ev != "malicious" && ev != "benign") throw ParseError(ctx + ": unknown event '" + ev + "'");
        item.ann.event_label = (ev == "malicious") ? kEventMalicious : kEventBenign;
        for (const json& r : j.at("rigid")) {
          const int cls = r.at("cls");
          if (cls < 0 || cls > 2) throw ParseError(ctx + ": rigid class out of range");
          item.ann.rigid.emplace_back(
              cls, box_from_json(r.at("box"), ds.manifest.image_w, ds.manifest.image_h, ctx));
        }
        for (const json& r : j.at("nonrigid")) {
          const int cls = r.at("cls");
          if (cls < 0 || cls > 1) throw ParseError(ctx + ": nonrigid class out of range");
          item.ann.nonrigid.emplace_back(
              cls, box_from_json(r.at("box"), ds.manifest.image_w, ds.manifest.image_h, ctx));
        }
      } catch (const json::exception& e) {
        throw ParseError(ctx + ": " + e.what());
      }
      item.image = load_dten(dir + "/" + split + "/images/" + item.file);
      if (item.image.shape != Shape{3, ds.manifest.image_h, ds.manifest.image_w})
        throw ParseError(ctx + ": image shape " + shape_str(item.image.shape) +
                         " does not match manifest");
      items.push_back(std::move(item));
    }
    return items;
  };
  ds.train = read_split("train");
  ds.test = read_split("test");
  return ds;
}

}  // namespace dod
