#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dod/detection_layers.hpp"
#include "dod/tensor.hpp"

namespace dod {

constexpr int kEventBenign = 0;
constexpr int kEventMalicious = 1;

struct Annotation {
  int event_label = kEventBenign;
  std::vector<std::pair<int, Box>> rigid;     // class in {0,1,2}
  std::vector<std::pair<int, Box>> nonrigid;  // class in {0,1}
};

struct SceneConfig {
  int image_h = 64;
  int image_w = 64;
  // rigid glyph scales; aligned with the proposal window grid so that the
  // sliding-window proposals retain high recall at IoU 0.5
  std::vector<int> rigid_sizes{16, 32};
  int min_rigid = 1, max_rigid = 3;
  int min_nonrigid = 0, max_nonrigid = 2;
  int min_distractors = 1, max_distractors = 3;
  double noise_sigma = 0.03;
};

struct ProposalConfig {
  std::vector<int> scales{8, 16, 32};  // stride = scale/2
  int gt_jitter_count = 2;             // jittered copies per gt box at train time
  double gt_jitter_frac = 0.15;
};

enum class ProposalMode { rigid, nonrigid };

struct DatasetItem {
  std::string file;
  Tensor image;  // [3,H,W]
  Annotation ann;
};

struct DatasetManifest {
  int n_train = 0, n_test = 0;
  int image_h = 64, image_w = 64;
  uint64_t seed = 0;
  double class_balance = 0.5;  // malicious fraction
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<DatasetItem> train, test;
};

// Renders one scene. Benign: background + distractor outlines. Malicious:
// additionally rigid glyphs (per-class solid shapes) and non-rigid textured
// blobs. The annotation records the exact boxes.
std::pair<Tensor, Annotation> generate_scene(std::mt19937_64& rng, int event_label,
                                             const SceneConfig& config);

// Deterministic proposal windows. Rigid: multi-scale sliding windows;
// non-rigid: whole image + 4 half-size quadrants (exactly 5 boxes).
std::vector<Box> propose_rois(const Tensor& image, ProposalMode mode,
                              const ProposalConfig& config);

// Rigid train-time augmentation: jittered copies of the ground-truth boxes.
std::vector<Box> jittered_gt_boxes(const Annotation& ann, const ProposalConfig& config,
                                   int img_h, int img_w, std::mt19937_64& rng);

// Closed-form count of rigid sliding windows for an image size.
int64_t sliding_window_count(int img_h, int img_w, const ProposalConfig& config);

Dataset generate_dataset(uint64_t seed, int n_train, int n_test, const SceneConfig& config);

// Layout: dir/manifest.json, dir/{train,test}/annotations.json,
// dir/{train,test}/images/*.dten
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

}  // namespace dod
