#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "dod/network.hpp"
#include "dod/synth_data.hpp"

namespace dod {

constexpr int kRoiIgnore = -1;  // excluded from the loss

enum class Profile { desk, paper };

struct StageConfig {
  int stage_id = 1;
  double lr = 0.001;
  int iterations = 0;
  int step_size = 0;
  double gamma = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::vector<std::string> trainable_groups;
  bool injection_enabled = false;

  void validate() const;
  static StageConfig make(int stage, Profile profile);
};

struct RoiSet {
  std::vector<Box> boxes;
  std::vector<int> labels;  // fg class id, background = num fg classes, or kRoiIgnore
};

struct TrainBatch {
  struct PerImage {
    int image_index = -1;
    int event_label = 0;
    RoiSet rigid;     // sampled, positive-biased
    RoiSet nonrigid;  // the 5 fixed windows
  };
  std::array<PerImage, 2> images;  // one benign, one malicious
};

struct BatchConfig {
  int rigid_rois_per_batch = 64;  // split evenly across the two images
  int max_positive_fraction_denom = 4;  // 1:3 positive:negative
  ProposalConfig proposals;
};

// IoU-threshold labeling. Rigid: >0.5 positive, <0.1 background, else
// ignore. Non-rigid: >0.1 positive, else background.
std::vector<int> label_rois(const std::vector<Box>& proposals, const Annotation& gt, Branch task);

TrainBatch make_batch(const std::vector<DatasetItem>& items, std::mt19937_64& rng,
                      const BatchConfig& config);

struct StageResult {
  std::vector<double> loss_trace;
};

// Runs one training stage in place. Requires params.stage == stage_id - 1.
// Stage 3 re-initializes the event FC (Gaussian 0/0.01) at the configured
// injection site and trains only the event branch on cached frozen features.
StageResult run_stage(const StageConfig& stage, NetworkParams& params,
                      const std::vector<DatasetItem>& items, std::mt19937_64& rng,
                      const BatchConfig& batch_config = {});

// Full training configuration (CLI / config file surface).
struct TrainerConfig {
  StageConfig stage1, stage2, stage3;
  InjectionSite injection_site = InjectionSite::c7;
  uint64_t seed = 0;
  ArchConfig arch;
  BatchConfig batch;

  static TrainerConfig defaults(Profile profile);
  // UTF-8 `key = value` lines, `#` comments; unknown keys are an error.
  static TrainerConfig parse_file(const std::string& path, Profile profile);
};

}  // namespace dod
