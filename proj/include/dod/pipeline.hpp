#pragma once

#include "dod/evaluation.hpp"
#include "dod/trainer.hpp"

namespace dod {

// Per-image features that depend only on the shared + detection parameters.
// For stage-2/stage-3 checkpoints from the same run these are identical, so
// they can be computed once and reused across event-branch variants.
struct ImageFeatures {
  int image_id = 0;
  Tensor event_pooled;                                 // [C,6,6] whole-image RoI
  Tensor rigid_c6, rigid_c7, nonrigid_c6, nonrigid_c7; // batch-pooled top-k maps
  std::vector<Detection> rigid_dets, nonrigid_dets;    // per-proposal per-class scores
  double rigid_score = 0.0, nonrigid_score = 0.0;      // per-image max foreground score
};

ImageFeatures compute_image_features(const DatasetItem& item, int image_id,
                                     NetworkParams& params, const ProposalConfig& proposals);

// Event branch of `variant` on precomputed features; returns P(malicious).
// `variant` must share the base checkpoint's shared/detection parameters.
double event_malicious_prob(const ImageFeatures& feats, NetworkParams& variant);

struct SplitMetrics {
  double event_ap = 0.0;
  double rigid_map = 0.0;
  double nonrigid_map = 0.0;
  double fused_event_ap = 0.0;
  bool has_fusion = false;
};

SplitMetrics evaluate_split(NetworkParams& params, const std::vector<DatasetItem>& items,
                            const ProposalConfig& proposals, bool with_fusion = false);

// Stage 1 then stage 2 from scratch (the IOD-style checkpoint).
NetworkParams train_through_stage2(const TrainerConfig& cfg,
                                   const std::vector<DatasetItem>& train_items,
                                   std::vector<double>* loss_trace = nullptr);

// Stage 3 for one injection site from a shared stage-2 checkpoint.
NetworkParams train_stage3_variant(const NetworkParams& stage2, InjectionSite site,
                                   const TrainerConfig& cfg,
                                   const std::vector<DatasetItem>& train_items,
                                   std::vector<double>* loss_trace = nullptr);

}  // namespace dod
