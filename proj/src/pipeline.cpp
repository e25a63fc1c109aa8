#include "dod/pipeline.hpp"

#include "dod/ops.hpp"

namespace dod {

ImageFeatures compute_image_features(const DatasetItem& item, int image_id,
                                     NetworkParams& params, const ProposalConfig& proposals) {
  NoGradGuard ng;
  ImageFeatures f;
  f.image_id = image_id;
  Value shared_map = forward_backbone(item.image, params);
  f.event_pooled = event_pooled_input(shared_map, params).val();

  auto run = [&](Branch branch, const std::vector<Box>& props, Tensor& c6_out, Tensor& c7_out,
                 std::vector<Detection>& dets, double& img_score) {
    std::vector<RoiForward> rf = forward_detection(shared_map, props, branch, params);
    const int fg = branch == Branch::rigid ? params.config.num_rigid_classes
                                           : params.config.num_nonrigid_classes;
    RoiBatch c6_batch, c7_batch;
    for (RoiForward& r : rf) {
      for (int cls = 0; cls < fg; ++cls)
        dets.push_back({image_id, r.box, cls, r.probs.data[static_cast<size_t>(cls)]});
      img_score = std::max(img_score, r.fg_score);
      c6_batch.maps.push_back(r.c6);
      c6_batch.scores.push_back(r.fg_score);
      c6_batch.source_boxes.push_back(r.box);
      c7_batch.maps.push_back(r.c7);
      c7_batch.scores.push_back(r.fg_score);
      c7_batch.source_boxes.push_back(r.box);
    }
    c6_out = batch_pool(roi_sampler(c6_batch, params.config.top_k)).val();
    c7_out = batch_pool(roi_sampler(c7_batch, params.config.top_k)).val();
  };
  run(Branch::rigid, propose_rois(item.image, ProposalMode::rigid, proposals), f.rigid_c6,
      f.rigid_c7, f.rigid_dets, f.rigid_score);
  run(Branch::nonrigid, propose_rois(item.image, ProposalMode::nonrigid, proposals),
      f.nonrigid_c6, f.nonrigid_c7, f.nonrigid_dets, f.nonrigid_score);
  return f;
}

double event_malicious_prob(const ImageFeatures& feats, NetworkParams& variant) {
  NoGradGuard ng;
  InjectedMaps inj;
  if (variant.config.injection_site != InjectionSite::none) {
    inj.active = true;
    inj.rigid_c6 = Value::constant(feats.rigid_c6);
    inj.rigid_c7 = Value::constant(feats.rigid_c7);
    inj.nonrigid_c6 = Value::constant(feats.nonrigid_c6);
    inj.nonrigid_c7 = Value::constant(feats.nonrigid_c7);
  }
  Value logits = event_head(Value::constant(feats.event_pooled), inj, variant);
  return softmax(logits.val()).data[kEventMalicious];
}

SplitMetrics evaluate_split(NetworkParams& params, const std::vector<DatasetItem>& items,
                            const ProposalConfig& proposals, bool with_fusion) {
  std::vector<ScoredPrediction> event_preds;
  std::vector<Detection> rigid_dets, nonrigid_dets;
  std::vector<GtObject> rigid_gt, nonrigid_gt;
  std::vector<double> event_scores, rigid_scores, nonrigid_scores;

  for (size_t i = 0; i < items.size(); ++i) {
    const DatasetItem& item = items[i];
    ImageFeatures f = compute_image_features(item, static_cast<int>(i), params, proposals);
    const double p = event_malicious_prob(f, params);
    event_preds.push_back({p, item.ann.event_label == kEventMalicious});
    event_scores.push_back(p);
    rigid_scores.push_back(f.rigid_score);
    nonrigid_scores.push_back(f.nonrigid_score);
    rigid_dets.insert(rigid_dets.end(), f.rigid_dets.begin(), f.rigid_dets.end());
    nonrigid_dets.insert(nonrigid_dets.end(), f.nonrigid_dets.begin(), f.nonrigid_dets.end());
    for (const auto& [cls, box] : item.ann.rigid) rigid_gt.push_back({static_cast<int>(i), box, cls});
    for (const auto& [cls, box] : item.ann.nonrigid)
      nonrigid_gt.push_back({static_cast<int>(i), box, cls});
  }

  SplitMetrics m;
  m.event_ap = average_precision(event_preds);
  std::vector<int> rigid_classes(static_cast<size_t>(params.config.num_rigid_classes));
  std::vector<int> nonrigid_classes(static_cast<size_t>(params.config.num_nonrigid_classes));
  for (size_t i = 0; i < rigid_classes.size(); ++i) rigid_classes[i] = static_cast<int>(i);
  for (size_t i = 0; i < nonrigid_classes.size(); ++i) nonrigid_classes[i] = static_cast<int>(i);
  m.rigid_map = detection_map(rigid_dets, rigid_gt, 0.5, rigid_classes);
  m.nonrigid_map = detection_map(nonrigid_dets, nonrigid_gt, 0.5, nonrigid_classes);

  if (with_fusion) {
    std::vector<double> fused =
        late_fusion({event_scores, rigid_scores, nonrigid_scores}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    std::vector<ScoredPrediction> fused_preds;
    for (size_t i = 0; i < items.size(); ++i)
      fused_preds.push_back({fused[i], items[i].ann.event_label == kEventMalicious});
    m.fused_event_ap = average_precision(fused_preds);
    m.has_fusion = true;
  }
  return m;
}

namespace {
std::mt19937_64 stage_rng(uint64_t seed, int stage, uint64_t variant_tag = 0) {
  return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(stage) +
                         variant_tag * 0x1000003ULL);
}
}  // namespace

NetworkParams train_through_stage2(const TrainerConfig& cfg,
                                   const std::vector<DatasetItem>& train_items,
                                   std::vector<double>* loss_trace) {
  ArchConfig arch = cfg.arch;
  arch.injection_site = InjectionSite::none;  // stages 1-2 never inject
  NetworkParams params = build_network(arch, cfg.seed);
  for (const StageConfig* stage : {&cfg.stage1, &cfg.stage2}) {
    std::mt19937_64 rng = stage_rng(cfg.seed, stage->stage_id);
    StageResult r = run_stage(*stage, params, train_items, rng, cfg.batch);
    if (loss_trace)
      loss_trace->insert(loss_trace->end(), r.loss_trace.begin(), r.loss_trace.end());
  }
  return params;
}

NetworkParams train_stage3_variant(const NetworkParams& stage2, InjectionSite site,
                                   const TrainerConfig& cfg,
                                   const std::vector<DatasetItem>& train_items,
                                   std::vector<double>* loss_trace) {
  NetworkParams params = clone_network(stage2);
  params.config.injection_site = site;
  std::mt19937_64 rng = stage_rng(cfg.seed, 3, static_cast<uint64_t>(site) + 1);
  StageResult r = run_stage(cfg.stage3, params, train_items, rng, cfg.batch);
  if (loss_trace) *loss_trace = std::move(r.loss_trace);
  return params;
}

}  // namespace dod
