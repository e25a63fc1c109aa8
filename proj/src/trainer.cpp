#include "dod/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "dod/evaluation.hpp"
#include "dod/ops.hpp"

namespace dod {

void StageConfig::validate() const {
  if (stage_id < 1 || stage_id > 3) throw std::invalid_argument("StageConfig: stage_id must be 1..3");
  if (step_size < 1 || step_size > iterations)
    throw std::invalid_argument("StageConfig: require 1 <= step_size <= iterations");
  auto has = [&](const char* g) {
    return std::find(trainable_groups.begin(), trainable_groups.end(), g) != trainable_groups.end();
  };
  switch (stage_id) {
    case 1:
      if (trainable_groups.size() != 2 || !has("shared") || !has("rigid_branch") || injection_enabled)
        throw std::invalid_argument("StageConfig: stage 1 trains {shared, rigid_branch}, injection off");
      break;
    case 2:
      if (trainable_groups.size() != 4 || injection_enabled)
        throw std::invalid_argument("StageConfig: stage 2 trains all groups, injection off");
      break;
    case 3:
      if (trainable_groups.size() != 1 || !has("event_branch") || !injection_enabled)
        throw std::invalid_argument("StageConfig: stage 3 trains {event_branch} only, injection on");
      break;
  }
}

StageConfig StageConfig::make(int stage, Profile profile) {
  StageConfig c;
  c.stage_id = stage;
  const bool desk = profile == Profile::desk;
  if (stage == 1) {
    c.lr = 0.001;
    c.iterations = desk ? 2000 : 50000;
    c.step_size = desk ? 1200 : 30000;
    c.trainable_groups = {"shared", "rigid_branch"};
    c.injection_enabled = false;
  } else {
    c.lr = 0.0001;
    c.iterations = desk ? 800 : 20000;
    c.step_size = desk ? 480 : 12000;
    if (stage == 2) {
      c.trainable_groups = {"shared", "rigid_branch", "nonrigid_branch", "event_branch"};
      c.injection_enabled = false;
    } else {
      c.trainable_groups = {"event_branch"};
      c.injection_enabled = true;
    }
  }
  c.validate();
  return c;
}

std::vector<int> label_rois(const std::vector<Box>& proposals, const Annotation& gt, Branch task) {
  const auto& objects = task == Branch::rigid ? gt.rigid : gt.nonrigid;
  const int background = task == Branch::rigid ? 3 : 2;
  const double pos_thresh = task == Branch::rigid ? 0.5 : 0.1;
  const double neg_thresh = 0.1;

  std::vector<int> labels(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    double best = 0.0;
    int best_cls = background;
    for (const auto& [cls, box] : objects) {
      const double v = iou(proposals[i], box);
      if (v > best) {
        best = v;
        best_cls = cls;
      }
    }
    if (best > pos_thresh)
      labels[i] = best_cls;
    else if (best < neg_thresh)
      labels[i] = background;
    else
      labels[i] = task == Branch::rigid ? kRoiIgnore : background;
  }
  return labels;
}

namespace {

TrainBatch::PerImage build_image_entry(const std::vector<DatasetItem>& items, int index,
                                       std::mt19937_64& rng, const BatchConfig& config) {
  const DatasetItem& item = items[static_cast<size_t>(index)];
  const int h = item.image.shape[1], w = item.image.shape[2];
  TrainBatch::PerImage out;
  out.image_index = index;
  out.event_label = item.ann.event_label;

  // non-rigid: the 5 fixed multi-scale windows
  out.nonrigid.boxes = propose_rois(item.image, ProposalMode::nonrigid, config.proposals);
  out.nonrigid.labels = label_rois(out.nonrigid.boxes, item.ann, Branch::nonrigid);

  // rigid: sliding windows + jittered gt, then positive-biased sampling
  std::vector<Box> props = propose_rois(item.image, ProposalMode::rigid, config.proposals);
  std::vector<Box> jit = jittered_gt_boxes(item.ann, config.proposals, h, w, rng);
  props.insert(props.end(), jit.begin(), jit.end());
  std::vector<int> labels = label_rois(props, item.ann, Branch::rigid);

  std::vector<size_t> pos, neg;
  for (size_t i = 0; i < props.size(); ++i) {
    if (labels[i] == kRoiIgnore) continue;
    (labels[i] < 3 ? pos : neg).push_back(i);
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  const int per_image = config.rigid_rois_per_batch / 2;
  const int max_pos = per_image / config.max_positive_fraction_denom;
  const size_t npos = std::min(pos.size(), static_cast<size_t>(max_pos));
  const size_t nneg = std::min(neg.size(), static_cast<size_t>(per_image) - npos);
  for (size_t i = 0; i < npos; ++i) {
    out.rigid.boxes.push_back(props[pos[i]]);
    out.rigid.labels.push_back(labels[pos[i]]);
  }
  for (size_t i = 0; i < nneg; ++i) {
    out.rigid.boxes.push_back(props[neg[i]]);
    out.rigid.labels.push_back(labels[neg[i]]);
  }
  return out;
}

}  // namespace

TrainBatch make_batch(const std::vector<DatasetItem>& items, std::mt19937_64& rng,
                      const BatchConfig& config) {
  std::vector<int> benign, malicious;
  for (size_t i = 0; i < items.size(); ++i)
    (items[i].ann.event_label == kEventMalicious ? malicious : benign)
        .push_back(static_cast<int>(i));
  if (benign.empty() || malicious.empty())
    throw std::runtime_error("make_batch: dataset must contain both event classes");

  const int bi = benign[std::uniform_int_distribution<size_t>(0, benign.size() - 1)(rng)];
  const int mi = malicious[std::uniform_int_distribution<size_t>(0, malicious.size() - 1)(rng)];
  TrainBatch batch;
  batch.images[0] = build_image_entry(items, mi, rng, config);
  batch.images[1] = build_image_entry(items, bi, rng, config);
  return batch;
}

namespace {

// mean CE over the labeled (non-ignore) RoIs of one detection task
void add_detection_losses(std::vector<Value>& losses, const Value& shared_map,
                          const RoiSet& rois, Branch branch, NetworkParams& params) {
  if (rois.boxes.empty()) return;
  std::vector<RoiForward> rf = forward_detection(shared_map, rois.boxes, branch, params);
  for (size_t i = 0; i < rf.size(); ++i) {
    if (rois.labels[i] == kRoiIgnore) continue;
    losses.push_back(softmax_cross_entropy(rf[i].logits, rois.labels[i]));
  }
}

std::vector<uint8_t> group_bytes(const ParamGroup& g) {
  std::vector<uint8_t> bytes;
  for (const auto& [name, v] : g.params) {
    const auto& d = v.val().data;
    const uint8_t* p = reinterpret_cast<const uint8_t*>(d.data());
    bytes.insert(bytes.end(), p, p + d.size() * sizeof(double));
  }
  return bytes;
}

// frozen per-image features for stage 3 (shared + detection branches fixed)
struct Stage3Cache {
  bool ready = false;
  Tensor event_pooled;
  Tensor rigid_c6, rigid_c7, nonrigid_c6, nonrigid_c7;
};

}  // namespace

StageResult run_stage(const StageConfig& stage, NetworkParams& params,
                      const std::vector<DatasetItem>& items, std::mt19937_64& rng,
                      const BatchConfig& batch_config) {
  stage.validate();
  if (params.stage != stage.stage_id - 1)
    throw std::runtime_error("run_stage: stage " + std::to_string(stage.stage_id) +
                             " requires a checkpoint from stage " +
                             std::to_string(stage.stage_id - 1) + ", got stage " +
                             std::to_string(params.stage));

  if (stage.stage_id <= 2 && params.config.injection_site != InjectionSite::none)
    throw std::runtime_error(
        "run_stage: stages 1-2 run without injection; build the network with "
        "injection_site=none and set the target site before stage 3");

  params.set_trainable(stage.trainable_groups);
  const bool use_injection =
      stage.stage_id == 3 && params.config.injection_site != InjectionSite::none;

  std::vector<uint8_t> frozen_before;
  std::vector<Stage3Cache> cache;
  if (stage.stage_id == 3) {
    reinit_event_fc(params, params.config.injection_site, rng);
    for (const ParamGroup* g : {&params.shared, &params.rigid_branch, &params.nonrigid_branch}) {
      auto b = group_bytes(*g);
      frozen_before.insert(frozen_before.end(), b.begin(), b.end());
    }
    cache.resize(items.size());
  }

  auto stage3_features = [&](int index) -> Stage3Cache& {
    Stage3Cache& c = cache[static_cast<size_t>(index)];
    if (c.ready) return c;
    NoGradGuard ng;
    const DatasetItem& item = items[static_cast<size_t>(index)];
    Value shared_map = forward_backbone(item.image, params);
    c.event_pooled = event_pooled_input(shared_map, params).val();
    if (use_injection) {
      std::vector<Box> rigid = propose_rois(item.image, ProposalMode::rigid, batch_config.proposals);
      std::vector<Box> nonrigid =
          propose_rois(item.image, ProposalMode::nonrigid, batch_config.proposals);
      InjectedMaps inj = compute_injection(shared_map, rigid, nonrigid, params);
      c.rigid_c6 = inj.rigid_c6.val();
      c.rigid_c7 = inj.rigid_c7.val();
      c.nonrigid_c6 = inj.nonrigid_c6.val();
      c.nonrigid_c7 = inj.nonrigid_c7.val();
    }
    c.ready = true;
    return c;
  };

  SgdOptimizer opt(stage.momentum, stage.weight_decay);
  std::vector<ParamGroup*> groups = params.groups();
  StageResult result;
  result.loss_trace.reserve(static_cast<size_t>(stage.iterations));

  for (int iter = 0; iter < stage.iterations; ++iter) {
    const double lr = lr_schedule(stage.lr, iter, stage.step_size, stage.gamma);
    SgdOptimizer::zero_grad(groups);
    TrainBatch batch = make_batch(items, rng, batch_config);

    // per-task mean CE; the stage loss is the unweighted sum of task means
    std::vector<Value> event_losses, rigid_losses, nonrigid_losses;
    for (const TrainBatch::PerImage& im : batch.images) {
      if (stage.stage_id == 3) {
        const Stage3Cache& c = stage3_features(im.image_index);
        InjectedMaps inj;
        if (use_injection) {
          inj.active = true;
          inj.rigid_c6 = Value::constant(c.rigid_c6);
          inj.rigid_c7 = Value::constant(c.rigid_c7);
          inj.nonrigid_c6 = Value::constant(c.nonrigid_c6);
          inj.nonrigid_c7 = Value::constant(c.nonrigid_c7);
        }
        Value logits = event_head(Value::constant(c.event_pooled), inj, params);
        event_losses.push_back(softmax_cross_entropy(logits, im.event_label));
        continue;
      }
      const DatasetItem& item = items[static_cast<size_t>(im.image_index)];
      Value shared_map = forward_backbone(item.image, params);
      add_detection_losses(rigid_losses, shared_map, im.rigid, Branch::rigid, params);
      if (stage.stage_id == 2) {
        add_detection_losses(nonrigid_losses, shared_map, im.nonrigid, Branch::nonrigid, params);
        Value logits = event_head(event_pooled_input(shared_map, params), InjectedMaps{}, params);
        event_losses.push_back(softmax_cross_entropy(logits, im.event_label));
      }
    }

    std::vector<Value> task_losses;
    if (!event_losses.empty()) task_losses.push_back(mean_of(event_losses));
    if (!rigid_losses.empty()) task_losses.push_back(mean_of(rigid_losses));
    if (!nonrigid_losses.empty()) task_losses.push_back(mean_of(nonrigid_losses));
    Value total = task_losses.front();
    for (size_t i = 1; i < task_losses.size(); ++i) total = add(total, task_losses[i]);
    total.backward();
    opt.step(groups, lr);
    result.loss_trace.push_back(total.val().data[0]);
  }

  if (stage.stage_id == 3) {
    std::vector<uint8_t> frozen_after;
    for (const ParamGroup* g : {&params.shared, &params.rigid_branch, &params.nonrigid_branch}) {
      auto b = group_bytes(*g);
      frozen_after.insert(frozen_after.end(), b.begin(), b.end());
    }
    if (frozen_after != frozen_before)
      throw std::logic_error("run_stage: frozen parameter groups changed during stage 3");
  }

  params.stage = stage.stage_id;
  return result;
}

TrainerConfig TrainerConfig::defaults(Profile profile) {
  TrainerConfig c;
  c.stage1 = StageConfig::make(1, profile);
  c.stage2 = StageConfig::make(2, profile);
  c.stage3 = StageConfig::make(3, profile);
  return c;
}

namespace {

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ParseError("config: bad integer for " + key + ": '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ParseError("config: bad number for " + key + ": '" + v + "'");
  }
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(to_int(key, tok));
  if (out.empty()) throw ParseError("config: empty list for " + key);
  return out;
}

}  // namespace

TrainerConfig TrainerConfig::parse_file(const std::string& path, Profile profile) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open config file: " + path);
  TrainerConfig c = defaults(profile);

  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    StageConfig* st = nullptr;
    if (key.rfind("stage1.", 0) == 0) st = &c.stage1;
    else if (key.rfind("stage2.", 0) == 0) st = &c.stage2;
    else if (key.rfind("stage3.", 0) == 0) st = &c.stage3;
    if (st) {
      const std::string sub = key.substr(7);
      if (sub == "lr") st->lr = to_double(key, val);
      else if (sub == "iters") st->iterations = to_int(key, val);
      else if (sub == "step") st->step_size = to_int(key, val);
      else throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      continue;
    }
    if (key == "gamma") {
      const double g = to_double(key, val);
      c.stage1.gamma = c.stage2.gamma = c.stage3.gamma = g;
    } else if (key == "momentum") {
      const double m = to_double(key, val);
      c.stage1.momentum = c.stage2.momentum = c.stage3.momentum = m;
    } else if (key == "weight_decay") {
      const double w = to_double(key, val);
      c.stage1.weight_decay = c.stage2.weight_decay = c.stage3.weight_decay = w;
    } else if (key == "top_k") {
      c.arch.top_k = to_int(key, val);
    } else if (key == "injection_site") {
      c.injection_site = injection_site_from_string(val);
    } else if (key == "seed") {
      c.seed = static_cast<uint64_t>(std::stoull(val));
    } else if (key == "arch.input_size") {
      c.arch.input_h = c.arch.input_w = to_int(key, val);
    } else if (key == "arch.shared_channels") {
      c.arch.shared_channels = to_int_list(key, val);
    } else if (key == "arch.c6") {
      c.arch.c6 = to_int(key, val);
    } else if (key == "arch.c7") {
      c.arch.c7 = to_int(key, val);
    } else if (key == "arch.roi_pool") {
      c.arch.roi_pool_h = c.arch.roi_pool_w = to_int(key, val);
    } else if (key == "arch.num_events") {
      c.arch.num_events = to_int(key, val);
    } else if (key == "arch.num_rigid") {
      c.arch.num_rigid_classes = to_int(key, val);
    } else if (key == "arch.num_nonrigid") {
      c.arch.num_nonrigid_classes = to_int(key, val);
    } else {
      throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  c.stage1.validate();
  c.stage2.validate();
  c.stage3.validate();
  c.arch.validate();
  return c;
}

}  // namespace dod
