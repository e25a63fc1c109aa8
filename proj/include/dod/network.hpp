#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dod/detection_layers.hpp"
#include "dod/optim.hpp"

namespace dod {

enum class Branch { rigid, nonrigid };
enum class InjectionSite { none, c6, c7, both };

std::string to_string(InjectionSite site);
InjectionSite injection_site_from_string(const std::string& s);

struct ArchConfig {
  int input_h = 64, input_w = 64;
  std::vector<int> shared_channels{16, 32};  // one conv+relu+pool block per entry
  int c6 = 32, c7 = 32;
  int roi_pool_h = 6, roi_pool_w = 6;
  int num_events = 2;
  int num_rigid_classes = 3;     // + background
  int num_nonrigid_classes = 2;  // + background
  InjectionSite injection_site = InjectionSite::none;
  int top_k = 3;

  void validate() const;

  int shared_out() const { return shared_channels.back(); }
  int pool_factor() const { return 1 << shared_channels.size(); }
  int map_h() const { return input_h / pool_factor(); }
  int map_w() const { return input_w / pool_factor(); }
  int rigid_k() const { return num_rigid_classes + 1; }
  int nonrigid_k() const { return num_nonrigid_classes + 1; }

  bool inject_at_c6() const {
    return injection_site == InjectionSite::c6 || injection_site == InjectionSite::both;
  }
  bool inject_at_c7() const {
    return injection_site == InjectionSite::c7 || injection_site == InjectionSite::both;
  }
  // event-branch seam widths (3x when the corresponding seam is injected)
  int event_c7_in() const { return inject_at_c6() ? 3 * c6 : c6; }
  int event_fc_in() const { return inject_at_c7() ? 3 * c7 : c7; }

  std::string canonical() const;  // stable key=value serialization
  uint64_t hash() const;          // FNV-1a over canonical()
  std::string to_json_string() const;
  static ArchConfig from_json_string(const std::string& s);
};

struct NetworkParams {
  ArchConfig config;
  ParamGroup shared{"shared"};
  ParamGroup rigid_branch{"rigid_branch"};
  ParamGroup nonrigid_branch{"nonrigid_branch"};
  ParamGroup event_branch{"event_branch"};
  int stage = 0;  // provenance: 0 fresh, 1..3 = last completed training stage

  std::vector<ParamGroup*> groups();
  ParamGroup& branch(Branch b) { return b == Branch::rigid ? rigid_branch : nonrigid_branch; }
  void set_trainable(const std::vector<std::string>& group_names);
};

// He fan-in initialization, deterministic given seed.
NetworkParams build_network(const ArchConfig& config, uint64_t seed);
NetworkParams clone_network(const NetworkParams& params);

// Retargets the event FC to `site`'s input width, Gaussian(0, 0.01) weights
// and zero bias; C6_e/C7_e are kept.
void reinit_event_fc(NetworkParams& params, InjectionSite site, std::mt19937_64& rng);

// image [3,H,W] -> shared feature map [C,map_h,map_w]
Value forward_backbone(const Tensor& image, NetworkParams& params);

struct RoiForward {
  Box box;       // image coordinates
  Value c6, c7;  // post-relu branch maps, retained for injection
  Value logits;
  Tensor probs;
  double fg_score = 0.0;  // max over foreground classes
};

// Runs one detection branch over the given image-coordinate RoIs.
std::vector<RoiForward> forward_detection(const Value& shared_map, const std::vector<Box>& rois,
                                          Branch branch, NetworkParams& params);

struct InjectedMaps {
  bool active = false;
  Value rigid_c6, rigid_c7, nonrigid_c6, nonrigid_c7;  // batch-pooled (gradient-blocked)
};

// Whole-image event RoI pooled to the branch input grid.
Value event_pooled_input(const Value& shared_map, NetworkParams& params);

// Detection branches over all proposals -> top-k sampling -> batch pooling.
InjectedMaps compute_injection(const Value& shared_map, const std::vector<Box>& rigid_props,
                               const std::vector<Box>& nonrigid_props, NetworkParams& params);

// Event branch: C6 -> relu [-> concat] -> C7 -> relu [-> concat] -> avg pool
// -> FC. Returns logits.
Value event_head(const Value& event_pooled, const InjectedMaps& inj, NetworkParams& params);

// Full event forward pass. With injection enabled both proposal lists must be
// nonempty.
Value forward_event(const Tensor& image, NetworkParams& params,
                    const std::vector<Box>& rigid_props, const std::vector<Box>& nonrigid_props);

// Checkpoint format "DODC": magic, u8 version, u64 config-hash, u64 count,
// then (u32 name-length, name bytes, DTEN tensor) records.
void save_network(const NetworkParams& params, const std::string& path);
NetworkParams load_network(const std::string& path);

}  // namespace dod
