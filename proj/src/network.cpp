#include "dod/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dod/ops.hpp"
#include "json.hpp"

using nlohmann::json;

namespace dod {

std::string to_string(InjectionSite site) {
  switch (site) {
    case InjectionSite::none: return "none";
    case InjectionSite::c6: return "c6";
    case InjectionSite::c7: return "c7";
    case InjectionSite::both: return "both";
  }
  return "none";
}

InjectionSite injection_site_from_string(const std::string& s) {
  if (s == "none") return InjectionSite::none;
  if (s == "c6") return InjectionSite::c6;
  if (s == "c7") return InjectionSite::c7;
  if (s == "both") return InjectionSite::both;
  throw ParseError("unknown injection site '" + s + "' (expected none|c6|c7|both)");
}

void ArchConfig::validate() const {
  if (shared_channels.empty()) throw DimensionError("ArchConfig: shared_channels empty");
  for (int c : shared_channels)
    if (c < 1) throw DimensionError("ArchConfig: channel counts must be >= 1");
  if (c6 < 1 || c7 < 1) throw DimensionError("ArchConfig: branch channels must be >= 1");
  if (num_events < 2) throw DimensionError("ArchConfig: need at least 2 event classes");
  if (num_rigid_classes < 1 || num_nonrigid_classes < 1)
    throw DimensionError("ArchConfig: need at least 1 object class per task");
  if (top_k < 1) throw DimensionError("ArchConfig: top_k must be >= 1");
  if (input_h % pool_factor() != 0 || input_w % pool_factor() != 0)
    throw DimensionError("ArchConfig: input size must be divisible by " +
                         std::to_string(pool_factor()));
  if (map_h() < roi_pool_h || map_w() < roi_pool_w)
    throw DimensionError("ArchConfig: shared map smaller than RoI pool grid");
}

std::string ArchConfig::canonical() const {
  std::ostringstream os;
  os << "input=" << input_h << "x" << input_w << ";shared=";
  for (size_t i = 0; i < shared_channels.size(); ++i) {
    if (i) os << ",";
    os << shared_channels[i];
  }
  os << ";c6=" << c6 << ";c7=" << c7 << ";roi_pool=" << roi_pool_h << "x" << roi_pool_w
     << ";events=" << num_events << ";rigid=" << num_rigid_classes
     << ";nonrigid=" << num_nonrigid_classes << ";injection=" << to_string(injection_site)
     << ";top_k=" << top_k;
  return os.str();
}

uint64_t ArchConfig::hash() const {
  uint64_t h = 14695981039346656037ULL;
  for (char c : canonical()) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string ArchConfig::to_json_string() const {
  json j{{"input_h", input_h},
         {"input_w", input_w},
         {"shared_channels", shared_channels},
         {"c6", c6},
         {"c7", c7},
         {"roi_pool_h", roi_pool_h},
         {"roi_pool_w", roi_pool_w},
         {"num_events", num_events},
         {"num_rigid_classes", num_rigid_classes},
         {"num_nonrigid_classes", num_nonrigid_classes},
         {"injection_site", to_string(injection_site)},
         {"top_k", top_k}};
  return j.dump();
}

ArchConfig ArchConfig::from_json_string(const std::string& s) {
  ArchConfig c;
  try {
    json j = json::parse(s);
    c.input_h = j.at("input_h");
    c.input_w = j.at("input_w");
    c.shared_channels = j.at("shared_channels").get<std::vector<int>>();
    c.c6 = j.at("c6");
    c.c7 = j.at("c7");
    c.roi_pool_h = j.at("roi_pool_h");
    c.roi_pool_w = j.at("roi_pool_w");
    c.num_events = j.at("num_events");
    c.num_rigid_classes = j.at("num_rigid_classes");
    c.num_nonrigid_classes = j.at("num_nonrigid_classes");
    c.injection_site = injection_site_from_string(j.at("injection_site"));
    c.top_k = j.at("top_k");
  } catch (const json::exception& e) {
    throw ParseError(std::string("ArchConfig: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<ParamGroup*> NetworkParams::groups() {
  return {&shared, &rigid_branch, &nonrigid_branch, &event_branch};
}

void NetworkParams::set_trainable(const std::vector<std::string>& group_names) {
  for (ParamGroup* g : groups())
    g->trainable =
        std::find(group_names.begin(), group_names.end(), g->name) != group_names.end();
}

namespace {

Tensor he_normal(Shape shape, int fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : t.data) v = dist(rng);
  return t;
}

void init_conv(ParamGroup& g, const std::string& name, int co, int ci, int k,
               std::mt19937_64& rng) {
  g.add(name + ".weight", Value(he_normal({co, ci, k, k}, ci * k * k, rng), true));
  g.add(name + ".bias", Value(Tensor::zeros({co}), true));
}

void init_fc(ParamGroup& g, int k, int d, std::mt19937_64& rng) {
  g.add("fc.weight", Value(he_normal({k, d}, d, rng), true));
  g.add("fc.bias", Value(Tensor::zeros({k}), true));
}

}  // namespace

NetworkParams build_network(const ArchConfig& config, uint64_t seed) {
  config.validate();
  NetworkParams p;
  p.config = config;
  std::mt19937_64 rng(seed);

  int in_c = 3;
  for (size_t i = 0; i < config.shared_channels.size(); ++i) {
    init_conv(p.shared, "conv" + std::to_string(i), config.shared_channels[i], in_c, 3, rng);
    in_c = config.shared_channels[i];
  }
  init_conv(p.rigid_branch, "c6", config.c6, config.shared_out(), 3, rng);
  init_conv(p.rigid_branch, "c7", config.c7, config.c6, 3, rng);
  init_fc(p.rigid_branch, config.rigid_k(), config.c7, rng);

  init_conv(p.nonrigid_branch, "c6", config.c6, config.shared_out(), 3, rng);
  init_conv(p.nonrigid_branch, "c7", config.c7, config.c6, 3, rng);
  init_fc(p.nonrigid_branch, config.nonrigid_k(), config.c7, rng);

  init_conv(p.event_branch, "c6", config.c6, config.shared_out(), 3, rng);
  init_conv(p.event_branch, "c7", config.c7, config.event_c7_in(), 3, rng);
  init_fc(p.event_branch, config.num_events, config.event_fc_in(), rng);
  return p;
}

NetworkParams clone_network(const NetworkParams& params) {
  NetworkParams p;
  p.config = params.config;
  p.stage = params.stage;
  const ParamGroup* src[] = {&params.shared, &params.rigid_branch, &params.nonrigid_branch,
                             &params.event_branch};
  ParamGroup* dst[] = {&p.shared, &p.rigid_branch, &p.nonrigid_branch, &p.event_branch};
  for (int i = 0; i < 4; ++i) {
    dst[i]->trainable = src[i]->trainable;
    for (const auto& [name, v] : src[i]->params) dst[i]->add(name, Value(v.val(), true));
  }
  return p;
}

void reinit_event_fc(NetworkParams& params, InjectionSite site, std::mt19937_64& rng) {
  params.config.injection_site = site;
  std::normal_distribution<double> dist(0.0, 0.01);

  // If the C6 seam is injected, the event C7 kernel widens from c6 to 3*c6
  // input channels: the inherited slice is kept, the appended channels start
  // near zero so the injected maps perturb rather than replace the signal.
  Value& c7w = params.event_branch.find("c7.weight");
  const int want_in = params.config.event_c7_in();
  if (c7w.shape()[1] != want_in) {
    const Tensor& old = c7w.val();
    const int co = old.shape[0], old_in = old.shape[1], k = old.shape[2];
    Tensor w({co, want_in, k, k});
    for (double& v : w.data) v = dist(rng);
    const int keep = std::min(old_in, want_in);
    for (int o = 0; o < co; ++o)
      for (int c = 0; c < keep; ++c)
        for (int i = 0; i < k * k; ++i)
          w.data[(static_cast<size_t>(o) * want_in + c) * k * k + i] =
              old.data[(static_cast<size_t>(o) * old_in + c) * k * k + i];
    c7w = Value(std::move(w), true);
  }

  const int d = params.config.event_fc_in();
  Tensor w({params.config.num_events, d});
  for (double& v : w.data) v = dist(rng);
  params.event_branch.find("fc.weight") = Value(std::move(w), true);
  params.event_branch.find("fc.bias") = Value(Tensor::zeros({params.config.num_events}), true);
}

Value forward_backbone(const Tensor& image, NetworkParams& params) {
  const ArchConfig& c = params.config;
  if (image.shape != Shape{3, c.input_h, c.input_w})
    throw DimensionError("forward_backbone: image shape " + shape_str(image.shape) +
                         " != expected [3," + std::to_string(c.input_h) + "," +
                         std::to_string(c.input_w) + "]");
  Value x(image, false);
  for (size_t i = 0; i < c.shared_channels.size(); ++i) {
    const std::string n = "conv" + std::to_string(i);
    x = conv2d(x, params.shared.find(n + ".weight"), params.shared.find(n + ".bias"), 1, 1);
    x = relu(x);
    x = max_pool2d(x, 2, 2);
  }
  return x;
}

namespace {

struct BranchOut {
  Value c6, c7, pooled_vec, logits;
};

BranchOut run_branch(const Value& pooled_input, ParamGroup& g) {
  BranchOut out;
  Value x = conv2d(pooled_input, g.find("c6.weight"), g.find("c6.bias"), 1, 1);
  out.c6 = relu(x);
  x = conv2d(out.c6, g.find("c7.weight"), g.find("c7.bias"), 1, 1);
  out.c7 = relu(x);
  out.pooled_vec = global_avg_pool(out.c7);
  out.logits = fully_connected(out.pooled_vec, g.find("fc.weight"), g.find("fc.bias"));
  return out;
}

}  // namespace

std::vector<RoiForward> forward_detection(const Value& shared_map, const std::vector<Box>& rois,
                                          Branch branch, NetworkParams& params) {
  if (rois.empty()) throw DimensionError("forward_detection: empty RoI list");
  const ArchConfig& c = params.config;
  const double scale = 1.0 / c.pool_factor();
  ParamGroup& g = params.branch(branch);
  const int fg = branch == Branch::rigid ? c.num_rigid_classes : c.num_nonrigid_classes;

  std::vector<RoiForward> out;
  out.reserve(rois.size());
  for (const Box& roi : rois) {
    RoiForward rf;
    rf.box = roi;
    Value pooled = roi_pool(shared_map, roi.scaled(scale), c.roi_pool_h, c.roi_pool_w);
    BranchOut b = run_branch(pooled, g);
    rf.c6 = b.c6;
    rf.c7 = b.c7;
    rf.logits = b.logits;
    rf.probs = softmax(b.logits.val());
    rf.fg_score = 0.0;
    for (int i = 0; i < fg; ++i) rf.fg_score = std::max(rf.fg_score, rf.probs.data[i]);
    out.push_back(std::move(rf));
  }
  return out;
}

Value event_pooled_input(const Value& shared_map, NetworkParams& params) {
  const ArchConfig& c = params.config;
  const Box whole(0, 0, c.map_w(), c.map_h());
  return roi_pool(shared_map, whole, c.roi_pool_h, c.roi_pool_w);
}

InjectedMaps compute_injection(const Value& shared_map, const std::vector<Box>& rigid_props,
                               const std::vector<Box>& nonrigid_props, NetworkParams& params) {
  if (rigid_props.empty() || nonrigid_props.empty())
    throw DimensionError("compute_injection: proposal lists must be nonempty when injection is enabled");
  InjectedMaps inj;
  inj.active = true;
  const int k = params.config.top_k;

  auto pool_branch = [&](Branch branch, const std::vector<Box>& props, Value& c6_out, Value& c7_out) {
    // detection outputs are gradient-blocked downstream; no need to record
    NoGradGuard ng;
    std::vector<RoiForward> rf = forward_detection(shared_map, props, branch, params);
    RoiBatch c6_batch, c7_batch;
    for (RoiForward& r : rf) {
      c6_batch.maps.push_back(r.c6);
      c6_batch.scores.push_back(r.fg_score);
      c6_batch.source_boxes.push_back(r.box);
      c7_batch.maps.push_back(r.c7);
      c7_batch.scores.push_back(r.fg_score);
      c7_batch.source_boxes.push_back(r.box);
    }
    c6_out = batch_pool(roi_sampler(c6_batch, k));
    c7_out = batch_pool(roi_sampler(c7_batch, k));
  };
  pool_branch(Branch::rigid, rigid_props, inj.rigid_c6, inj.rigid_c7);
  pool_branch(Branch::nonrigid, nonrigid_props, inj.nonrigid_c6, inj.nonrigid_c7);
  return inj;
}

Value event_head(const Value& event_pooled, const InjectedMaps& inj, NetworkParams& params) {
  const ArchConfig& c = params.config;
  if ((c.inject_at_c6() || c.inject_at_c7()) && !inj.active)
    throw DimensionError("event_head: injection configured but no injected maps supplied");
  ParamGroup& g = params.event_branch;

  Value x = conv2d(event_pooled, g.find("c6.weight"), g.find("c6.bias"), 1, 1);
  x = relu(x);
  if (c.inject_at_c6()) x = channel_concat({x, inj.rigid_c6, inj.nonrigid_c6});
  x = conv2d(x, g.find("c7.weight"), g.find("c7.bias"), 1, 1);
  x = relu(x);
  if (c.inject_at_c7()) x = channel_concat({x, inj.rigid_c7, inj.nonrigid_c7});
  x = global_avg_pool(x);
  return fully_connected(x, g.find("fc.weight"), g.find("fc.bias"));
}

Value forward_event(const Tensor& image, NetworkParams& params,
                    const std::vector<Box>& rigid_props, const std::vector<Box>& nonrigid_props) {
  Value shared_map = forward_backbone(image, params);
  InjectedMaps inj;
  if (params.config.injection_site != InjectionSite::none)
    inj = compute_injection(shared_map, rigid_props, nonrigid_props, params);
  return event_head(event_pooled_input(shared_map, params), inj, params);
}

namespace {

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::istream& is, const char* what) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw ParseError(std::string("DODC: truncated while reading ") + what);
  return v;
}

uint64_t get_u64(std::istream& is, const char* what) {
  uint64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw ParseError(std::string("DODC: truncated while reading ") + what);
  return v;
}

Tensor string_to_tensor(const std::string& s) {
  Tensor t({std::max<int>(1, static_cast<int>(s.size()))});
  for (size_t i = 0; i < s.size(); ++i) t.data[i] = static_cast<double>(static_cast<uint8_t>(s[i]));
  return t;
}

std::string tensor_to_string(const Tensor& t) {
  std::string s;
  for (double v : t.data) {
    if (v < 0 || v > 255 || v != std::floor(v)) throw ParseError("DODC: invalid string tensor");
    if (v != 0) s.push_back(static_cast<char>(static_cast<uint8_t>(v)));
  }
  return s;
}

}  // namespace

void save_network(const NetworkParams& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open for writing: " + path);
  os.write("DODC", 4);
  os.put(1);  // version
  put_u64(os, params.config.hash());

  std::vector<std::pair<std::string, Tensor>> records;
  records.emplace_back("__meta.config", string_to_tensor(params.config.to_json_string()));
  records.emplace_back("__meta.stage", Tensor::scalar(params.stage));
  const ParamGroup* gs[] = {&params.shared, &params.rigid_branch, &params.nonrigid_branch,
                            &params.event_branch};
  for (const ParamGroup* g : gs)
    for (const auto& [name, v] : g->params) records.emplace_back(g->name + "/" + name, v.val());

  put_u64(os, records.size());
  for (const auto& [name, t] : records) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_dten(os, t);
  }
  if (!os) throw ParseError("write failed: " + path);
}

NetworkParams load_network(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "DODC", 4) != 0) throw ParseError("DODC: bad magic in " + path);
  const int version = is.get();
  if (version != 1) throw ParseError("DODC: unsupported version " + std::to_string(version));
  const uint64_t stored_hash = get_u64(is, "config hash");
  const uint64_t count = get_u64(is, "record count");
  if (count > 1u << 20) throw ParseError("DODC: implausible record count");

  std::vector<std::pair<std::string, Tensor>> records;
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t len = get_u32(is, "name length");
    if (len > 4096) throw ParseError("DODC: implausible name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw ParseError("DODC: truncated name");
    records.emplace_back(std::move(name), read_dten(is));
  }

  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : records)
      if (n == name) return t;
    throw ParseError("DODC: missing record '" + name + "' in " + path);
  };

  ArchConfig config = ArchConfig::from_json_string(tensor_to_string(find("__meta.config")));
  if (config.hash() != stored_hash)
    throw ParseError("DODC: config hash mismatch in " + path +
                     " (file tampered or config altered)");

  // build the skeleton for expected names/shapes, then fill from records
  NetworkParams p = build_network(config, 0);
  p.stage = static_cast<int>(find("__meta.stage").data.at(0));
  for (ParamGroup* g : p.groups()) {
    for (auto& [name, v] : g->params) {
      const Tensor& t = find(g->name + "/" + name);
      if (t.shape != v.val().shape)
        throw ParseError("DODC: shape mismatch for " + g->name + "/" + name + ": file has " +
                         shape_str(t.shape) + ", config implies " + shape_str(v.val().shape));
      v = Value(t, true);
    }
  }
  return p;
}

}  // namespace dod
