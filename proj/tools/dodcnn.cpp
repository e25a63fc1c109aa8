// dodcnn: data generation, staged training, evaluation, and ablation for the
// direct-injection event/detection network. Progress goes to stderr; results
// are JSON on stdout (or --out).
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "CLI11.hpp"
#include "dod/gradcheck.hpp"
#include "dod/ops.hpp"
#include "dod/pipeline.hpp"
#include "json.hpp"

using namespace dod;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "dodcnn 0.1.0";

// rng stream per (seed, stage, variant); must match the pipeline's split so
// CLI runs reproduce library-driven runs
std::mt19937_64 stage_rng(uint64_t seed, int stage, uint64_t variant_tag = 0) {
  return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(stage) +
                         variant_tag * 0x1000003ULL);
}

void emit(const json& payload, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << payload.dump(2) << "\n";
  } else {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot open --out file: " + out_path);
    os << payload.dump(2) << "\n";
  }
}

json provenance(uint64_t seed, const ArchConfig& arch) {
  return json{{"seed", seed}, {"config_hash", arch.hash()}, {"version", kVersion}};
}

Profile profile_from(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw CLI::ValidationError("--profile must be desk or paper");
}

TrainerConfig load_trainer_config(const std::string& config_file, Profile profile,
                                  uint64_t seed, const std::string& injection) {
  TrainerConfig cfg = config_file.empty() ? TrainerConfig::defaults(profile)
                                          : TrainerConfig::parse_file(config_file, profile);
  cfg.seed = seed;
  if (!injection.empty()) cfg.injection_site = injection_site_from_string(injection);
  return cfg;
}

json loss_summary(const std::vector<double>& trace) {
  if (trace.empty()) return json{{"iterations", 0}};
  const size_t tail = std::max<size_t>(1, trace.size() / 10);
  const double first = std::accumulate(trace.begin(), trace.begin() + static_cast<long>(tail), 0.0) /
                       static_cast<double>(tail);
  const double last = std::accumulate(trace.end() - static_cast<long>(tail), trace.end(), 0.0) /
                      static_cast<double>(tail);
  return json{{"iterations", trace.size()}, {"first_decile_mean", first}, {"last_decile_mean", last}};
}

int cmd_gen_data(const std::string& out_dir, int n_train, int n_test, uint64_t seed,
                 const std::string& out_json) {
  SceneConfig scfg;
  std::cerr << "generating " << n_train << "/" << n_test << " images (seed " << seed << ")\n";
  Dataset ds = generate_dataset(seed, n_train, n_test, scfg);
  write_dataset(out_dir, ds);
  json result{{"command", "gen-data"},
              {"dir", out_dir},
              {"n_train", n_train},
              {"n_test", n_test},
              {"seed", seed},
              {"version", kVersion}};
  emit(result, out_json);
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_file,
              const std::string& out_dir, uint64_t seed, const std::string& stage_sel,
              const std::string& injection, const std::string& profile_str,
              const std::string& init_ckpt, const std::string& out_json) {
  const Profile profile = profile_from(profile_str);
  TrainerConfig cfg = load_trainer_config(config_file, profile, seed, injection);
  Dataset ds = read_dataset(data_dir);
  std::filesystem::create_directories(out_dir);

  json stages_out = json::array();
  auto run_one = [&](int id, NetworkParams& params) {
    const StageConfig& sc = id == 1 ? cfg.stage1 : id == 2 ? cfg.stage2 : cfg.stage3;
    std::cerr << "stage " << id << ": " << sc.iterations << " iterations, lr " << sc.lr << "\n";
    std::mt19937_64 rng =
        id == 3 ? stage_rng(cfg.seed, 3, static_cast<uint64_t>(params.config.injection_site) + 1)
                : stage_rng(cfg.seed, id);
    StageResult r = run_stage(sc, params, ds.train, rng, cfg.batch);
    const std::string path = out_dir + "/stage" + std::to_string(id) + ".dodc";
    save_network(params, path);
    std::cerr << "stage " << id << " checkpoint: " << path << "\n";
    stages_out.push_back({{"stage", id}, {"checkpoint", path}, {"loss", loss_summary(r.loss_trace)}});
  };

  NetworkParams params = [&]() {
    if (stage_sel == "all" || stage_sel == "1") {
      ArchConfig arch = cfg.arch;
      arch.injection_site = InjectionSite::none;  // stages 1-2 never inject
      return build_network(arch, cfg.seed);
    }
    if (init_ckpt.empty())
      throw CLI::ValidationError("--stage " + stage_sel + " requires --init CHECKPOINT");
    return load_network(init_ckpt);
  }();

  if (stage_sel == "all") {
    run_one(1, params);
    run_one(2, params);
    params.config.injection_site = cfg.injection_site;
    run_one(3, params);
  } else {
    const int id = std::stoi(stage_sel);
    if (id == 3) params.config.injection_site = cfg.injection_site;
    run_one(id, params);
  }

  json result{{"command", "train"}, {"stages", stages_out}};
  result.update(provenance(cfg.seed, params.config));
  emit(result, out_json);
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt, const std::string& task,
             bool fusion, const std::string& out_json) {
  NetworkParams params = load_network(ckpt);
  Dataset ds = read_dataset(data_dir);
  std::cerr << "evaluating " << ds.test.size() << " test images (injection "
            << to_string(params.config.injection_site) << ")\n";
  SplitMetrics m = evaluate_split(params, ds.test, ProposalConfig{}, fusion);

  json metrics;
  if (task == "event" || task == "all") metrics["event_ap"] = m.event_ap;
  if (task == "rigid" || task == "all") metrics["rigid_map"] = m.rigid_map;
  if (task == "nonrigid" || task == "all") metrics["nonrigid_map"] = m.nonrigid_map;
  if (fusion) metrics["fused_event_ap"] = m.fused_event_ap;

  json result{{"command", "eval"},
              {"split", "test"},
              {"num_images", ds.test.size()},
              {"task", task},
              {"injection_site", to_string(params.config.injection_site)},
              {"stage", params.stage},
              {"metrics", metrics}};
  result.update(provenance(ds.manifest.seed, params.config));
  emit(result, out_json);
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& config_file,
               const std::string& injection_list, uint64_t seed, const std::string& profile_str,
               const std::string& out_json) {
  const Profile profile = profile_from(profile_str);
  TrainerConfig cfg = load_trainer_config(config_file, profile, seed, "");
  Dataset ds = read_dataset(data_dir);

  std::vector<InjectionSite> sites;
  std::stringstream ss(injection_list);
  std::string tok;
  while (std::getline(ss, tok, ',')) sites.push_back(injection_site_from_string(tok));
  if (sites.empty()) throw CLI::ValidationError("--injection list is empty");

  std::cerr << "ablation: shared stages 1-2, then stage 3 per site\n";
  NetworkParams stage2 = train_through_stage2(cfg, ds.train);

  json rows = json::array();
  for (InjectionSite site : sites) {
    std::cerr << "stage 3 variant: " << to_string(site) << "\n";
    NetworkParams variant = train_stage3_variant(stage2, site, cfg, ds.train);
    std::vector<ScoredPrediction> preds;
    for (size_t i = 0; i < ds.test.size(); ++i) {
      ImageFeatures f =
          compute_image_features(ds.test[i], static_cast<int>(i), stage2, cfg.batch.proposals);
      preds.push_back({event_malicious_prob(f, variant),
                       ds.test[i].ann.event_label == kEventMalicious});
    }
    const double ap = average_precision(preds);
    std::cerr << "  event AP " << ap << "\n";
    rows.push_back({{"injection", to_string(site)}, {"event_ap", ap}});
  }

  json result{{"command", "ablate"}, {"rows", rows}};
  result.update(provenance(cfg.seed, cfg.arch));
  emit(result, out_json);
  return 0;
}

int cmd_gradcheck(const std::string& out_json) {
  std::mt19937_64 rng(2024);
  auto rand_t = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(s));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
  };

  json ops = json::array();
  bool all_ok = true;
  auto check = [&](const char* name, const ScalarFn& fn, std::vector<Tensor> inputs) {
    double worst = 0.0;
    for (int i = 0; i < 5; ++i)
      worst = std::max(worst, grad_check(fn, inputs, 1e-5, name));
    const bool ok = worst < 1e-4;
    all_ok &= ok;
    std::cerr << name << ": max rel err " << worst << (ok ? "" : "  <-- FAIL") << "\n";
    ops.push_back({{"op", name}, {"max_rel_err", worst}, {"pass", ok}});
  };

  check("conv2d",
        [](const std::vector<Value>& v) { return sum(conv2d(v[0], v[1], v[2], 1, 1)); },
        {rand_t({2, 5, 5}), rand_t({3, 2, 3, 3}), rand_t({3})});
  check("fully_connected",
        [](const std::vector<Value>& v) { return sum(fully_connected(v[0], v[1], v[2])); },
        {rand_t({5}), rand_t({3, 5}), rand_t({3})});
  check("relu", [](const std::vector<Value>& v) { return sum(relu(v[0])); },
        {rand_t({2, 4, 4}, 0.2, 1.0)});
  check("max_pool2d", [](const std::vector<Value>& v) { return sum(max_pool2d(v[0], 2, 2)); },
        {rand_t({1, 4, 4})});
  check("global_avg_pool",
        [](const std::vector<Value>& v) { return sum(global_avg_pool(v[0])); },
        {rand_t({3, 4, 4})});
  check("softmax_cross_entropy",
        [](const std::vector<Value>& v) { return softmax_cross_entropy(v[0], 1); },
        {rand_t({4}, -2, 2)});
  check("roi_pool",
        [](const std::vector<Value>& v) {
          return sum(roi_pool(v[0], Box(0.5, 0.5, 5.5, 5.5), 3, 3));
        },
        {rand_t({1, 6, 6})});
  check("channel_concat",
        [](const std::vector<Value>& v) { return sum(channel_concat({v[0], v[1]})); },
        {rand_t({2, 3, 3}), rand_t({1, 3, 3})});

  // batch_pool is gradient-blocking by contract: verify the block is exact
  {
    RoiBatch batch;
    for (int l = 0; l < 3; ++l) {
      batch.maps.emplace_back(rand_t({2, 3, 3}), true);
      batch.scores.push_back(0.5);
      batch.source_boxes.emplace_back(0, 0, 1, 1);
    }
    // route the pooled map through a trainable conv so backward() has a
    // differentiable root; the RoI maps must still see exactly zero gradient
    Value w(rand_t({1, 2, 1, 1}), true);
    sum(conv2d(batch_pool(batch), w, Value(Tensor::zeros({1}), true))).backward();
    bool blocked = true;
    for (Value& m : batch.maps)
      for (double g : m.grad().data) blocked &= g == 0.0;
    all_ok &= blocked;
    std::cerr << "batch_pool: " << (blocked ? "blocked (exact zero)" : "GRADIENT LEAK") << "\n";
    ops.push_back({{"op", "batch_pool"},
                   {"status", blocked ? "blocked (exact zero)" : "gradient leak"},
                   {"pass", blocked}});
  }

  json result{{"command", "gradcheck"}, {"ops", ops}, {"pass", all_ok}, {"version", kVersion}};
  emit(result, out_json);
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DOD-CNN training and evaluation toolkit"};
  app.require_subcommand(1);

  std::string data_dir, config_file, out_path, out_dir = ".", stage_sel = "all";
  std::string injection, task = "all", profile_str = "desk", init_ckpt, ckpt;
  std::string injection_list = "none,c6,c7,both";
  uint64_t seed = 0;
  int n_train = 400, n_test = 400;
  bool fusion = false;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--out", out_dir, "dataset directory")->required();
  gen->add_option("--n", n_train, "training images");
  gen->add_option("--n-test", n_test, "test images");
  gen->add_option("--seed", seed, "generator seed");

  CLI::App* train = app.add_subcommand("train", "run the three-stage training");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--config", config_file, "key = value training config");
  train->add_option("--out", out_dir, "checkpoint output directory");
  train->add_option("--seed", seed, "training seed");
  train->add_option("--stage", stage_sel, "1|2|3|all")
      ->check(CLI::IsMember({"1", "2", "3", "all"}));
  train->add_option("--injection", injection, "none|c6|c7|both");
  train->add_option("--init", init_ckpt, "input checkpoint for stages 2/3");
  train->add_option("--profile", profile_str, "desk|paper");
  train->add_option("--json-out", out_path, "write the JSON result here instead of stdout");

  CLI::App* evalc = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  evalc->add_option("--data", data_dir, "dataset directory")->required();
  evalc->add_option("--ckpt", ckpt, "checkpoint file")->required();
  evalc->add_option("--task", task, "event|rigid|nonrigid|all")
      ->check(CLI::IsMember({"event", "rigid", "nonrigid", "all"}));
  evalc->add_flag("--fusion", fusion, "also report late-fusion event AP");
  evalc->add_option("--out", out_path, "write JSON here instead of stdout");

  CLI::App* ablate = app.add_subcommand("ablate", "stage-3 ablation over injection sites");
  ablate->add_option("--data", data_dir, "dataset directory")->required();
  ablate->add_option("--config", config_file, "key = value training config");
  ablate->add_option("--injection", injection_list, "comma list of sites");
  ablate->add_option("--seed", seed, "training seed");
  ablate->add_option("--profile", profile_str, "desk|paper");
  ablate->add_option("--out", out_path, "write JSON here instead of stdout");

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
  gc->add_option("--out", out_path, "write JSON here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(out_dir, n_train, n_test, seed, out_path);
    if (train->parsed())
      return cmd_train(data_dir, config_file, out_dir, seed, stage_sel, injection, profile_str,
                       init_ckpt, out_path);
    if (evalc->parsed()) return cmd_eval(data_dir, ckpt, task, fusion, out_path);
    if (ablate->parsed())
      return cmd_ablate(data_dir, config_file, injection_list, seed, profile_str, out_path);
    if (gc->parsed()) return cmd_gradcheck(out_path);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
