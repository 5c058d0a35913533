// Command-line surface for the hierarchical similarity engine: dataset
// synthesis, training, zero-shot retrieval evaluation, pair inference,
// attribution reports, edge-store inspection, and the ablation/sweep
// harnesses.

#include <simgraph/attribution.hpp>
#include <simgraph/config.hpp>
#include <simgraph/dataset.hpp>
#include <simgraph/eval.hpp>
#include <simgraph/io.hpp>
#include <simgraph/model.hpp>
#include <simgraph/train.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace simgraph;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string checkpoint;
  std::string k_list = "1,2,4,8";
  Index slice_rows = 64;
};

Config load_config(const CommonArgs& args) {
  Config cfg = args.config_path.empty() ? Config{} : parse_config_file(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  return cfg;
}

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> ks;
  for (const auto& part : split(text, ',')) {
    const std::string t = trim(part);
    if (t.empty()) continue;
    try {
      ks.push_back(std::stoi(t));
    } catch (const std::exception&) {
      throw ConfigError("bad K list entry: " + t);
    }
  }
  if (ks.empty()) throw ConfigError("empty K list");
  return ks;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& part : split(text, ',')) {
    const std::string t = trim(part);
    if (t.empty()) continue;
    try {
      seeds.push_back(static_cast<std::uint64_t>(std::stoull(t)));
    } catch (const std::exception&) {
      throw ConfigError("bad seed list entry: " + t);
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

std::vector<Index> dataset_channels(const Dataset& data) {
  if (data.empty()) throw ConfigError("dataset is empty");
  std::vector<Index> channels;
  for (const auto& level : data.front().levels) channels.push_back(level.channels());
  for (const auto& s : data) {
    if (s.levels.size() != channels.size()) {
      throw ConfigError("samples disagree on level count");
    }
    for (std::size_t l = 0; l < channels.size(); ++l) {
      if (s.levels[l].channels() != channels[static_cast<std::size_t>(l)]) {
        throw ConfigError("samples disagree on channel counts at level " + std::to_string(l + 1));
      }
    }
  }
  return channels;
}

int dataset_class_count(const Dataset& data) {
  int max_label = -1;
  for (const auto& s : data) max_label = std::max(max_label, s.label);
  return max_label + 1;
}

/// Model for inference-style commands: restored from a checkpoint when given,
/// otherwise deterministically initialized from the config seed.
Model<double> resolve_model(const CommonArgs& args, const Config& cfg, const Dataset& data) {
  if (!args.checkpoint.empty()) {
    return read_checkpoint_file<double>(args.checkpoint, cfg).model;
  }
  return make_model<double>(dataset_channels(data), cfg.r, cfg.top_k(), cfg.gamma, cfg.seed);
}

int cmd_synth(const CommonArgs& args) {
  const Config cfg = load_config(args);
  if (args.out_dir.empty()) throw ConfigError("synth needs --out DIR");
  const auto data = synthesize_dataset(cfg.synth_spec(), cfg.seed);
  const std::string manifest = write_dataset(args.out_dir, data);
  std::cout << "wrote " << data.size() << " samples (" << cfg.synth_classes << " classes) to "
            << args.out_dir << "\n";
  std::cout << "manifest: " << manifest << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& manifest) {
  const Config cfg = load_config(args);
  if (args.out_dir.empty()) throw ConfigError("train needs --out DIR");
  const Dataset data = load_dataset(manifest);
  auto state = init_train_state<double>(cfg, dataset_channels(data), dataset_class_count(data));
  train_run(state, data, cfg.epochs, StepOptions{}, [](int epoch, const StepMetrics& m) {
    std::printf("epoch %3d  level_loss %.6f  overall_loss %.6f\n", epoch + 1, m.level_loss,
                m.overall_loss);
  });
  fs::create_directories(args.out_dir);
  const std::string ckpt = (fs::path(args.out_dir) / "checkpoint.bin").string();
  write_checkpoint_file(ckpt, state);
  write_edges_file((fs::path(args.out_dir) / "edges.avse").string(), state.model.edges);
  {
    std::ofstream out((fs::path(args.out_dir) / "params.avsp").string(), std::ios::binary);
    write_params(out, state.model.params);
  }
  std::ofstream cfg_echo((fs::path(args.out_dir) / "config.txt").string());
  cfg_echo << serialize_config(cfg);
  std::cout << "checkpoint: " << ckpt << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& manifest, const std::string& variant_name_) {
  const Config cfg = load_config(args);
  const Dataset data = load_dataset(manifest);
  const auto ks = parse_k_list(args.k_list);
  const Variant variant = parse_variant(variant_name_);
  const auto model = resolve_model(args, cfg, data);
  const auto enc = encode_dataset(model, data);
  const auto ctx = make_inference_context(model);
  SlicedSimilarity<double> provider(model, ctx, enc, args.slice_rows, variant);
  const RecallResult rec = recall_at_k(provider, dataset_labels(data), ks);

  std::printf("%8s  %10s\n", "K", "Recall@K");
  for (std::size_t t = 0; t < rec.ks.size(); ++t) {
    std::printf("%8d  %10.4f\n", rec.ks[t], rec.recalls[t]);
  }
  nlohmann::ordered_json j;
  j["ks"] = rec.ks;
  j["recalls"] = rec.recalls;
  j["n_queries"] = rec.n_queries;
  j["variant"] = variant_name(variant);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& path_a, const std::string& path_b) {
  const Config cfg = load_config(args);
  Dataset data;
  data.push_back(read_pyramid_file<double>(path_a));
  data.push_back(read_pyramid_file<double>(path_b));
  const auto model = resolve_model(args, cfg, data);
  const auto ctx = make_inference_context(model);
  const auto a = encode_sample(model, data[0]);
  const auto b = encode_sample(model, data[1]);
  const auto outcome = infer_pair(model, ctx, a, b);
  std::printf("%.6f\n", outcome.rectified.overall);
  for (std::size_t l = 0; l < outcome.rectified.level_sums.size(); ++l) {
    std::printf("level %zu sum: %.6f\n", l + 1, outcome.rectified.level_sums[l]);
  }
  return 0;
}

int cmd_attribute(const CommonArgs& args, const std::string& path_a, const std::string& path_b,
                  int top_n, const std::string& key_name) {
  const Config cfg = load_config(args);
  if (args.out_dir.empty()) throw ConfigError("attribute needs --out DIR");
  Dataset data;
  data.push_back(read_pyramid_file<double>(path_a));
  data.push_back(read_pyramid_file<double>(path_b));
  const auto model = resolve_model(args, cfg, data);
  const auto ctx = make_inference_context(model);
  EncodeOptions eopts;
  eopts.keep_cams = true;
  const auto a = encode_sample(model, data[0], eopts);
  const auto b = encode_sample(model, data[1], eopts);
  const auto outcome = infer_pair(model, ctx, a, b);

  std::vector<Vector<double>> p(outcome.reliability.size());
  for (std::size_t l = 0; l < p.size(); ++l) p[l] = outcome.reliability[l].values;
  const auto lambdas = node_sensitivities(model.dim(), p, ctx.w_tilde);

  const RankKey key = parse_rank_key(key_name);
  const std::size_t total = outcome.nodes.size() * static_cast<std::size_t>(model.dim());
  const std::size_t top = top_n <= 0 ? total : std::min<std::size_t>(static_cast<std::size_t>(top_n), total);
  auto report = rank_nodes(outcome.nodes, p, lambdas, outcome.rectified.overall, key, top);
  report.id_a = fs::path(path_a).stem().string();
  report.id_b = fs::path(path_b).stem().string();

  const std::string tag = report.id_a + "__" + report.id_b;
  export_saliency(a.cams, b.cams, report.nodes, args.out_dir, tag);
  const std::string report_path = (fs::path(args.out_dir) / (tag + ".json")).string();
  write_report(report, report_path);
  std::cout << "overall similarity: " << outcome.rectified.overall << "\n";
  std::cout << "report: " << report_path << "\n";
  return 0;
}

int cmd_edges(const std::string& store_path) {
  const auto store = read_edges_file<double>(store_path);
  std::printf("levels: %lld  nodes: %lld  gamma: %.4f  updates: %llu\n",
              static_cast<long long>(store.depth()), static_cast<long long>(store.dim()),
              static_cast<double>(store.gamma), static_cast<unsigned long long>(store.update_count));
  for (std::size_t pair = 0; pair < store.omega.size(); ++pair) {
    const auto& omega = store.omega[pair];
    const double lo = omega.minCoeff();
    const double hi = omega.maxCoeff();
    std::printf("\nedges level %zu -> %zu    min %.4f  max %.4f  mean %.4f\n", pair + 2, pair + 1,
                lo, hi, omega.mean());
    // 10-bin histogram.
    const double width = hi > lo ? (hi - lo) / 10.0 : 1.0;
    std::vector<long> bins(10, 0);
    for (Index i = 0; i < omega.rows(); ++i) {
      for (Index j = 0; j < omega.cols(); ++j) {
        int bin = static_cast<int>((omega(i, j) - lo) / width);
        bin = std::min(9, std::max(0, bin));
        ++bins[static_cast<std::size_t>(bin)];
      }
    }
    for (int bin = 0; bin < 10; ++bin) {
      std::printf("  [%+.4f, %+.4f)  %ld\n", lo + bin * width, lo + (bin + 1) * width,
                  bins[static_cast<std::size_t>(bin)]);
    }
    // Strongest correlations.
    std::vector<std::tuple<double, Index, Index>> top;
    for (Index i = 0; i < omega.rows(); ++i) {
      for (Index j = 0; j < omega.cols(); ++j) top.emplace_back(omega(i, j), i, j);
    }
    std::partial_sort(top.begin(), top.begin() + std::min<std::size_t>(5, top.size()), top.end(),
                      [](const auto& x, const auto& y) { return std::get<0>(x) > std::get<0>(y); });
    std::printf("  top correlations:");
    for (std::size_t t = 0; t < std::min<std::size_t>(5, top.size()); ++t) {
      std::printf(" (%lld,%lld)=%.4f", static_cast<long long>(std::get<1>(top[t])),
                  static_cast<long long>(std::get<2>(top[t])), std::get<0>(top[t]));
    }
    std::printf("\n");
  }
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& seeds_text, const std::string& variants_text) {
  const Config cfg = load_config(args);
  const auto seeds = parse_seed_list(seeds_text);
  const auto ks = parse_k_list(args.k_list);
  std::vector<Variant> variants;
  if (variants_text.empty()) {
    variants = default_variants();
  } else {
    for (const auto& part : split(variants_text, ',')) {
      const std::string t = trim(part);
      if (!t.empty()) variants.push_back(parse_variant(t));
    }
  }
  const auto rows = run_ablation(cfg, variants, seeds, ks,
                                 [](const std::string& msg) { std::cerr << msg << "\n"; });
  const std::string hash = config_hash(cfg);
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    const std::string csv = (fs::path(args.out_dir) / "ablation.csv").string();
    std::ofstream out(csv);
    write_ablation_csv(out, rows, ks, hash);
    std::cout << "csv: " << csv << "\n";
  }
  write_ablation_csv(std::cout, rows, ks, hash);
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& seeds_text, const std::string& param,
              const std::string& values_text) {
  const Config cfg = load_config(args);
  const auto seeds = parse_seed_list(seeds_text);
  auto log = [](const std::string& msg) { std::cerr << msg << "\n"; };
  std::vector<SweepPoint> points;
  if (param == "k") {
    std::vector<Index> values;
    if (values_text.empty()) {
      for (Index k = 1; k <= cfg.r; k *= 2) values.push_back(k);
      if (values.back() != cfg.r) values.push_back(cfg.r);
    } else {
      for (int k : parse_k_list(values_text)) values.push_back(k);
    }
    points = sweep_top_k(cfg, values, seeds, log);
  } else if (param == "r") {
    std::vector<Index> values{32, 64, 128};
    if (!values_text.empty()) {
      values.clear();
      for (int r : parse_k_list(values_text)) values.push_back(r);
    }
    points = sweep_embedding_dim(cfg, values, seeds, log);
  } else {
    throw ConfigError("sweep --param must be k or r, got: " + param);
  }
  const std::string hash = config_hash(cfg);
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    const std::string csv = (fs::path(args.out_dir) / ("sweep_" + param + ".csv")).string();
    std::ofstream out(csv);
    write_sweep_csv(out, points, param, hash);
    std::cout << "csv: " << csv << "\n";
  }
  write_sweep_csv(std::cout, points, param, hash);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical similarity graph engine"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string manifest, path_a, path_b, store_path;
  std::string variant = "full_avsl";
  std::string seeds_text = "1,2,3";
  std::string variants_text, k_values_text;
  std::string sweep_param = "k";
  std::string rank_key = "reliability";
  int top_n = 16;

  auto add_common = [&](CLI::App* cmd, bool with_out) {
    cmd->add_option("--config", args.config_path, "config file (flat key = value)");
    cmd->add_option("--seed", args.seed, "seed override");
    if (with_out) cmd->add_option("--out", args.out_dir, "output directory");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset (AVSF files + manifest)");
  add_common(synth, true);

  auto* train = app.add_subcommand("train", "train on a manifest and write a checkpoint");
  add_common(train, true);
  train->add_option("manifest", manifest, "dataset manifest")->required();

  auto* eval = app.add_subcommand("eval", "zero-shot Recall@K over a manifest");
  add_common(eval, false);
  eval->add_option("manifest", manifest, "dataset manifest")->required();
  eval->add_option("--checkpoint", args.checkpoint, "trained checkpoint");
  eval->add_option("--k-list", args.k_list, "comma-separated K values");
  eval->add_option("--slice-rows", args.slice_rows, "rows per similarity slice");
  eval->add_option("--variant", variant, "distance variant");

  auto* infer = app.add_subcommand("infer", "overall similarity of two feature files");
  add_common(infer, false);
  infer->add_option("a", path_a, "first .avsf file")->required();
  infer->add_option("b", path_b, "second .avsf file")->required();
  infer->add_option("--checkpoint", args.checkpoint, "trained checkpoint");

  auto* attribute = app.add_subcommand("attribute", "per-node attribution report + saliency arrays");
  add_common(attribute, true);
  attribute->add_option("a", path_a, "first .avsf file")->required();
  attribute->add_option("b", path_b, "second .avsf file")->required();
  attribute->add_option("--checkpoint", args.checkpoint, "trained checkpoint");
  attribute->add_option("--top", top_n, "nodes to report (0 = all)");
  attribute->add_option("--key", rank_key, "ranking key: reliability|node_value|contribution");

  auto* edges = app.add_subcommand("edges", "edge store statistics");
  edges->add_option("store", store_path, ".avse edge store")->required();

  auto* ablate = app.add_subcommand("ablate", "ablation table on the synthetic benchmark");
  add_common(ablate, true);
  ablate->add_option("--seeds", seeds_text, "comma-separated seeds");
  ablate->add_option("--variants", variants_text, "comma-separated variant names");
  ablate->add_option("--k-list", args.k_list, "comma-separated K values");

  auto* sweep = app.add_subcommand("sweep", "Recall@1 sweep over the rectification fan-in k");
  add_common(sweep, true);
  sweep->add_option("--seeds", seeds_text, "comma-separated seeds");
  sweep->add_option("--param", sweep_param, "swept hyperparameter: k or r");
  sweep->add_option("--k-values", k_values_text, "comma-separated values for the swept parameter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(args);
    if (train->parsed()) return cmd_train(args, manifest);
    if (eval->parsed()) return cmd_eval(args, manifest, variant);
    if (infer->parsed()) return cmd_infer(args, path_a, path_b);
    if (attribute->parsed()) return cmd_attribute(args, path_a, path_b, top_n, rank_key);
    if (edges->parsed()) return cmd_edges(store_path);
    if (ablate->parsed()) return cmd_ablate(args, seeds_text, variants_text);
    if (sweep->parsed()) return cmd_sweep(args, seeds_text, sweep_param, k_values_text);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
