#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef SIMGRAPH_CLI_PATH
#error "SIMGRAPH_CLI_PATH must point at the CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string out_file = (fs::temp_directory_path() / "simgraph_cli_out.txt").string();
  const std::string cmd = std::string(SIMGRAPH_CLI_PATH) + " " + args + " > " + out_file + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult res;
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  std::stringstream buf;
  buf << in.rdbuf();
  res.output = buf.str();
  return res;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "simgraph_cli_ws";
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }

  std::string config() const {
    const fs::path p = root / "config.txt";
    if (!fs::exists(p)) {
      std::ofstream out(p);
      out << "levels = 2\n"
             "r = 8\n"
             "k = 2\n"
             "gamma = 0.9\n"
             "loss = margin\n"
             "lr = 0.01\n"
             "weight_decay = 0.0001\n"
             "batch_size = 8\n"
             "classes_per_batch = 4\n"
             "margin_alpha = 1.2\n"
             "margin_beta = 0.2\n"
             "pa_scale = 16\n"
             "pa_beta = 2\n"
             "pa_tau = 0.2\n"
             "seed = 7\n"
             "epochs = 1\n"
             "synth_shapes = 4x8x8,6x4x4\n"
             "synth_classes = 4\n"
             "synth_samples_per_class = 4\n"
             "synth_noise = 0.2,0.2\n"
             "synth_dropout = 0,0.1\n"
             "synth_concepts = 3\n";
    }
    return p.string();
  }
};

}  // namespace

TEST_CASE("synth is deterministic: identical manifests and file bytes") {
  Workspace ws;
  const std::string out1 = (ws.root / "d1").string();
  const std::string out2 = (ws.root / "d2").string();
  auto r1 = run("synth --config " + ws.config() + " --seed 7 --out " + out1);
  auto r2 = run("synth --config " + ws.config() + " --seed 7 --out " + out2);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(file_bytes(fs::path(out1) / "manifest.txt") == file_bytes(fs::path(out2) / "manifest.txt"));
  for (const auto& entry : fs::directory_iterator(out1)) {
    const auto name = entry.path().filename();
    CHECK(file_bytes(entry.path()) == file_bytes(fs::path(out2) / name));
  }
}

TEST_CASE("infer on the same file prints zero") {
  Workspace ws;
  const std::string out = (ws.root / "data").string();
  REQUIRE(run("synth --config " + ws.config() + " --out " + out).exit_code == 0);
  const std::string sample = (fs::path(out) / "c0_s0.avsf").string();
  const auto res = run("infer --config " + ws.config() + " " + sample + " " + sample);
  REQUIRE(res.exit_code == 0);
  CHECK(res.output.substr(0, 8) == "0.000000");
}

TEST_CASE("full pipeline: train, eval, attribute, edges") {
  Workspace ws;
  const std::string data = (ws.root / "data").string();
  REQUIRE(run("synth --config " + ws.config() + " --out " + data).exit_code == 0);
  const std::string manifest = (fs::path(data) / "manifest.txt").string();

  const std::string run_dir = (ws.root / "run").string();
  const auto train_res = run("train --config " + ws.config() + " --out " + run_dir + " " + manifest);
  REQUIRE(train_res.exit_code == 0);
  const std::string ckpt = (fs::path(run_dir) / "checkpoint.bin").string();
  CHECK(fs::exists(ckpt));

  // eval: aligned table plus JSON.
  const auto eval_res = run("eval --config " + ws.config() + " --checkpoint " + ckpt +
                            " --k-list 1,2 --slice-rows 3 " + manifest);
  REQUIRE(eval_res.exit_code == 0);
  CHECK(eval_res.output.find("Recall@K") != std::string::npos);
  CHECK(eval_res.output.find("\"recalls\"") != std::string::npos);

  // eval with K >= gallery is a config error (exit 2).
  const auto bad_eval = run("eval --config " + ws.config() + " --k-list 99 " + manifest);
  CHECK(bad_eval.exit_code == 2);

  // attribute: report JSON plus saliency pairs.
  const std::string attr_dir = (ws.root / "attr").string();
  const std::string a = (fs::path(data) / "c0_s0.avsf").string();
  const std::string b = (fs::path(data) / "c1_s0.avsf").string();
  const auto attr_res = run("attribute --config " + ws.config() + " --checkpoint " + ckpt +
                            " --out " + attr_dir + " --top 4 " + a + " " + b);
  REQUIRE(attr_res.exit_code == 0);
  CHECK(fs::exists(fs::path(attr_dir) / "c0_s0__c1_s0.json"));
  int pgm = 0, f32 = 0;
  for (const auto& entry : fs::directory_iterator(attr_dir)) {
    if (entry.path().extension() == ".pgm") ++pgm;
    if (entry.path().extension() == ".f32") ++f32;
  }
  CHECK(pgm == 8);  // 4 nodes x 2 samples
  CHECK(f32 == 8);

  // edges subcommand prints stats of the store written next to the checkpoint.
  const auto edges_res = run("edges " + (fs::path(run_dir) / "edges.avse").string());
  REQUIRE(edges_res.exit_code == 0);
  CHECK(edges_res.output.find("top correlations") != std::string::npos);
  const auto missing = run("edges " + (ws.root / "nope.avse").string());
  CHECK(missing.exit_code == 1);
}

TEST_CASE("unknown flags exit with usage code 2") {
  const auto res = run("eval --definitely-not-a-flag x");
  CHECK(res.exit_code == 2);
  const auto no_sub = run("");
  CHECK(no_sub.exit_code == 2);
}

TEST_CASE("ablate and sweep emit self-describing CSV") {
  Workspace ws;
  const fs::path cfg_path = ws.root / "tiny.txt";
  {
    std::ofstream out(cfg_path);
    out << "levels = 2\nr = 8\nk = 2\ngamma = 0.9\nloss = margin\nlr = 0.01\n"
           "batch_size = 8\nclasses_per_batch = 4\nseed = 3\nepochs = 1\n"
           "synth_shapes = 4x8x8,6x4x4\nsynth_classes = 4\nsynth_samples_per_class = 4\n"
           "synth_noise = 0.3,0.2\nsynth_dropout = 0,0.3\nsynth_concepts = 3\n";
  }
  const std::string out_dir = (ws.root / "results").string();
  const auto ab = run("ablate --config " + cfg_path.string() +
                      " --seeds 1 --variants baseline_top_level,full_avsl --k-list 1 --out " + out_dir);
  REQUIRE(ab.exit_code == 0);
  CHECK(ab.output.find("variant,mean_recall@1,std_recall@1,config_hash") != std::string::npos);
  CHECK(ab.output.find("full_avsl") != std::string::npos);
  CHECK(fs::exists(fs::path(out_dir) / "ablation.csv"));

  const auto sw = run("sweep --config " + cfg_path.string() + " --seeds 1 --k-values 1,4 --out " + out_dir);
  REQUIRE(sw.exit_code == 0);
  CHECK(sw.output.find("k,mean_recall@1,std_recall@1,config_hash") != std::string::npos);
  CHECK(fs::exists(fs::path(out_dir) / "sweep_k.csv"));
}
