#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>

#include "evssm/checkpoint.hpp"
#include "evssm/digest.hpp"
#include "evssm/event_io.hpp"

using namespace evssm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string binary() {
  const char* bin = std::getenv("EVSSM_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "EVSSM_BIN must point at the CLI binary");
  return bin;
}

int run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("evssm_cli_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("gen-data: determinism, manifest digests, degenerate sizes, usage errors") {
  TempDir tmp;
  const std::string a = tmp.file("a.evs"), b = tmp.file("b.evs");

  CHECK(run("gen-data --sequences 24 --seed 7 --out " + a) == 0);
  CHECK(run("gen-data --sequences 24 --seed 7 --out " + b) == 0);
  CHECK(slurp(a) == slurp(b));

  json manifest = json::parse(slurp(a + ".manifest.json"));
  CHECK(manifest["command"] == "gen-data");
  CHECK(manifest["outputs"][a] == file_digest(a));

  // datasets written by the CLI pass the container validator
  io::EventDataset ds = io::read_dataset_file(a);
  CHECK(ds.sequences.size() == 24);

  const std::string empty = tmp.file("empty.evs");
  CHECK(run("gen-data --sequences 0 --seed 1 --out " + empty) == 0);
  CHECK(fs::file_size(empty) == 18);

  CHECK(run("gen-data --out " + a) == 2);          // missing --seed
  CHECK(run("gen-data --seed 1 --out " + a + " --classes 3") == 2);  // two-class task
}

TEST_CASE("train: outputs, epoch-zero initialization, manifest rerun") {
  TempDir tmp;
  const std::string data = tmp.file("train.evs");
  REQUIRE(run("gen-data --sequences 60 --seed 9 --out " + data) == 0);

  const std::string ckpt = tmp.file("model.ckpt.json");
  CHECK(run("train --data " + data + " --epochs 2 --seed 3 --out " + ckpt) == 0);
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(ckpt + ".report.json"));
  CHECK(fs::exists(ckpt + ".losses.csv"));
  model::Model m = model::load_checkpoint(ckpt);  // schema validates
  CHECK(m.config.num_channels == 8);
  CHECK(slurp(ckpt + ".losses.csv").starts_with("epoch,train_loss,eval_loss,eval_acc\n"));

  // --epochs 0 leaves the checkpoint at initialization regardless of mode
  const std::string c0 = tmp.file("init_a.json"), c1 = tmp.file("init_b.json");
  CHECK(run("train --data " + data + " --epochs 0 --seed 3 --out " + c0) == 0);
  CHECK(run("train --data " + data + " --epochs 0 --seed 3 --lambda-mode free --out " + c1) == 0);
  CHECK(slurp(c0) == slurp(c1));

  // replaying the manifest reproduces the checkpoint bit for bit
  const std::string before = file_digest(ckpt);
  CHECK(run("rerun " + ckpt + ".manifest.json") == 0);
  CHECK(file_digest(ckpt) == before);

  CHECK(run("train --data " + tmp.file("nope.evs") + " --seed 1 --out " + ckpt) == 3);
}

TEST_CASE("train: divergence exits with its own code and still writes the report") {
  TempDir tmp;
  const std::string data = tmp.file("d.evs");
  REQUIRE(run("gen-data --sequences 40 --seed 21 --out " + data) == 0);

  const std::string cfg = tmp.file("explode.json");
  {
    std::ofstream out(cfg);
    out << R"({"train": {"learning_rate": 1e9, "max_epochs": 6}})";
  }
  const std::string ckpt = tmp.file("m.json");
  CHECK(run("train --data " + data + " --config " + cfg + " --seed 2 --out " + ckpt) == 4);
  CHECK(fs::exists(ckpt + ".report.json"));
  json report = json::parse(slurp(ckpt + ".report.json"));
  CHECK(report["diverged"] == true);
  // the written checkpoint still validates (last finite iterate)
  model::Model m = model::load_checkpoint(ckpt);
  CHECK(m.config.num_classes == 2);
}

TEST_CASE("hw-sweep: grid shape, clean point, thread independence") {
  TempDir tmp;
  const std::string data = tmp.file("d.evs");
  REQUIRE(run("gen-data --sequences 40 --seed 5 --out " + data) == 0);
  const std::string ckpt = tmp.file("m.json");
  REQUIRE(run("train --data " + data + " --epochs 2 --seed 5 --out " + ckpt) == 0);

  const std::string sweep = tmp.file("sweep");
  CHECK(run("hw-sweep --checkpoint " + ckpt + " --data " + data +
            " --noise-lsb 0 --lambda-var 0 0.05 0.1 0.15 --repeats 10 --seed 2 --out " + sweep) ==
        0);

  const std::string csv = slurp(sweep + ".csv");
  std::size_t rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == 1 + 4 * 10);  // header + grid

  json summary = json::parse(slurp(sweep + ".summary.json"));
  const double clean = summary["clean_quantized_accuracy"].get<double>();
  CHECK(summary["grid"][0]["sigma_rel"] == 0.0);
  CHECK(summary["grid"][0]["mean_accuracy"].get<double>() == clean);
  CHECK(summary["grid"][0]["std_accuracy"].get<double>() == 0.0);

  // identical output bytes regardless of thread count
  const std::string sweep4 = tmp.file("sweep4");
  CHECK(run("hw-sweep --checkpoint " + ckpt + " --data " + data +
            " --noise-lsb 0 --lambda-var 0 0.05 0.1 0.15 --repeats 10 --seed 2 --threads 4 "
            "--out " + sweep4) == 0);
  CHECK(slurp(sweep4 + ".csv") == csv);

  CHECK(run("hw-sweep --checkpoint " + tmp.file("missing.json") + " --data " + data +
            " --seed 1 --out " + sweep) == 3);
}

TEST_CASE("analyze: micro flops, resnet reconciliation, power preset") {
  TempDir tmp;
  const std::string cfg = tmp.file("flops.json");
  {
    std::ofstream out(cfg);
    out << R"({"sequence_length": 1, "embedding_dim": 1,
               "stages": [{"blocks":1,"h_in":1,"h_state":1,"h_out":1,"pool_stride":1}]})";
  }
  const std::string rep = tmp.file("report.json");
  CHECK(run("analyze --flops-config " + cfg + " --out " + rep) == 0);
  json doc = json::parse(slurp(rep));
  CHECK(doc["ssm_flops"]["total_flops"] == 15);

  const std::string rep2 = tmp.file("resnet.json");
  CHECK(run("analyze --resnet 18 --frames 180 --out " + rep2) == 0);
  json doc2 = json::parse(slurp(rep2));
  CHECK(doc2["resnet_flops"]["reconciliation"]["reference_total_gflops"] == 104.28);

  const std::string rep3 = tmp.file("power.json");
  CHECK(run("analyze --power-config paper --out " + rep3) == 0);
  json doc3 = json::parse(slurp(rep3));
  CHECK(doc3["power"]["total_mw"].get<double>() == doctest::Approx(34.0));

  CHECK(run("analyze --out " + rep) == 2);  // nothing requested
}

TEST_CASE("calibrate-demo reports near-exact linear recovery") {
  TempDir tmp;
  const std::string rep = tmp.file("cal.json");
  CHECK(run("calibrate-demo --seed 11 --out " + rep) == 0);
  json doc = json::parse(slurp(rep));
  CHECK(doc["post_nrmse"].get<double>() < 0.001);
  CHECK(doc["fused_vs_sequential_max_diff"].get<double>() <= 1e-12);
}
