// Command-line front end: synthetic data generation, training, hardware sweeps,
// FLOPs/power accounting and the ADC calibration demo. Every command resolves its
// full configuration, seeds all randomness explicitly and writes a manifest next
// to its outputs; `rerun` replays a manifest bit-for-bit.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "evssm/analysis.hpp"
#include "evssm/checkpoint.hpp"
#include "evssm/digest.hpp"
#include "evssm/event_io.hpp"
#include "evssm/hardware.hpp"
#include "evssm/trainer.hpp"

using nlohmann::json;
using namespace evssm;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 2,
  exit_io = 3,
  exit_divergence = 4,
  exit_data = 5,
};

int map_error(const Error& e) {
  switch (e.code()) {
    case Errc::io_failure: return exit_io;
    case Errc::divergence: return exit_divergence;
    case Errc::bad_argument:
    case Errc::bad_config: return exit_usage;
    default: return exit_data;
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open for writing: " + path);
  out << text;
  out.flush();
  if (!out) fail(Errc::io_failure, "write failed: " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open for reading: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    fail(Errc::bad_config, path + " is not valid JSON: " + e.what());
  }
  return doc;
}

void write_manifest(const std::string& out_stem, const std::string& command, json config,
                    std::uint64_t master_seed,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_paths) {
  json doc;
  doc["artifact_version"] = kArtifactVersion;
  doc["command"] = command;
  doc["config"] = std::move(config);
  doc["master_seed"] = master_seed;
  json inputs = json::object();
  for (const std::string& p : input_paths) inputs[p] = file_digest(p);
  json outputs = json::object();
  for (const std::string& p : output_paths) outputs[p] = file_digest(p);
  doc["inputs"] = std::move(inputs);
  doc["outputs"] = std::move(outputs);
  write_text_file(out_stem + ".manifest.json", doc.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  io::SyntheticSpec spec;
  std::uint64_t seed = 1;
  std::string out;
};

json gen_data_config(const GenDataArgs& a) {
  return {{"channels", a.spec.num_channels},
          {"classes", a.spec.num_classes},
          {"sequences", a.spec.num_sequences},
          {"events_per_burst", a.spec.events_per_burst},
          {"burst_gap_us", a.spec.burst_gap_us},
          {"spacing_us", a.spec.intra_burst_spacing_us},
          {"jitter_us", a.spec.jitter_us},
          {"seed", a.seed},
          {"out", a.out}};
}

GenDataArgs gen_data_args(const json& c) {
  GenDataArgs a;
  a.spec.num_channels = c.at("channels").get<std::uint32_t>();
  a.spec.num_classes = c.at("classes").get<std::uint32_t>();
  a.spec.num_sequences = c.at("sequences").get<std::uint32_t>();
  a.spec.events_per_burst = c.at("events_per_burst").get<std::uint32_t>();
  a.spec.burst_gap_us = c.at("burst_gap_us").get<std::uint64_t>();
  a.spec.intra_burst_spacing_us = c.at("spacing_us").get<std::uint64_t>();
  a.spec.jitter_us = c.at("jitter_us").get<std::uint64_t>();
  a.seed = c.at("seed").get<std::uint64_t>();
  a.out = c.at("out").get<std::string>();
  return a;
}

int run_gen_data(const GenDataArgs& a) {
  io::EventDataset ds = io::generate_synthetic(a.spec, a.seed);
  const std::size_t bytes = io::write_dataset_file(ds, a.out);
  write_manifest(a.out, "gen-data", gen_data_config(a), a.seed, {}, {a.out});
  std::printf("wrote %s: %u sequences, %u channels, %zu bytes\n", a.out.c_str(),
              a.spec.num_sequences, a.spec.num_channels, bytes);
  return exit_ok;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data;
  std::string eval_data;  // optional; holdout split otherwise
  std::string config_file;
  std::string lambda_mode = "fixed";
  std::int64_t epochs = -1;  // -1: from config file or default
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out;
};

json train_config(const TrainArgs& a) {
  return {{"data", a.data},
          {"eval_data", a.eval_data},
          {"config_file", a.config_file},
          {"lambda_mode", a.lambda_mode},
          {"epochs", a.epochs},
          {"seed", a.seed},
          {"threads", a.threads},
          {"out", a.out}};
}

TrainArgs train_args(const json& c) {
  TrainArgs a;
  a.data = c.at("data").get<std::string>();
  a.eval_data = c.at("eval_data").get<std::string>();
  a.config_file = c.at("config_file").get<std::string>();
  a.lambda_mode = c.at("lambda_mode").get<std::string>();
  a.epochs = c.at("epochs").get<std::int64_t>();
  a.seed = c.at("seed").get<std::uint64_t>();
  a.threads = c.at("threads").get<unsigned>();
  a.out = c.at("out").get<std::string>();
  return a;
}

model::ModelConfig model_config_from_json(const json& j, const io::EventDataset& ds) {
  model::ModelConfig cfg;
  cfg.num_channels = ds.num_channels;
  cfg.num_classes = ds.num_classes;
  cfg.embedding_dim = j.value("embedding_dim", 8u);
  if (j.contains("stages")) {
    for (const json& js : j.at("stages"))
      cfg.stages.push_back({js.at("blocks").get<std::uint32_t>(),
                            js.at("h_in").get<std::uint32_t>(),
                            js.at("h_state").get<std::uint32_t>(),
                            js.at("h_out").get<std::uint32_t>(),
                            js.at("pool_stride").get<std::uint32_t>()});
  } else {
    cfg.stages.push_back({2, cfg.embedding_dim, 16, cfg.embedding_dim, 4});
  }
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& a) {
  io::EventDataset full = io::read_dataset_file(a.data);

  json file_cfg = json::object();
  if (!a.config_file.empty()) file_cfg = read_json_file(a.config_file);

  io::EventDataset train_set, eval_set;
  if (!a.eval_data.empty()) {
    train_set = full;
    eval_set = io::read_dataset_file(a.eval_data);
  } else {
    const double holdout = file_cfg.value("train", json::object()).value("holdout_fraction", 0.2);
    require(holdout > 0.0 && holdout < 1.0, Errc::bad_config,
            "holdout_fraction must lie in (0, 1)");
    const std::size_t n_eval =
        std::max<std::size_t>(1, static_cast<std::size_t>(full.sequences.size() * holdout));
    require(full.sequences.size() > n_eval, Errc::bad_config,
            "dataset too small for the holdout split");
    train_set.num_channels = eval_set.num_channels = full.num_channels;
    train_set.num_classes = eval_set.num_classes = full.num_classes;
    train_set.sequences.assign(full.sequences.begin(), full.sequences.end() - n_eval);
    eval_set.sequences.assign(full.sequences.end() - n_eval, full.sequences.end());
  }

  model::ModelConfig mcfg =
      model_config_from_json(file_cfg.value("model", json::object()), train_set);

  train::TrainConfig tcfg;
  const json tc = file_cfg.value("train", json::object());
  tcfg.learning_rate = tc.value("learning_rate", 0.01);
  tcfg.batch_size = tc.value("batch_size", std::size_t{16});
  tcfg.max_epochs = tc.value("max_epochs", std::size_t{30});
  tcfg.plateau_window = tc.value("plateau_window", std::size_t{5});
  tcfg.plateau_epsilon = tc.value("plateau_epsilon", 1e-3);
  tcfg.seed = a.seed;
  tcfg.threads = a.threads;
  tcfg.lambda_mode = train::lambda_mode_from_string(a.lambda_mode);
  if (a.epochs >= 0) tcfg.max_epochs = static_cast<std::size_t>(a.epochs);
  tcfg.validate();

  model::Model init = model::init_model(mcfg, a.seed);

  model::Model final_model = init;
  train::TrainReport report;
  if (tcfg.max_epochs > 0) {
    train::TrainResult res = train::fit(std::move(init), train_set, eval_set, tcfg);
    final_model = std::move(res.model);
    report = std::move(res.report);
  }

  model::save_checkpoint(final_model, a.out);
  write_text_file(a.out + ".report.json", train::report_to_json(report) + "\n");
  write_text_file(a.out + ".losses.csv", train::report_to_csv(report));

  std::vector<std::string> inputs = {a.data};
  if (!a.eval_data.empty()) inputs.push_back(a.eval_data);
  if (!a.config_file.empty()) inputs.push_back(a.config_file);

  json resolved = train_config(a);
  json stages = json::array();
  for (const model::StageConfig& st : mcfg.stages)
    stages.push_back({{"blocks", st.blocks},
                      {"h_in", st.h_in},
                      {"h_state", st.h_state},
                      {"h_out", st.h_out},
                      {"pool_stride", st.pool_stride}});
  resolved["resolved"] = {{"model",
                           {{"num_channels", mcfg.num_channels},
                            {"num_classes", mcfg.num_classes},
                            {"embedding_dim", mcfg.embedding_dim},
                            {"stages", stages}}},
                          {"train",
                           {{"learning_rate", tcfg.learning_rate},
                            {"batch_size", tcfg.batch_size},
                            {"max_epochs", tcfg.max_epochs},
                            {"plateau_window", tcfg.plateau_window},
                            {"plateau_epsilon", tcfg.plateau_epsilon}}}};
  write_manifest(a.out, "train", std::move(resolved), a.seed, inputs,
                 {a.out, a.out + ".report.json", a.out + ".losses.csv"});

  const double final_acc = report.epochs.empty() ? 0.0 : report.epochs.back().eval_accuracy;
  std::printf("trained %zu epochs, lambda-mode %s, final eval accuracy %.4f%s\n",
              report.epochs.size(), a.lambda_mode.c_str(), final_acc,
              report.diverged ? " [diverged]" : "");
  return report.diverged ? exit_divergence : exit_ok;
}

// ---------------------------------------------------------------------------
// hw-sweep

struct HwSweepArgs {
  std::string checkpoint;
  std::string data;
  std::vector<double> noise_lsb = {0.0};
  std::vector<double> lambda_var = {0.0};
  std::size_t repeats = 40;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::size_t qat_epochs = 0;
  std::string out;
};

json hw_sweep_config(const HwSweepArgs& a) {
  return {{"checkpoint", a.checkpoint},
          {"data", a.data},
          {"noise_lsb", a.noise_lsb},
          {"lambda_var", a.lambda_var},
          {"repeats", a.repeats},
          {"seed", a.seed},
          {"threads", a.threads},
          {"qat_epochs", a.qat_epochs},
          {"out", a.out}};
}

HwSweepArgs hw_sweep_args(const json& c) {
  HwSweepArgs a;
  a.checkpoint = c.at("checkpoint").get<std::string>();
  a.data = c.at("data").get<std::string>();
  a.noise_lsb = c.at("noise_lsb").get<std::vector<double>>();
  a.lambda_var = c.at("lambda_var").get<std::vector<double>>();
  a.repeats = c.at("repeats").get<std::size_t>();
  a.seed = c.at("seed").get<std::uint64_t>();
  a.threads = c.at("threads").get<unsigned>();
  a.qat_epochs = c.at("qat_epochs").get<std::size_t>();
  a.out = c.at("out").get<std::string>();
  return a;
}

int run_hw_sweep(const HwSweepArgs& a) {
  model::Model m = model::load_checkpoint(a.checkpoint);
  io::EventDataset data = io::read_dataset_file(a.data);

  hw::QuantOptions qopts;
  qopts.qat_epochs = a.qat_epochs;
  qopts.qat_config.seed = a.seed;
  qopts.qat_config.threads = a.threads;
  hw::QuantizedModel qm = hw::quantize_model(m, data, qopts);
  const double clean = train::evaluate(qm.model, data, a.threads).accuracy;

  std::string csv = "sigma_lsb,sigma_rel,run,accuracy\n";
  json summary;
  summary["clean_quantized_accuracy"] = clean;
  summary["grid"] = json::array();

  char buf[128];
  for (double sigma : a.noise_lsb) {
    for (double var : a.lambda_var) {
      hw::HardwareRunConfig cfg;
      cfg.noise.sigma_lsb = sigma;
      cfg.lambda_sigma_rel = var;
      cfg.repeats = a.repeats;
      cfg.seed = a.seed;
      cfg.threads = a.threads;
      hw::HardwareReport rep = hw::hardware_inference(qm, data, cfg);
      for (std::size_t r = 0; r < rep.per_repeat_accuracy.size(); ++r) {
        std::snprintf(buf, sizeof(buf), "%g,%g,%zu,%.17g\n", sigma, var, r,
                      rep.per_repeat_accuracy[r]);
        csv += buf;
      }
      summary["grid"].push_back({{"sigma_lsb", sigma},
                                 {"sigma_rel", var},
                                 {"mean_accuracy", rep.mean_accuracy},
                                 {"std_accuracy", rep.std_accuracy},
                                 {"n", rep.per_repeat_accuracy.size()},
                                 {"mean_pulse_energy_joules", rep.mean_pulse_energy_joules}});
    }
  }

  write_text_file(a.out + ".csv", csv);
  write_text_file(a.out + ".summary.json", summary.dump(2) + "\n");
  write_manifest(a.out, "hw-sweep", hw_sweep_config(a), a.seed, {a.checkpoint, a.data},
                 {a.out + ".csv", a.out + ".summary.json"});

  std::printf("hw sweep: clean quantized accuracy %.4f, %zu grid points x %zu repeats -> %s.csv\n",
              clean, a.noise_lsb.size() * a.lambda_var.size(), a.repeats, a.out.c_str());
  return exit_ok;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string flops_config;
  int resnet = 0;
  std::uint64_t frames = 180;
  std::string power_config;  // "paper" preset name or a JSON file
  bool reconcile_ssm = false;
  std::string out;
};

json analyze_config(const AnalyzeArgs& a) {
  return {{"flops_config", a.flops_config},   {"resnet", a.resnet},
          {"frames", a.frames},               {"power_config", a.power_config},
          {"reconcile_ssm", a.reconcile_ssm}, {"out", a.out}};
}

AnalyzeArgs analyze_args(const json& c) {
  AnalyzeArgs a;
  a.flops_config = c.at("flops_config").get<std::string>();
  a.resnet = c.at("resnet").get<int>();
  a.frames = c.at("frames").get<std::uint64_t>();
  a.power_config = c.at("power_config").get<std::string>();
  a.reconcile_ssm = c.at("reconcile_ssm").get<bool>();
  a.out = c.at("out").get<std::string>();
  return a;
}

int run_analyze(const AnalyzeArgs& a) {
  json out = json::object();
  std::vector<std::string> inputs;

  if (!a.flops_config.empty()) {
    json j = read_json_file(a.flops_config);
    inputs.push_back(a.flops_config);
    analysis::SsmFlopsConfig cfg;
    cfg.sequence_length = j.at("sequence_length").get<std::uint64_t>();
    cfg.embedding_dim = j.at("embedding_dim").get<std::uint64_t>();
    for (const json& js : j.at("stages"))
      cfg.stages.push_back({js.at("blocks").get<std::uint64_t>(),
                            js.at("h_in").get<std::uint64_t>(),
                            js.at("h_state").get<std::uint64_t>(),
                            js.at("h_out").get<std::uint64_t>(),
                            js.at("pool_stride").get<std::uint64_t>()});
    cfg.state_evolution_uses_state_dim = j.value("state_evolution_uses_state_dim", false);
    analysis::SsmFlopsReport rep = analysis::ssm_flops(cfg);
    out["ssm_flops"] = json::parse(analysis::ssm_flops_report_to_json(cfg, rep));
    std::printf("ssm flops: total %.2f GFLOPs\n", static_cast<double>(rep.total) / 1e9);
  }

  if (a.resnet != 0) {
    analysis::ResnetFlopsReport rep = analysis::resnet_flops(a.resnet, a.frames);
    out["resnet_flops"] = json::parse(analysis::resnet_report_to_json(rep));
    std::printf("resnet-%d x %llu frames: %.2f GFLOPs (%.2f GMACs)\n", a.resnet,
                static_cast<unsigned long long>(a.frames),
                static_cast<double>(rep.total_with_downsample) / 1e9,
                static_cast<double>(rep.total_with_downsample) / 2e9);
    if (out.contains("ssm_flops")) {
      const double ssm_total = out["ssm_flops"]["total_flops"].get<double>();
      out["efficiency_ratio"] =
          static_cast<double>(rep.total_with_downsample) / ssm_total;
      std::printf("efficiency ratio vs the ssm config: %.2fx\n",
                  out["efficiency_ratio"].get<double>());
    }
  }

  if (!a.power_config.empty()) {
    analysis::PowerConfig cfg;
    if (a.power_config == "paper") {
      cfg = analysis::PowerConfig::reference_preset();
    } else {
      json j = read_json_file(a.power_config);
      inputs.push_back(a.power_config);
      for (const json& jc : j.at("components"))
        cfg.components.push_back({jc.at("name").get<std::string>(),
                                  jc.at("count").get<double>(),
                                  jc.at("unit_power_mw").get<double>(),
                                  jc.value("derived", false), jc.value("derivation", "")});
      cfg.pulse_voltage = j.value("pulse_voltage", 1.4);
      cfg.pulse_width_s = j.value("pulse_width_s", 50e-6);
    }
    analysis::PowerBreakdown b = analysis::power_breakdown(cfg);
    out["power"] = json::parse(analysis::power_report_to_json(cfg, b));
    std::printf("power: total %.2f mW across %zu components\n", b.total_mw, b.shares.size());
  }

  if (a.reconcile_ssm) {
    out["ssm_reconciliation"] = json::parse(analysis::reconcile_ssm_reference_to_json());
    std::printf("ssm reference reconciliation: %zu candidates\n",
                out["ssm_reconciliation"]["candidates"].size());
  }

  require(!out.empty(), Errc::bad_argument,
          "nothing to analyze: pass --flops-config, --resnet, --power-config or --reconcile-ssm");

  if (!a.out.empty()) {
    write_text_file(a.out, out.dump(2) + "\n");
    write_manifest(a.out, "analyze", analyze_config(a), 0, inputs, {a.out});
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------
// calibrate-demo

struct CalibrateArgs {
  hw::CalibrationDemoConfig cfg;
  std::string out;
};

json calibrate_config(const CalibrateArgs& a) {
  return {{"channels", a.cfg.channels},
          {"samples_per_channel", a.cfg.samples_per_channel},
          {"gain_spread", a.cfg.gain_spread},
          {"offset_spread", a.cfg.offset_spread},
          {"nonlinearity", a.cfg.nonlinearity},
          {"noise_sigma_lsb", a.cfg.noise_sigma_lsb},
          {"seed", a.cfg.seed},
          {"out", a.out}};
}

CalibrateArgs calibrate_args(const json& c) {
  CalibrateArgs a;
  a.cfg.channels = c.at("channels").get<std::size_t>();
  a.cfg.samples_per_channel = c.at("samples_per_channel").get<std::size_t>();
  a.cfg.gain_spread = c.at("gain_spread").get<double>();
  a.cfg.offset_spread = c.at("offset_spread").get<double>();
  a.cfg.nonlinearity = c.at("nonlinearity").get<double>();
  a.cfg.noise_sigma_lsb = c.at("noise_sigma_lsb").get<double>();
  a.cfg.seed = c.at("seed").get<std::uint64_t>();
  a.out = c.at("out").get<std::string>();
  return a;
}

int run_calibrate(const CalibrateArgs& a) {
  hw::CalibrationDemoReport rep = hw::run_calibration_demo(a.cfg);
  if (!a.out.empty()) {
    write_text_file(a.out, hw::calibration_report_to_json(rep) + "\n");
    write_manifest(a.out, "calibrate-demo", calibrate_config(a), a.cfg.seed, {}, {a.out});
  }
  std::printf(
      "calibration: NRMSE %.4f%% -> %.4f%% of full scale; fused vs sequential max diff %.3g\n",
      100.0 * rep.pre_nrmse, 100.0 * rep.post_nrmse, rep.fused_vs_sequential_max_diff);
  return exit_ok;
}

// ---------------------------------------------------------------------------
// rerun

int run_rerun(const std::string& manifest_path) {
  json doc = read_json_file(manifest_path);
  const std::string command = doc.at("command").get<std::string>();
  const json& cfg = doc.at("config");
  if (command == "gen-data") return run_gen_data(gen_data_args(cfg));
  if (command == "train") return run_train(train_args(cfg));
  if (command == "hw-sweep") return run_hw_sweep(hw_sweep_args(cfg));
  if (command == "analyze") return run_analyze(analyze_args(cfg));
  if (command == "calibrate-demo") return run_calibrate(calibrate_args(cfg));
  fail(Errc::bad_config, "manifest names an unknown command: " + command);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-driven state space model toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic event dataset");
  cmd_gen->add_option("--channels", gen.spec.num_channels, "input channels (>= 2)");
  cmd_gen->add_option("--classes", gen.spec.num_classes, "classes (must be 2)");
  cmd_gen->add_option("--sequences", gen.spec.num_sequences, "number of sequences");
  cmd_gen->add_option("--events-per-burst", gen.spec.events_per_burst, "events per burst");
  cmd_gen->add_option("--burst-gap-us", gen.spec.burst_gap_us, "gap between burst starts");
  cmd_gen->add_option("--spacing-us", gen.spec.intra_burst_spacing_us, "intra-burst spacing");
  cmd_gen->add_option("--jitter-us", gen.spec.jitter_us, "timestamp jitter");
  cmd_gen->add_option("--seed", gen.seed, "random seed")->required();
  cmd_gen->add_option("--out", gen.out, "output .evs file")->required();

  TrainArgs tr;
  CLI::App* cmd_train = app.add_subcommand("train", "train a model on an event dataset");
  cmd_train->add_option("--data", tr.data, "training dataset (EVS1)")->required();
  cmd_train->add_option("--eval-data", tr.eval_data, "separate evaluation dataset");
  cmd_train->add_option("--config", tr.config_file, "model/train config JSON");
  cmd_train->add_option("--lambda-mode", tr.lambda_mode, "free | fixed | two-tier")
      ->check(CLI::IsMember({"free", "fixed", "two-tier"}));
  cmd_train->add_option("--epochs", tr.epochs, "override max epochs per stage");
  cmd_train->add_option("--seed", tr.seed, "random seed")->required();
  cmd_train->add_option("--threads", tr.threads, "worker threads");
  cmd_train->add_option("--out", tr.out, "checkpoint output path")->required();

  HwSweepArgs hwargs;
  CLI::App* cmd_hw = app.add_subcommand("hw-sweep", "hardware noise / variation sweep");
  cmd_hw->add_option("--checkpoint", hwargs.checkpoint, "trained checkpoint")->required();
  cmd_hw->add_option("--data", hwargs.data, "evaluation dataset (EVS1)")->required();
  cmd_hw->add_option("--noise-lsb", hwargs.noise_lsb, "noise sigmas in LSB");
  cmd_hw->add_option("--lambda-var", hwargs.lambda_var, "relative decay-rate spreads");
  cmd_hw->add_option("--repeats", hwargs.repeats, "repeats per grid point");
  cmd_hw->add_option("--seed", hwargs.seed, "random seed")->required();
  cmd_hw->add_option("--threads", hwargs.threads, "worker threads");
  cmd_hw->add_option("--qat-epochs", hwargs.qat_epochs, "quantization-aware fine-tune epochs");
  cmd_hw->add_option("--out", hwargs.out, "output stem for .csv/.summary.json")->required();

  AnalyzeArgs an;
  CLI::App* cmd_an = app.add_subcommand("analyze", "FLOPs and power accounting");
  cmd_an->add_option("--flops-config", an.flops_config, "SSM FLOPs config JSON");
  cmd_an->add_option("--resnet", an.resnet, "ResNet depth (18 or 50)")
      ->check(CLI::IsMember({0, 18, 50}));
  cmd_an->add_option("--frames", an.frames, "frame count for the ResNet baseline");
  cmd_an->add_option("--power-config", an.power_config, "'paper' preset or a JSON file");
  cmd_an->add_flag("--reconcile-ssm", an.reconcile_ssm, "sweep dims against the reference total");
  cmd_an->add_option("--out", an.out, "output report JSON");

  CalibrateArgs cal;
  CLI::App* cmd_cal = app.add_subcommand("calibrate-demo", "two-stage fused ADC calibration demo");
  cmd_cal->add_option("--channels", cal.cfg.channels, "differential channels");
  cmd_cal->add_option("--samples", cal.cfg.samples_per_channel, "samples per channel");
  cmd_cal->add_option("--gain-spread", cal.cfg.gain_spread, "column gain spread");
  cmd_cal->add_option("--offset-spread", cal.cfg.offset_spread, "column offset spread (LSB)");
  cmd_cal->add_option("--nonlinearity", cal.cfg.nonlinearity, "cubic distortion amplitude");
  cmd_cal->add_option("--noise-lsb", cal.cfg.noise_sigma_lsb, "stochastic residual sigma");
  cmd_cal->add_option("--seed", cal.cfg.seed, "random seed")->required();
  cmd_cal->add_option("--out", cal.out, "output report JSON");

  std::string manifest_path;
  CLI::App* cmd_rerun = app.add_subcommand("rerun", "replay a run from its manifest");
  cmd_rerun->add_option("manifest", manifest_path, "manifest JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (cmd_gen->parsed()) return run_gen_data(gen);
    if (cmd_train->parsed()) return run_train(tr);
    if (cmd_hw->parsed()) return run_hw_sweep(hwargs);
    if (cmd_an->parsed()) return run_analyze(an);
    if (cmd_cal->parsed()) return run_calibrate(cal);
    if (cmd_rerun->parsed()) return run_rerun(manifest_path);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return map_error(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return exit_data;
  }
  return exit_usage;
}
