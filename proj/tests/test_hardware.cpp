#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evssm/analysis.hpp"
#include "evssm/hardware.hpp"
#include "evssm/rng.hpp"
#include "evssm/trainer.hpp"

using namespace evssm;
using namespace evssm::hw;

namespace {

io::EventDataset desk_task(std::uint32_t sequences, std::uint64_t seed) {
  io::SyntheticSpec spec;
  spec.num_channels = 8;
  spec.num_sequences = sequences;
  spec.events_per_burst = 12;
  spec.burst_gap_us = 4000;
  spec.intra_burst_spacing_us = 200;
  spec.jitter_us = 400;
  return io::generate_synthetic(spec, seed);
}

model::ModelConfig desk_config() {
  model::ModelConfig cfg;
  cfg.num_channels = 8;
  cfg.num_classes = 2;
  cfg.embedding_dim = 8;
  cfg.stages.push_back({2, 8, 12, 8, 4});
  return cfg;
}

}  // namespace

TEST_CASE("symmetric scheme and code arithmetic") {
  SUBCASE("{-1, 0, 1} quantizes to scale 1/127 and codes {-127, 0, 127}") {
    Vec t = {-1.0, 0.0, 1.0};
    QuantScheme q = fit_symmetric_scheme(t);
    CHECK(q.scale == doctest::Approx(1.0 / 127.0).epsilon(1e-15));
    CHECK(quantize_value(-1.0, q) == -127);
    CHECK(quantize_value(0.0, q) == 0);
    CHECK(quantize_value(1.0, q) == 127);
  }
  SUBCASE("all-zero tensors get scale 1") {
    Vec t = {0.0, 0.0};
    CHECK(fit_symmetric_scheme(t).scale == 1.0);
  }
  SUBCASE("quantize-dequantize-quantize is idempotent") {
    Rng rng(3);
    Vec t(256);
    for (double& x : t) x = rng.uniform(-4.0, 4.0);
    QuantScheme q = fit_symmetric_scheme(t);
    for (double x : t) {
      const int c1 = quantize_value(x, q);
      const int c2 = quantize_value(dequantize_value(c1, q), q);
      CHECK(c1 == c2);
    }
  }
  SUBCASE("round-trip error is at most half a step, exhaustively over all 256 codes") {
    QuantScheme q;
    q.scale = 0.031;
    for (int code = -128; code <= 127; ++code) {
      const double x = dequantize_value(code, q);
      CHECK(quantize_value(x, q) == code);
    }
    Rng rng(4);
    for (int trial = 0; trial < 2000; ++trial) {
      const double x = rng.uniform(-127.0 * q.scale, 127.0 * q.scale);
      const double err = std::abs(dequantize_value(quantize_value(x, q), q) - x);
      CHECK(err <= q.scale / 2 + 1e-15);
    }
  }
}

TEST_CASE("noise injection: exact zero, calibrated spread, LSB-to-NRMSE conversion") {
  QuantScheme q;
  q.scale = 0.02;
  SUBCASE("sigma = 0 leaves the vector bit-identical") {
    Vec v = {0.5, -0.25, 0.125};
    Vec w = v;
    NoiseModel n;
    Rng rng(1);
    inject_noise(w, n, q, rng);
    CHECK(v == w);
  }
  SUBCASE("empirical standard deviation within 1% over 1e6 samples") {
    NoiseModel n;
    n.sigma_lsb = 4.6;
    Rng rng(2);
    Vec v(1000000, 0.0);
    inject_noise(v, n, q, rng);
    double sumsq = 0.0;
    for (double x : v) sumsq += x * x;
    const double sd = std::sqrt(sumsq / v.size());
    CHECK(std::abs(sd - 4.6 * q.scale) <= 0.01 * 4.6 * q.scale);
    // NRMSE against the 256-level full scale: 4.6 / 256 = 1.797%
    const double nrmse = sd / (256.0 * q.scale);
    CHECK(std::abs(nrmse - 0.01796875) <= 0.0002);
  }
}

TEST_CASE("state nodes follow the shared decay-update kernel") {
  SUBCASE("hand value") {
    StateNodeArray nodes = make_state_nodes({0.2});
    nodes.conductance = {10.0};
    state_node_update(nodes, 2.0, {3.0}, 1.0);
    CHECK(nodes.conductance[0] == doctest::Approx(9.70320).epsilon(1e-5));
    CHECK(nodes.pulse_counts[0] == 3);
  }
  SUBCASE("full decay at large dt") {
    StateNodeArray nodes = make_state_nodes({0.2});
    nodes.conductance = {10.0};
    state_node_update(nodes, 1e7, {3.0}, 1.0);
    CHECK(nodes.conductance[0] == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("zero variation: device trajectory equals the model state trajectory bit-for-bit") {
    Rng rng(5);
    const std::size_t h = 6, steps = 40;
    Vec lam(h);
    for (double& l : lam) l = rng.uniform(0.05, 2.0);

    StateNodeArray nodes = make_state_nodes(lam);
    model::StateVector sv;
    sv.h.assign(h, 0.0);
    for (std::size_t k = 0; k < steps; ++k) {
      const double dt = rng.uniform(0.0, 5.0);
      Vec u(h);
      for (double& x : u) x = rng.uniform(-1.0, 1.0);
      state_node_update(nodes, dt, u, 1.0);
      sv = model::step_state(sv, dt, u, lam);
      for (std::size_t i = 0; i < h; ++i) CHECK(nodes.conductance[i] == sv.h[i]);
    }
  }
  SUBCASE("non-finite input rejected") {
    StateNodeArray nodes = make_state_nodes({0.5});
    CHECK_THROWS_AS(state_node_update(nodes, 1.0, {std::nan("")}, 1.0), Error);
  }
}

TEST_CASE("decay-rate variation sampling") {
  Vec nominal = {0.4, 0.8, 1.2};
  SUBCASE("zero spread returns the nominal rates bit-for-bit") {
    Rng rng(6);
    CHECK(sample_lambda_variation(nominal, 0.0, rng) == nominal);
  }
  SUBCASE("ten percent spread: sample std within 2% over 1e5 draws") {
    Rng rng(7);
    Vec one = {1.0};
    double sum = 0.0, sumsq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const double l = sample_lambda_variation(one, 0.10, rng)[0];
      sum += l;
      sumsq += l * l;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sumsq / n - mean * mean);
    CHECK(std::abs(sd - 0.10) <= 0.02 * 0.10);
  }
  SUBCASE("draws are truncated at 1% of nominal") {
    Rng rng(8);
    for (int i = 0; i < 20000; ++i)
      CHECK(sample_lambda_variation(nominal, 0.5, rng)[1] >= 0.01 * 0.8 - 1e-15);
  }
  SUBCASE("spread outside [0, 0.5] rejected") {
    Rng rng(9);
    CHECK_THROWS_AS(sample_lambda_variation(nominal, 0.6, rng), Error);
  }
}

TEST_CASE("calibration fitting") {
  SUBCASE("y = 2x + 10 inverts to a = 0.5, d = -5") {
    CalibrationSamples s;
    CalibrationSamples::Channel ch;
    for (double x = 0; x < 64; ++x) {
      ch.ideal_pos.push_back(100 + x);
      ch.raw_pos.push_back(2 * (100 + x) + 10);
      ch.ideal_neg.push_back(100 - x);
      ch.raw_neg.push_back(100 - x);  // identity column
      ch.ideal_activation.push_back(2 * x);
    }
    s.channels.push_back(ch);
    CalibrationCoeffs c = fit_calibration(s);
    CHECK(c[0].pos.inv_gain == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(c[0].pos.inv_offset == doctest::Approx(-5.0).epsilon(1e-10));
    CHECK(c[0].neg.inv_gain == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(c[0].neg.inv_offset) <= 1e-10);
  }
  SUBCASE("identity distortion gives unit gains and zero offsets") {
    CalibrationDemoConfig cfg;
    cfg.gain_spread = 0.0;
    cfg.offset_spread = 0.0;
    CalibrationDemoReport rep = run_calibration_demo(cfg);
    for (const ChannelCalibration& c : rep.coeffs) {
      CHECK(c.fused_gain_pos == doctest::Approx(1.0).epsilon(1e-10));
      CHECK(c.fused_gain_neg == doctest::Approx(1.0).epsilon(1e-10));
      CHECK(std::abs(c.fused_offset) <= 1e-9);
    }
    CHECK(rep.post_nrmse <= 1e-12);
  }
  SUBCASE("constant ideal input is a degenerate fit") {
    CalibrationSamples s;
    CalibrationSamples::Channel ch;
    for (int i = 0; i < 8; ++i) {
      ch.ideal_pos.push_back(50);
      ch.raw_pos.push_back(51);
      ch.ideal_neg.push_back(50);
      ch.raw_neg.push_back(50);
      ch.ideal_activation.push_back(0);
    }
    s.channels.push_back(ch);
    CHECK_THROWS_AS(fit_calibration(s), Error);
  }
}

TEST_CASE("fused calibration equals the sequential two-stage algebra") {
  SUBCASE("max difference over 1e6 random codes stays below 1e-12") {
    Rng rng(11);
    ChannelCalibration c;
    c.pos = {1.2, 4.0, 1.0 / 1.2, -4.0 / 1.2};
    c.neg = {0.8, -3.0, 1.0 / 0.8, 3.0 / 0.8};
    c.channel = {1.05, 0.7, 1.0 / 1.05, -0.7 / 1.05};
    c.fused_gain_pos = c.channel.inv_gain * c.pos.inv_gain;
    c.fused_gain_neg = c.channel.inv_gain * c.neg.inv_gain;
    c.fused_offset = c.channel.inv_gain * (c.pos.inv_offset - c.neg.inv_offset) +
                     c.channel.inv_offset;
    double worst = 0.0;
    for (int i = 0; i < 1000000; ++i) {
      const double rp = rng.uniform(0.0, 255.0);
      const double rn = rng.uniform(0.0, 255.0);
      worst = std::max(worst, std::abs(apply_calibration_fused(rp, rn, c) -
                                       apply_calibration_sequential(rp, rn, c)));
    }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("zero raw codes return the fused offset") {
    ChannelCalibration c;
    c.fused_offset = 2.75;
    CHECK(apply_calibration_fused(0.0, 0.0, c) == 2.75);
  }
  SUBCASE("linear-only distortion calibrates below 0.1% NRMSE") {
    CalibrationDemoConfig cfg;
    cfg.seed = 3;
    CalibrationDemoReport rep = run_calibration_demo(cfg);
    CHECK(rep.pre_nrmse > 0.01);  // the distortion was material
    CHECK(rep.post_nrmse < 0.001);
    CHECK(rep.fused_vs_sequential_max_diff <= 1e-12);
  }
  SUBCASE("realistic residuals land near the measured 1.80% NRMSE") {
    // The observed differential noise combines both column readouts, so a
    // measured 4.6 LSB output sigma corresponds to 4.6/sqrt(2) per column.
    CalibrationDemoConfig cfg;
    cfg.seed = 4;
    cfg.gain_spread = 0.1;
    cfg.nonlinearity = 1.5;
    cfg.noise_sigma_lsb = 4.6 / std::sqrt(2.0);
    cfg.samples_per_channel = 8192;
    CalibrationDemoReport rep = run_calibration_demo(cfg);
    CHECK(std::abs(rep.post_nrmse - 0.0180) <= 0.0015);
  }
}

TEST_CASE("model quantization structure") {
  io::EventDataset calib = desk_task(16, 20);
  model::Model m = model::init_model(desk_config(), 60);
  QuantizedModel qm = quantize_model(m, calib);

  CHECK(qm.activations.size() == 2);
  CHECK(qm.weight_schemes.count("embedding.w") == 1);
  CHECK(qm.weight_schemes.count("block0.input_proj") == 1);
  CHECK(qm.weight_schemes.count("block1.gate_b") == 1);
  CHECK(qm.weight_schemes.count("block0.norm_scale") == 0);  // stays in float

  // every quantized weight sits exactly on its code grid
  for (auto& ref : model::tensor_refs(qm.model.params)) {
    auto it = qm.weight_schemes.find(ref.name);
    if (it == qm.weight_schemes.end()) continue;
    for (std::size_t i = 0; i < ref.size; ++i) {
      const double code = ref.data[i] / it->second.scale;
      CHECK(std::abs(code - std::nearbyint(code)) <= 1e-9);
      CHECK(std::abs(code) <= 127.5);
    }
  }

  // decay rates pass through untouched
  CHECK(qm.model.params.blocks[0].lambda == m.params.blocks[0].lambda);
}

TEST_CASE("quantization-aware fine-tune keeps rates frozen and stays deterministic") {
  io::EventDataset calib = desk_task(24, 23);
  model::Model m = model::init_model(desk_config(), 62);

  QuantOptions opts;
  opts.qat_epochs = 2;
  opts.qat_config.learning_rate = 0.005;
  opts.qat_config.batch_size = 8;
  opts.qat_config.seed = 4;

  QuantizedModel a = quantize_model(m, calib, opts);
  QuantizedModel b = quantize_model(m, calib, opts);
  for (std::size_t blk = 0; blk < a.model.params.blocks.size(); ++blk) {
    CHECK(a.model.params.blocks[blk].lambda == m.params.blocks[blk].lambda);  // frozen
    CHECK(a.model.params.blocks[blk].input_proj.a == b.model.params.blocks[blk].input_proj.a);
  }
  CHECK(a.model.lambda_frozen);

  // the fine-tune actually moved the weights relative to plain post-training quantization
  QuantizedModel plain = quantize_model(m, calib);
  CHECK(a.model.params.blocks[0].input_proj.a != plain.model.params.blocks[0].input_proj.a);

  // still on the INT8 grid after QAT
  for (auto& ref : model::tensor_refs(a.model.params)) {
    auto it = a.weight_schemes.find(ref.name);
    if (it == a.weight_schemes.end()) continue;
    for (std::size_t i = 0; i < ref.size; ++i) {
      const double code = ref.data[i] / it->second.scale;
      CHECK(std::abs(code - std::nearbyint(code)) <= 1e-9);
    }
  }
}

TEST_CASE("hardware inference: clean equality, determinism, energy bookkeeping") {
  io::EventDataset data = desk_task(24, 21);
  model::Model m = model::init_model(desk_config(), 61);
  QuantizedModel qm = quantize_model(m, data);

  SUBCASE("zero noise and zero variation reproduce the clean quantized accuracy") {
    HardwareRunConfig cfg;
    cfg.repeats = 3;
    cfg.seed = 5;
    HardwareReport rep = hardware_inference(qm, data, cfg);
    const double clean = train::evaluate(qm.model, data).accuracy;
    CHECK(rep.clean_accuracy == clean);
    for (double a : rep.per_repeat_accuracy) CHECK(a == clean);
    CHECK(rep.std_accuracy == 0.0);
  }

  SUBCASE("fixed seed gives identical reports across runs and thread counts") {
    HardwareRunConfig cfg;
    cfg.noise.sigma_lsb = 4.6;
    cfg.lambda_sigma_rel = 0.10;
    cfg.repeats = 6;
    cfg.seed = 6;
    HardwareReport a = hardware_inference(qm, data, cfg);
    HardwareReport b = hardware_inference(qm, data, cfg);
    cfg.threads = 4;
    HardwareReport c = hardware_inference(qm, data, cfg);
    CHECK(a.per_repeat_accuracy == b.per_repeat_accuracy);
    CHECK(a.per_repeat_accuracy == c.per_repeat_accuracy);
    CHECK(a.mean_pulse_energy_joules == c.mean_pulse_energy_joules);
  }

  SUBCASE("accumulated pulse energy matches the standalone energy model") {
    HardwareRunConfig cfg;
    cfg.repeats = 1;
    cfg.seed = 7;
    cfg.capture_pulse_log = true;
    io::EventDataset small = desk_task(4, 22);
    HardwareReport rep = hardware_inference(qm, small, cfg);
    REQUIRE_FALSE(rep.pulse_log.empty());

    std::vector<std::uint64_t> counts;
    Vec conductances;
    for (const PulseRecord& p : rep.pulse_log) {
      counts.push_back(p.pulses);
      conductances.push_back(p.conductance_siemens);
    }
    const double expected =
        analysis::sn_energy(counts, conductances, cfg.pulse_voltage, cfg.pulse_width_s);
    CHECK(rep.mean_pulse_energy_joules == expected);  // same terms, same order
    CHECK(rep.total_pulses_first_repeat > 0);
  }
}
