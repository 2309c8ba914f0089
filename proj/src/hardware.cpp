#include "evssm/hardware.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace evssm::hw {

using io::EventDataset;
using io::EventSequence;
using model::Model;
using model::TensorRef;

// ---------------------------------------------------------------------------
// Quantization

QuantScheme fit_symmetric_scheme(std::span<const double> values) {
  QuantScheme q;
  double m = max_abs(values);
  q.scale = m > 0.0 ? m / 127.0 : 1.0;
  return q;
}

namespace {

bool is_quantized_tensor(const std::string& name) {
  // Crossbar matrices and compute-layer weights/biases; normalization parameters
  // stay in the digital periphery and decay rates are device properties.
  return name == "embedding.w" || name == "head.w" || name == "head.b" ||
         name.ends_with(".input_proj") || name.ends_with(".readout") ||
         name.ends_with(".gate_w") || name.ends_with(".gate_b");
}

void quantize_weights(Model& m, std::map<std::string, QuantScheme>& schemes) {
  for (TensorRef& ref : model::tensor_refs(m.params)) {
    if (!is_quantized_tensor(ref.name)) continue;
    QuantScheme q = fit_symmetric_scheme(std::span<const double>(ref.data, ref.size));
    for (std::size_t i = 0; i < ref.size; ++i)
      ref.data[i] = dequantize_value(quantize_value(ref.data[i], q), q);
    schemes[ref.name] = q;
  }
}

// Observes activation ranges on a clean run.
class RangeRecorder final : public model::HwInterface {
 public:
  explicit RangeRecorder(std::size_t blocks) : vmm_(blocks, 0.0), state_(blocks, 0.0),
                                               output_(blocks, 0.0) {}

  void after_vmm(std::size_t b, Vec& u) override { vmm_[b] = std::max(vmm_[b], max_abs(u)); }
  void record_state_update(std::size_t b, const Vec&, const Vec& h) override {
    state_[b] = std::max(state_[b], max_abs(h));
  }
  void after_block_output(std::size_t b, Vec& out) override {
    output_[b] = std::max(output_[b], max_abs(out));
  }

  std::vector<BlockActivationSchemes> schemes() const {
    std::vector<BlockActivationSchemes> out(vmm_.size());
    auto to_scheme = [](double m) {
      QuantScheme q;
      q.scale = m > 0.0 ? m / 127.0 : 1.0;
      return q;
    };
    for (std::size_t b = 0; b < vmm_.size(); ++b) {
      out[b].vmm = to_scheme(vmm_[b]);
      out[b].state = to_scheme(state_[b]);
      out[b].output = to_scheme(output_[b]);
    }
    return out;
  }

 private:
  Vec vmm_, state_, output_;
};

std::vector<BlockActivationSchemes> calibrate_activations(const Model& m,
                                                          const EventDataset& data,
                                                          std::size_t max_sequences) {
  RangeRecorder rec(m.config.total_blocks());
  const std::size_t n = std::min<std::size_t>(max_sequences, data.sequences.size());
  for (std::size_t i = 0; i < n; ++i)
    (void)model::model_forward(m, data.sequences[i], &rec);
  return rec.schemes();
}

}  // namespace

QuantizedModel quantize_model(const Model& m, const EventDataset& calibration,
                              const QuantOptions& opts) {
  m.config.validate();
  require(!calibration.sequences.empty(), Errc::bad_argument,
          "quantization needs calibration sequences");

  Model work = m;

  if (opts.qat_epochs > 0) {
    // Straight-through fine-tune: gradients are taken at the fake-quantized
    // parameters and applied to the float master; decay rates stay frozen.
    std::vector<BlockActivationSchemes> act =
        calibrate_activations(work, calibration, opts.calibration_sequences);
    train::TrainConfig cfg = opts.qat_config;
    cfg.validate();
    work.lambda_frozen = true;

    train::AdamOptimizer adam(cfg);
    train::LossOptions lopts;
    lopts.threads = cfg.threads;
    for (std::size_t b = 0; b < act.size(); ++b)
      lopts.block_output_quant_steps.push_back(act[b].output.scale);

    std::vector<std::size_t> order(calibration.sequences.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < opts.qat_epochs; ++epoch) {
      Rng shuffle_rng = Rng::derive(cfg.seed, 0x9a7ULL + epoch);
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.uniform_u64(i)]);
      for (std::size_t base = 0; base < order.size(); base += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), base + cfg.batch_size);
        std::vector<EventSequence> batch;
        for (std::size_t i = base; i < end; ++i)
          batch.push_back(calibration.sequences[order[i]]);

        Model probe = work;
        std::map<std::string, QuantScheme> tmp;
        quantize_weights(probe, tmp);
        train::LossGrads lg = train::loss_and_gradients(probe, batch, lopts);
        if (!lg.finite) break;
        adam.step(work, lg.grads);
      }
    }
  }

  QuantizedModel qm;
  qm.model = std::move(work);
  quantize_weights(qm.model, qm.weight_schemes);
  qm.activations = calibrate_activations(qm.model, calibration, opts.calibration_sequences);
  return qm;
}

// ---------------------------------------------------------------------------
// Noise

void inject_noise(Vec& values, const NoiseModel& noise, const QuantScheme& scheme, Rng& rng) {
  require(noise.sigma_lsb >= 0.0, Errc::bad_argument, "noise sigma must be >= 0");
  if (noise.sigma_lsb == 0.0 && noise.mean_lsb == 0.0) return;
  for (double& v : values)
    v += (noise.mean_lsb + noise.sigma_lsb * rng.normal()) * scheme.scale;
}

// ---------------------------------------------------------------------------
// State nodes

StateNodeArray make_state_nodes(const Vec& nominal_lambda) {
  StateNodeArray nodes;
  nodes.conductance.assign(nominal_lambda.size(), 0.0);
  nodes.nominal_lambda = nominal_lambda;
  nodes.realized_lambda = nominal_lambda;
  nodes.pulse_counts.assign(nominal_lambda.size(), 0);
  return nodes;
}

void state_node_update(StateNodeArray& nodes, double dt_ms, const Vec& vmm_output,
                       double code_step) {
  require(dt_ms >= 0.0, Errc::bad_argument, "state_node_update: dt must be >= 0");
  require(vmm_output.size() == nodes.conductance.size(), Errc::dimension_mismatch,
          "state_node_update: size mismatch");
  require(all_finite(vmm_output), Errc::non_finite, "state_node_update: non-finite input");

  const std::size_t n = nodes.conductance.size();
  Vec a(n);
  for (std::size_t i = 0; i < n; ++i) a[i] = std::exp(-nodes.realized_lambda[i] * dt_ms);
  Vec next(n);
  decay_update(a.data(), nodes.conductance.data(), vmm_output.data(), next.data(), n);
  nodes.conductance = std::move(next);
  for (std::size_t i = 0; i < n; ++i)
    nodes.pulse_counts[i] +=
        static_cast<std::uint64_t>(std::llround(std::abs(vmm_output[i]) / code_step));
  nodes.last_update_us += static_cast<std::uint64_t>(std::llround(dt_ms * 1000.0));
}

Vec sample_lambda_variation(const Vec& nominal_lambda, double sigma_rel, Rng& rng) {
  require(sigma_rel >= 0.0 && sigma_rel <= 0.5, Errc::bad_argument,
          "sigma_rel must lie in [0, 0.5]");
  if (sigma_rel == 0.0) return nominal_lambda;
  Vec out(nominal_lambda.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double nominal = nominal_lambda[i];
    const double draw = rng.normal(nominal, sigma_rel * nominal);
    out[i] = std::max(draw, 0.01 * nominal);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

namespace {

LinearFit ols_fit(const Vec& ideal, const Vec& raw) {
  require(ideal.size() == raw.size() && ideal.size() >= 2, Errc::degenerate_fit,
          "calibration fit needs >= 2 samples");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ideal.size(); ++i) {
    mx += ideal[i];
    my += raw[i];
  }
  mx /= static_cast<double>(ideal.size());
  my /= static_cast<double>(ideal.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < ideal.size(); ++i) {
    sxx += (ideal[i] - mx) * (ideal[i] - mx);
    sxy += (ideal[i] - mx) * (raw[i] - my);
  }
  require(sxx > 0.0, Errc::degenerate_fit, "calibration fit needs distinct ideal values");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  require(f.slope != 0.0, Errc::degenerate_fit, "calibration fit: zero slope");
  f.inv_gain = 1.0 / f.slope;
  f.inv_offset = -f.intercept / f.slope;
  return f;
}

}  // namespace

CalibrationCoeffs fit_calibration(const CalibrationSamples& samples) {
  CalibrationCoeffs coeffs;
  for (const CalibrationSamples::Channel& ch : samples.channels) {
    ChannelCalibration c;
    c.pos = ols_fit(ch.ideal_pos, ch.raw_pos);
    c.neg = ols_fit(ch.ideal_neg, ch.raw_neg);

    // Stage-1 corrected differential activation, then the channel-level fit.
    const std::size_t n = ch.raw_pos.size();
    require(ch.raw_neg.size() == n && ch.ideal_activation.size() == n, Errc::dimension_mismatch,
            "calibration: sample lengths disagree");
    Vec corrected(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = c.pos.inv_gain * ch.raw_pos[i] + c.pos.inv_offset;
      const double m = c.neg.inv_gain * ch.raw_neg[i] + c.neg.inv_offset;
      corrected[i] = p - m;
    }
    c.channel = ols_fit(ch.ideal_activation, corrected);

    c.fused_gain_pos = c.channel.inv_gain * c.pos.inv_gain;
    c.fused_gain_neg = c.channel.inv_gain * c.neg.inv_gain;
    c.fused_offset =
        c.channel.inv_gain * (c.pos.inv_offset - c.neg.inv_offset) + c.channel.inv_offset;
    coeffs.push_back(c);
  }
  return coeffs;
}

double apply_calibration_sequential(double raw_pos, double raw_neg,
                                    const ChannelCalibration& c) {
  const double p = c.pos.inv_gain * raw_pos + c.pos.inv_offset;
  const double m = c.neg.inv_gain * raw_neg + c.neg.inv_offset;
  return c.channel.inv_gain * (p - m) + c.channel.inv_offset;
}

double apply_calibration_fused(double raw_pos, double raw_neg, const ChannelCalibration& c) {
  return c.fused_gain_pos * raw_pos - c.fused_gain_neg * raw_neg + c.fused_offset;
}

CalibrationDemoReport run_calibration_demo(const CalibrationDemoConfig& cfg) {
  require(cfg.channels >= 1 && cfg.samples_per_channel >= 2, Errc::bad_argument,
          "calibration demo needs channels and samples");
  Rng rng = Rng::derive(cfg.seed, 0xCA1ULL);

  CalibrationSamples samples;
  samples.channels.resize(cfg.channels);
  struct Truth {
    double s_pos, b_pos, s_neg, b_neg;
  };
  std::vector<Truth> truths(cfg.channels);

  auto distort = [&](double ideal, double gain, double offset) {
    double raw = gain * ideal + offset;
    if (cfg.nonlinearity != 0.0) {
      const double xn = ideal / 128.0;
      raw += cfg.nonlinearity * xn * xn * xn;
    }
    if (cfg.noise_sigma_lsb > 0.0) raw += rng.normal(0.0, cfg.noise_sigma_lsb);
    return raw;
  };

  for (std::size_t k = 0; k < cfg.channels; ++k) {
    Truth& t = truths[k];
    t.s_pos = rng.uniform(1.0 - cfg.gain_spread, 1.0 + cfg.gain_spread);
    t.s_neg = rng.uniform(1.0 - cfg.gain_spread, 1.0 + cfg.gain_spread);
    t.b_pos = rng.uniform(-cfg.offset_spread, cfg.offset_spread);
    t.b_neg = rng.uniform(-cfg.offset_spread, cfg.offset_spread);

    CalibrationSamples::Channel& ch = samples.channels[k];
    for (std::size_t i = 0; i < cfg.samples_per_channel; ++i) {
      // Differential mapping: both columns carry half the common mode.
      const double x = rng.uniform(-110.0, 110.0);
      const double pos = 0.5 * (220.0 + x);
      const double neg = 0.5 * (220.0 - x);
      ch.ideal_activation.push_back(x);
      ch.ideal_pos.push_back(pos);
      ch.ideal_neg.push_back(neg);
      ch.raw_pos.push_back(distort(pos, t.s_pos, t.b_pos));
      ch.raw_neg.push_back(distort(neg, t.s_neg, t.b_neg));
    }
  }

  CalibrationDemoReport report;
  report.coeffs = fit_calibration(samples);

  double pre_sq = 0.0, post_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < cfg.channels; ++k) {
    const CalibrationSamples::Channel& ch = samples.channels[k];
    for (std::size_t i = 0; i < ch.raw_pos.size(); ++i) {
      const double ideal = ch.ideal_activation[i];
      const double pre = ch.raw_pos[i] - ch.raw_neg[i];
      const double fused = apply_calibration_fused(ch.raw_pos[i], ch.raw_neg[i],
                                                   report.coeffs[k]);
      const double seq = apply_calibration_sequential(ch.raw_pos[i], ch.raw_neg[i],
                                                      report.coeffs[k]);
      pre_sq += (pre - ideal) * (pre - ideal);
      post_sq += (fused - ideal) * (fused - ideal);
      report.fused_vs_sequential_max_diff =
          std::max(report.fused_vs_sequential_max_diff, std::abs(fused - seq));
      ++count;
    }
  }
  report.pre_nrmse = std::sqrt(pre_sq / static_cast<double>(count)) / 256.0;
  report.post_nrmse = std::sqrt(post_sq / static_cast<double>(count)) / 256.0;
  return report;
}

std::string calibration_report_to_json(const CalibrationDemoReport& report) {
  nlohmann::json doc;
  doc["pre_nrmse"] = report.pre_nrmse;
  doc["post_nrmse"] = report.post_nrmse;
  doc["fused_vs_sequential_max_diff"] = report.fused_vs_sequential_max_diff;
  nlohmann::json chans = nlohmann::json::array();
  for (const ChannelCalibration& c : report.coeffs)
    chans.push_back({{"pos", {{"slope", c.pos.slope}, {"intercept", c.pos.intercept},
                              {"inv_gain", c.pos.inv_gain}, {"inv_offset", c.pos.inv_offset}}},
                     {"neg", {{"slope", c.neg.slope}, {"intercept", c.neg.intercept},
                              {"inv_gain", c.neg.inv_gain}, {"inv_offset", c.neg.inv_offset}}},
                     {"channel", {{"slope", c.channel.slope},
                                  {"intercept", c.channel.intercept},
                                  {"inv_gain", c.channel.inv_gain},
                                  {"inv_offset", c.channel.inv_offset}}},
                     {"fused", {{"gain_pos", c.fused_gain_pos},
                                {"gain_neg", c.fused_gain_neg},
                                {"offset", c.fused_offset}}}});
  doc["channels"] = std::move(chans);
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Hardware inference

namespace {

class NoisyRun final : public model::HwInterface {
 public:
  NoisyRun(const QuantizedModel& qm, const HardwareRunConfig& cfg,
           const std::vector<Vec>* realized, Rng& rng)
      : qm_(qm), cfg_(cfg), realized_(realized), rng_(rng) {}

  const Vec* realized_lambda(std::size_t b) const override {
    return realized_ != nullptr ? &(*realized_)[b] : nullptr;
  }

  void after_vmm(std::size_t b, Vec& u) override {
    if (cfg_.noise.at_vmm) inject_noise(u, cfg_.noise, qm_.activations[b].vmm, rng_);
  }

  void after_state_update(std::size_t b, Vec& upd) override {
    if (cfg_.noise.at_state_update)
      inject_noise(upd, cfg_.noise, qm_.activations[b].state, rng_);
  }

  void record_state_update(std::size_t b, const Vec& vmm_out, const Vec& h) override {
    const double step = qm_.activations[b].vmm.scale;
    for (std::size_t i = 0; i < vmm_out.size(); ++i) {
      const std::uint64_t pulses =
          static_cast<std::uint64_t>(std::llround(std::abs(vmm_out[i]) / step));
      if (pulses == 0) continue;
      const double g = std::abs(h[i]) * cfg_.conductance_unit_siemens;
      total_pulses += pulses;
      energy_j += static_cast<double>(pulses) * cfg_.pulse_voltage * cfg_.pulse_voltage * g *
                  cfg_.pulse_width_s;
      if (cfg_.capture_pulse_log) log.push_back({pulses, g});
    }
  }

  std::uint64_t total_pulses = 0;
  double energy_j = 0.0;
  std::vector<PulseRecord> log;

 private:
  const QuantizedModel& qm_;
  const HardwareRunConfig& cfg_;
  const std::vector<Vec>* realized_;
  Rng& rng_;
};

}  // namespace

HardwareReport hardware_inference(const QuantizedModel& qm, const EventDataset& dataset,
                                  const HardwareRunConfig& cfg) {
  require(!dataset.sequences.empty(), Errc::bad_argument, "empty dataset");
  require(qm.activations.size() == qm.model.config.total_blocks(), Errc::bad_config,
          "model is not quantized (missing activation schemes)");
  require(cfg.repeats >= 1, Errc::bad_argument, "repeats must be >= 1");

  HardwareReport report;
  report.clean_accuracy = train::evaluate(qm.model, dataset, cfg.threads).accuracy;

  report.per_repeat_accuracy.assign(cfg.repeats, 0.0);
  std::vector<double> energies(cfg.repeats, 0.0);
  std::vector<std::uint64_t> pulses(cfg.repeats, 0);
  std::vector<std::vector<PulseRecord>> logs(cfg.repeats);

  parallel_for(cfg.repeats, cfg.threads, [&](std::size_t r) {
    Rng rng = Rng::derive(cfg.seed, 0xBEEFULL + r);

    std::vector<Vec> realized;
    const std::vector<Vec>* realized_ptr = nullptr;
    if (cfg.lambda_sigma_rel > 0.0) {
      for (const model::BlockParams& blk : qm.model.params.blocks)
        realized.push_back(sample_lambda_variation(blk.lambda, cfg.lambda_sigma_rel, rng));
      realized_ptr = &realized;
    }

    HardwareRunConfig local = cfg;
    if (r != 0) local.capture_pulse_log = false;  // keep one log, bounded memory
    NoisyRun hw_local(qm, local, realized_ptr, rng);
    std::uint64_t correct = 0;
    for (const EventSequence& seq : dataset.sequences) {
      Vec logits = model::model_forward(qm.model, seq, &hw_local);
      const std::size_t pred = static_cast<std::size_t>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      if (pred == seq.label) ++correct;
    }
    report.per_repeat_accuracy[r] =
        static_cast<double>(correct) / static_cast<double>(dataset.sequences.size());
    energies[r] = hw_local.energy_j;
    pulses[r] = hw_local.total_pulses;
    logs[r] = std::move(hw_local.log);
  });

  double mean = 0.0;
  for (double a : report.per_repeat_accuracy) mean += a;
  mean /= static_cast<double>(cfg.repeats);
  double var = 0.0;
  for (double a : report.per_repeat_accuracy) var += (a - mean) * (a - mean);
  var /= static_cast<double>(cfg.repeats);

  report.mean_accuracy = mean;
  report.std_accuracy = std::sqrt(var);
  double emean = 0.0;
  for (double e : energies) emean += e;
  report.mean_pulse_energy_joules = emean / static_cast<double>(cfg.repeats);
  report.total_pulses_first_repeat = pulses[0];
  report.pulse_log = std::move(logs[0]);
  return report;
}

}  // namespace evssm::hw
