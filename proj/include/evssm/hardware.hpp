#ifndef EVSSM_HARDWARE_HPP
#define EVSSM_HARDWARE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evssm/event_io.hpp"
#include "evssm/model.hpp"
#include "evssm/rng.hpp"
#include "evssm/trainer.hpp"

namespace evssm::hw {

// ---------------------------------------------------------------------------
// INT8 symmetric per-tensor quantization

struct QuantScheme {
  int bits = 8;
  double scale = 1.0;  // value of one LSB
  int zero_point = 0;  // symmetric
};

// scale = max|x| / 127; an all-zero tensor gets scale 1.
QuantScheme fit_symmetric_scheme(std::span<const double> values);

inline int quantize_value(double x, const QuantScheme& q) {
  double code = std::nearbyint(x / q.scale);
  if (code < -128.0) code = -128.0;
  if (code > 127.0) code = 127.0;
  return static_cast<int>(code);
}
inline double dequantize_value(int code, const QuantScheme& q) {
  return static_cast<double>(code) * q.scale;
}

struct BlockActivationSchemes {
  QuantScheme vmm;     // projected-input (crossbar output) range
  QuantScheme state;   // state-node range
  QuantScheme output;  // gated block output range
};

struct QuantizedModel {
  model::Model model;  // weights replaced by their dequantized INT8 values
  std::map<std::string, QuantScheme> weight_schemes;
  std::vector<BlockActivationSchemes> activations;  // one per block
};

struct QuantOptions {
  std::size_t calibration_sequences = 64;
  // Optional QAT fine-tune: straight-through fake quantization of weights and
  // block-boundary activations for this many epochs of frozen-rate training.
  std::size_t qat_epochs = 0;
  train::TrainConfig qat_config;
};

QuantizedModel quantize_model(const model::Model& m, const io::EventDataset& calibration,
                              const QuantOptions& opts = {});

// ---------------------------------------------------------------------------
// Noise model

struct NoiseModel {
  double mean_lsb = 0.0;
  double sigma_lsb = 0.0;  // in LSB of the 8-bit output range at the injection point
  bool at_vmm = true;
  bool at_state_update = true;
};

// Adds i.i.d. N(mean, sigma^2) in LSB units converted through the scheme's scale.
// A (0, 0) model leaves the vector untouched, bit for bit.
void inject_noise(Vec& values, const NoiseModel& noise, const QuantScheme& scheme, Rng& rng);

// ---------------------------------------------------------------------------
// State-node device array

struct StateNodeArray {
  Vec conductance;  // one device per state dimension, arbitrary units
  Vec nominal_lambda;
  Vec realized_lambda;
  std::uint64_t last_update_us = 0;
  std::vector<std::uint64_t> pulse_counts;  // cumulative per device
};

StateNodeArray make_state_nodes(const Vec& nominal_lambda);

// G <- exp(-lambda_realized * dt) G + vmm_output; pulses per device are recorded as
// round(|vmm_output| / code_step), one code per pulse.
void state_node_update(StateNodeArray& nodes, double dt_ms, const Vec& vmm_output,
                       double code_step);

// Per-device draw from N(nominal, (sigma_rel*nominal)^2), truncated below at 1% of
// nominal so a device can never flip sign. sigma_rel must lie in [0, 0.5].
Vec sample_lambda_variation(const Vec& nominal_lambda, double sigma_rel, Rng& rng);

// ---------------------------------------------------------------------------
// Two-stage fused ADC calibration

struct LinearFit {
  double slope = 1.0;       // s (or alpha)
  double intercept = 0.0;   // b (or beta)
  double inv_gain = 1.0;    // a = 1/s
  double inv_offset = 0.0;  // d = -b/s
};

struct ChannelCalibration {
  LinearFit pos;      // per positive column
  LinearFit neg;      // per negative column
  LinearFit channel;  // per-channel stage
  double fused_gain_pos = 1.0;
  double fused_gain_neg = 1.0;
  double fused_offset = 0.0;
};

using CalibrationCoeffs = std::vector<ChannelCalibration>;

struct CalibrationSamples {
  struct Channel {
    Vec ideal_pos, raw_pos;
    Vec ideal_neg, raw_neg;
    Vec ideal_activation;  // target differential output
  };
  std::vector<Channel> channels;
};

// OLS per column, stage-1 correction plus differential subtraction, OLS per channel,
// then the fused coefficients G_pos, G_neg, O_diff.
CalibrationCoeffs fit_calibration(const CalibrationSamples& samples);

double apply_calibration_sequential(double raw_pos, double raw_neg,
                                    const ChannelCalibration& c);
double apply_calibration_fused(double raw_pos, double raw_neg, const ChannelCalibration& c);

// Synthesizes distorted differential readouts, fits, applies, and reports quality.
struct CalibrationDemoConfig {
  std::size_t channels = 8;
  std::size_t samples_per_channel = 512;
  double gain_spread = 0.25;      // column gains drawn from [1-g, 1+g]
  double offset_spread = 10.0;    // column offsets from [-o, +o] LSB
  double nonlinearity = 0.0;      // cubic distortion amplitude, LSB at full scale
  double noise_sigma_lsb = 0.0;   // stochastic residual per column readout
  std::uint64_t seed = 1;
};

struct CalibrationDemoReport {
  double pre_nrmse = 0.0;   // of full scale (256 LSB)
  double post_nrmse = 0.0;
  double fused_vs_sequential_max_diff = 0.0;
  CalibrationCoeffs coeffs;
};

CalibrationDemoReport run_calibration_demo(const CalibrationDemoConfig& cfg);
std::string calibration_report_to_json(const CalibrationDemoReport& report);

// ---------------------------------------------------------------------------
// Hardware inference

struct HardwareRunConfig {
  NoiseModel noise;
  double lambda_sigma_rel = 0.0;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  // Pulse/energy accounting (Joules = V^2 * G * t per pulse).
  double pulse_voltage = 1.4;            // V
  double pulse_width_s = 50e-6;          // s
  double conductance_unit_siemens = 1e-4;  // device conductance per unit of state
  bool capture_pulse_log = false;        // keep per-update (pulses, conductance) pairs
};

struct PulseRecord {
  std::uint64_t pulses;
  double conductance_siemens;
};

struct HardwareReport {
  double clean_accuracy = 0.0;  // noise-free, variation-free quantized accuracy
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::vector<double> per_repeat_accuracy;
  double mean_pulse_energy_joules = 0.0;
  std::uint64_t total_pulses_first_repeat = 0;
  std::vector<PulseRecord> pulse_log;  // first repeat only, when captured
};

// Runs the quantized model with noise at both injection points and per-device decay
// variation; each repeat draws an independent generator from (seed, repeat index).
HardwareReport hardware_inference(const QuantizedModel& qm, const io::EventDataset& dataset,
                                  const HardwareRunConfig& cfg);

}  // namespace evssm::hw

#endif  // EVSSM_HARDWARE_HPP
