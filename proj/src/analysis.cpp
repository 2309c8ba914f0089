#include "evssm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

namespace evssm::analysis {

using nlohmann::json;

// ---------------------------------------------------------------------------
// SSM FLOPs

SsmFlopsReport ssm_flops(const SsmFlopsConfig& config) {
  require(config.sequence_length >= 1 && config.embedding_dim >= 1, Errc::bad_config,
          "sequence length and embedding dim must be >= 1");
  require(!config.stages.empty(), Errc::bad_config, "at least one stage required");

  SsmFlopsReport report;
  report.embedding = config.sequence_length * config.embedding_dim * 2;
  report.total = report.embedding;
  report.total_alternative = report.embedding;

  std::uint64_t length = config.sequence_length;
  for (std::size_t s = 0; s < config.stages.size(); ++s) {
    const SsmStageSpec& st = config.stages[s];
    require(st.blocks >= 1 && st.h_in >= 1 && st.h_state >= 1 && st.h_out >= 1 &&
                st.pool_stride >= 1,
            Errc::bad_config, "stage dims must be >= 1");
    for (std::uint64_t b = 0; b < st.blocks; ++b) {
      SsmBlockFlops f;
      f.stage = s;
      f.block = b;
      f.sequence_length = length;
      f.input_projection = length * st.h_in * st.h_state * 2;
      f.state_evolution = config.state_evolution_uses_state_dim ? length * st.h_state * 2
                                                                : length * st.h_in * 2;
      f.output_projection = length * st.h_state * st.h_out * 2;
      f.feedforward = length * st.h_out * st.h_out * 2;
      f.normalization = length * st.h_state * 5;
      f.total = f.input_projection + f.state_evolution + f.output_projection + f.feedforward +
                f.normalization;
      report.total += f.total;

      const std::uint64_t alt_se = config.state_evolution_uses_state_dim
                                       ? length * st.h_in * 2
                                       : length * st.h_state * 2;
      report.total_alternative += f.total - f.state_evolution + alt_se;
      report.blocks.push_back(f);
    }
    length = (length + st.pool_stride - 1) / st.pool_stride;  // ceil
  }
  return report;
}

// ---------------------------------------------------------------------------
// Convolutional baseline

std::uint64_t conv_flops(const ConvLayerSpec& l) {
  require(l.h_out >= 1 && l.w_out >= 1 && l.c_out >= 1 && l.c_in >= 1 && l.k >= 1,
          Errc::bad_config, "conv dims must be >= 1");
  return l.h_out * l.w_out * l.c_out * (l.k * l.k * l.c_in * 2);
}

namespace {

// Output spatial size for the standard stride-2, pad = k/2 reductions used here.
std::uint64_t halved(std::uint64_t x) { return (x + 1) / 2; }

}  // namespace

std::vector<ConvLayerSpec> resnet_conv_layers(int depth, std::uint64_t input_h,
                                              std::uint64_t input_w, std::uint64_t in_channels,
                                              bool include_downsample) {
  require(depth == 18 || depth == 50, Errc::bad_argument, "supported depths: 18, 50");

  std::vector<ConvLayerSpec> layers;
  // Stem: 7x7 stride-2 conv, then the 3x3 stride-2 max pool (no FLOPs counted).
  std::uint64_t h = halved(input_h), w = halved(input_w);
  layers.push_back({h, w, 64, in_channels, 7});
  h = halved(h);
  w = halved(w);

  if (depth == 18) {
    const std::uint64_t widths[4] = {64, 128, 256, 512};
    std::uint64_t c_in = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const std::uint64_t c = widths[stage];
      if (stage > 0) {
        h = halved(h);
        w = halved(w);
      }
      for (int block = 0; block < 2; ++block) {
        const std::uint64_t first_in = block == 0 ? c_in : c;
        layers.push_back({h, w, c, first_in, 3});
        layers.push_back({h, w, c, c, 3});
        if (block == 0 && first_in != c && include_downsample)
          layers.push_back({h, w, c, first_in, 1});
      }
      c_in = c;
    }
  } else {
    const std::uint64_t widths[4] = {64, 128, 256, 512};
    const int counts[4] = {3, 4, 6, 3};
    std::uint64_t c_in = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const std::uint64_t mid = widths[stage];
      const std::uint64_t out = mid * 4;
      const bool spatial_stride = stage > 0;
      for (int block = 0; block < counts[stage]; ++block) {
        const std::uint64_t block_in = block == 0 ? c_in : out;
        // Stride lives on the 3x3 conv (the common v1.5 layout), so the first
        // 1x1 of a striding block still runs at the input resolution.
        const std::uint64_t h1 = h, w1 = w;
        std::uint64_t h2 = h, w2 = w;
        if (block == 0 && spatial_stride) {
          h2 = halved(h);
          w2 = halved(w);
        }
        layers.push_back({h1, w1, mid, block_in, 1});
        layers.push_back({h2, w2, mid, mid, 3});
        layers.push_back({h2, w2, out, mid, 1});
        if (block == 0 && include_downsample) layers.push_back({h2, w2, out, block_in, 1});
        if (block == 0 && spatial_stride) {
          h = h2;
          w = w2;
        }
      }
      c_in = out;
    }
  }
  return layers;
}

ResnetFlopsReport resnet_flops(int depth, std::uint64_t frames, std::uint64_t input_h,
                               std::uint64_t input_w, std::uint64_t in_channels) {
  require(frames >= 1, Errc::bad_argument, "frames must be >= 1");
  ResnetFlopsReport rep;
  rep.depth = depth;
  rep.frames = frames;
  for (const ConvLayerSpec& l : resnet_conv_layers(depth, input_h, input_w, in_channels, true))
    rep.per_frame_with_downsample += conv_flops(l);
  for (const ConvLayerSpec& l : resnet_conv_layers(depth, input_h, input_w, in_channels, false))
    rep.per_frame_without_downsample += conv_flops(l);
  rep.total_with_downsample = rep.per_frame_with_downsample * frames;
  rep.total_without_downsample = rep.per_frame_without_downsample * frames;
  return rep;
}

// ---------------------------------------------------------------------------
// Pulse energy

double sn_energy(const std::vector<std::uint64_t>& pulse_counts, const Vec& conductances_siemens,
                 double pulse_voltage, double pulse_width_s) {
  require(pulse_counts.size() == conductances_siemens.size(), Errc::dimension_mismatch,
          "pulse counts and conductances must align");
  double e = 0.0;
  for (std::size_t i = 0; i < pulse_counts.size(); ++i) {
    require(conductances_siemens[i] >= 0.0, Errc::bad_argument,
            "negative conductance is not physical");
    e += static_cast<double>(pulse_counts[i]) * pulse_voltage * pulse_voltage *
         conductances_siemens[i] * pulse_width_s;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Power accounting

PowerConfig PowerConfig::reference_preset() {
  PowerConfig cfg;
  // Published anchors: 34 mW total; ADC 43.7%, RRAM analog 30.3%, SN 0.4%;
  // 0.028 mW per array, 0.25 mW per LUT, two LUTs per block, six blocks.
  const double total = 34.0;
  const double adc_mw = 0.437 * total;                    // 14.858
  const double rram_share_mw = 0.303 * total;             // 10.302
  const double arrays = std::round(rram_share_mw / 0.028);  // 368
  const double sn_mw = 0.004 * total;                     // 0.136
  const double lut_mw = 12.0 * 0.25;                      // 3.0
  const double digital_mw = total - adc_mw - arrays * 0.028 - sn_mw - lut_mw;

  cfg.components.push_back({"adc", 96.0, adc_mw / 96.0, true,
                            "unit power solved from the 43.7% share of 34 mW over 96 converters"});
  cfg.components.push_back(
      {"rram_analog_array", arrays, 0.028, true,
       "array count solved from the 30.3% share of 34 mW at 0.028 mW per array"});
  cfg.components.push_back({"state_node_array", 6.0, sn_mw / 6.0, true,
                            "unit power solved from the 0.4% share of 34 mW over 6 blocks"});
  cfg.components.push_back({"lut", 12.0, 0.25, false, "two 256-entry LUTs per block, 0.25 mW each"});
  cfg.components.push_back({"digital_other", 1.0, digital_mw, true,
                            "remainder closing the 34 mW total"});
  return cfg;
}

PowerBreakdown power_breakdown(const PowerConfig& config) {
  require(!config.components.empty(), Errc::bad_config, "no components");
  PowerBreakdown out;
  for (const PowerComponent& c : config.components) {
    require(c.unit_power_mw >= 0.0 && c.count >= 0.0, Errc::bad_config,
            "unit powers and counts must be >= 0");
    out.total_mw += c.count * c.unit_power_mw;
  }
  require(out.total_mw > 0.0, Errc::bad_config,
          "total power is zero; percentages are undefined");
  for (const PowerComponent& c : config.components) {
    PowerShare s;
    s.name = c.name;
    s.power_mw = c.count * c.unit_power_mw;
    s.percent = 100.0 * s.power_mw / out.total_mw;
    s.derived = c.derived;
    s.derivation = c.derivation;
    out.shares.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

double to_gflops(std::uint64_t flops) { return static_cast<double>(flops) / 1e9; }

json ssm_blocks_json(const SsmFlopsReport& report) {
  json arr = json::array();
  for (const SsmBlockFlops& b : report.blocks)
    arr.push_back({{"stage", b.stage},
                   {"block", b.block},
                   {"sequence_length", b.sequence_length},
                   {"input_projection", b.input_projection},
                   {"state_evolution", b.state_evolution},
                   {"output_projection", b.output_projection},
                   {"feedforward", b.feedforward},
                   {"normalization", b.normalization},
                   {"total", b.total}});
  return arr;
}

}  // namespace

std::string ssm_flops_report_to_json(const SsmFlopsConfig& config, const SsmFlopsReport& report) {
  json doc;
  doc["embedding_flops"] = report.embedding;
  doc["blocks"] = ssm_blocks_json(report);
  doc["total_flops"] = report.total;
  doc["total_gflops"] = to_gflops(report.total);
  doc["state_evolution_term"] =
      config.state_evolution_uses_state_dim ? "L*h_state*2" : "L*h_in*2";
  doc["total_flops_alternative_state_evolution"] = report.total_alternative;
  doc["note"] =
      "state evolution is costed as L*h_in*2 as documented; the alternative total uses "
      "L*h_state*2, which dimensional reasoning suggests";
  return doc.dump(2);
}

std::string resnet_report_to_json(const ResnetFlopsReport& report) {
  json doc;
  doc["depth"] = report.depth;
  doc["frames"] = report.frames;
  doc["per_frame_flops"] = {{"with_downsample", report.per_frame_with_downsample},
                            {"without_downsample", report.per_frame_without_downsample}};
  doc["total_flops"] = {{"with_downsample", report.total_with_downsample},
                        {"without_downsample", report.total_without_downsample}};
  doc["total_gflops"] = {{"with_downsample", to_gflops(report.total_with_downsample)},
                         {"without_downsample", to_gflops(report.total_without_downsample)}};

  if (report.frames == 180) {
    const double reference = report.depth == 18 ? 104.28 : 219.80;
    json rec;
    rec["reference_total_gflops"] = reference;
    rec["computed_total_gflops"] = to_gflops(report.total_with_downsample);
    rec["computed_over_reference"] = to_gflops(report.total_with_downsample) / reference;
    rec["computed_total_gflops_mac_counted"] = to_gflops(report.total_with_downsample) / 2.0;
    rec["reference_efficiency_ratio_vs_ssm"] = report.depth == 18 ? 62.12 : 130.93;
    rec["ratio_from_reference_totals"] = reference / 1.68;
    rec["assumptions"] = json::array(
        {"convolutional layers only; fc and pooling excluded",
         "stem conv adapted to 2 input channels; bottleneck stride placed on the 3x3 conv",
         "MAC = 2 FLOPs; the reference total closely matches a MAC = 1 count of the same "
         "layers, so the factor-2 gap is a counting-convention difference",
         "downsample-shortcut convolutions included in the primary total and reported "
         "separately without them"});
    doc["reconciliation"] = rec;
  }
  return doc.dump(2);
}

std::string power_report_to_json(const PowerConfig& config, const PowerBreakdown& breakdown) {
  json doc;
  doc["total_mw"] = breakdown.total_mw;
  json comps = json::array();
  for (std::size_t i = 0; i < breakdown.shares.size(); ++i) {
    const PowerShare& s = breakdown.shares[i];
    const PowerComponent& c = config.components[i];
    comps.push_back({{"name", s.name},
                     {"count", c.count},
                     {"unit_power_mw", c.unit_power_mw},
                     {"power_mw", s.power_mw},
                     {"percent", std::round(s.percent * 10.0) / 10.0},
                     {"derived", s.derived},
                     {"derivation", s.derivation}});
  }
  doc["components"] = comps;
  doc["pulse_model"] = {{"voltage_v", config.pulse_voltage},
                        {"width_s", config.pulse_width_s}};
  return doc.dump(2);
}

std::string reconcile_ssm_reference_to_json() {
  const double reference_gflops = 1.68;
  json candidates = json::array();

  double best_diff = 1e300;
  json best;
  for (std::uint64_t d : {8ULL, 16ULL, 32ULL, 64ULL, 96ULL, 128ULL, 192ULL, 256ULL}) {
    for (bool se_state : {false, true}) {
      for (int mac : {2, 1}) {
        SsmFlopsConfig cfg;
        cfg.sequence_length = 65536;
        cfg.embedding_dim = d;
        cfg.stages.push_back({3, d, 128, d, 16});
        cfg.stages.push_back({3, d, 256, d, 16});
        cfg.state_evolution_uses_state_dim = se_state;
        SsmFlopsReport rep = ssm_flops(cfg);
        const double g = to_gflops(rep.total) * (mac == 1 ? 0.5 : 1.0);
        json cand = {{"feature_dim", d},
                     {"state_evolution_term", se_state ? "L*h_state*2" : "L*h_in*2"},
                     {"flops_per_mac", mac},
                     {"total_gflops", g},
                     {"relative_gap", (g - reference_gflops) / reference_gflops}};
        candidates.push_back(cand);
        if (std::abs(g - reference_gflops) < best_diff) {
          best_diff = std::abs(g - reference_gflops);
          best = cand;
        }
      }
    }
  }

  json doc;
  doc["reference_total_gflops"] = reference_gflops;
  doc["fixed"] = {{"sequence_length", 65536},
                  {"stages", "3 blocks at state 128, then 3 blocks at state 256"},
                  {"pool_stride", 16}};
  doc["assumptions"] = json::array(
      {"embedding and feature dimensions are not published; the sweep treats "
       "embedding_dim = h_in = h_out as one candidate dimension",
       "exact reproduction is a reconciliation goal, not an assertion"});
  doc["candidates"] = candidates;
  doc["closest"] = best;
  return doc.dump(2);
}

}  // namespace evssm::analysis
