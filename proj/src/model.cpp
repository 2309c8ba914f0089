#include "evssm/model.hpp"

#include <algorithm>
#include <cmath>

#include "evssm/hippo.hpp"
#include "evssm/rng.hpp"

namespace evssm::model {

namespace {
constexpr double kNormEpsilon = 1e-5;
constexpr double kBbarSeriesCutoff = 1e-6;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  require(num_channels >= 1, Errc::bad_config, "num_channels must be >= 1");
  require(num_classes >= 2, Errc::bad_config, "num_classes must be >= 2");
  require(embedding_dim >= 1, Errc::bad_config, "embedding_dim must be >= 1");
  require(!stages.empty(), Errc::bad_config, "at least one stage required");
  std::uint32_t carry = embedding_dim;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageConfig& st = stages[s];
    require(st.blocks >= 1 && st.h_in >= 1 && st.h_state >= 1 && st.h_out >= 1,
            Errc::bad_config, "stage dims must be >= 1");
    require(st.pool_stride >= 1, Errc::bad_config, "pool_stride must be >= 1");
    require(st.h_in == st.h_out, Errc::bad_config,
            "stage " + std::to_string(s) + ": h_in must equal h_out so the block residual chains");
    require(st.h_in == carry, Errc::bad_config,
            "stage " + std::to_string(s) + ": h_in does not chain from the previous stage");
    carry = st.h_out;
  }
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (const StageConfig& st : stages) n += st.blocks;
  return n;
}

const StageConfig& ModelConfig::stage_of(std::size_t b) const {
  for (const StageConfig& st : stages) {
    if (b < st.blocks) return st;
    b -= st.blocks;
  }
  fail(Errc::bad_argument, "block index out of range");
}

// ---------------------------------------------------------------------------
// Parameters

ParamSet make_params(const ModelConfig& config) {
  config.validate();
  ParamSet p;
  p.embedding.w = Mat(config.num_channels, config.embedding_dim);
  for (std::size_t b = 0; b < config.total_blocks(); ++b) {
    const StageConfig& st = config.stage_of(b);
    BlockParams blk;
    blk.lambda.assign(st.h_state, 1.0);
    blk.input_proj = Mat(st.h_in, st.h_state);
    blk.readout = Mat(st.h_state, st.h_out);
    blk.gate_w = Mat(st.h_out, st.h_out);
    blk.gate_b.assign(st.h_out, 0.0);
    blk.norm_scale.assign(st.h_in, 1.0);
    blk.norm_shift.assign(st.h_in, 0.0);
    p.blocks.push_back(std::move(blk));
  }
  p.head.w = Mat(config.stages.back().h_out, config.num_classes);
  p.head.b.assign(config.num_classes, 0.0);
  return p;
}

std::vector<TensorRef> tensor_refs(ParamSet& params) {
  std::vector<TensorRef> refs;
  refs.push_back({"embedding.w", params.embedding.w.data(), params.embedding.w.size(), false});
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    BlockParams& blk = params.blocks[b];
    const std::string prefix = "block" + std::to_string(b) + ".";
    refs.push_back({prefix + "lambda", blk.lambda.data(), blk.lambda.size(), true});
    refs.push_back({prefix + "input_proj", blk.input_proj.data(), blk.input_proj.size(), false});
    refs.push_back({prefix + "readout", blk.readout.data(), blk.readout.size(), false});
    refs.push_back({prefix + "gate_w", blk.gate_w.data(), blk.gate_w.size(), false});
    refs.push_back({prefix + "gate_b", blk.gate_b.data(), blk.gate_b.size(), false});
    refs.push_back({prefix + "norm_scale", blk.norm_scale.data(), blk.norm_scale.size(), false});
    refs.push_back({prefix + "norm_shift", blk.norm_shift.data(), blk.norm_shift.size(), false});
  }
  refs.push_back({"head.w", params.head.w.data(), params.head.w.size(), false});
  refs.push_back({"head.b", params.head.b.data(), params.head.b.size(), false});
  return refs;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

void fill_normal(Mat& m, double stddev, Rng& rng) {
  for (double& x : m.a) x = rng.normal(0.0, stddev);
}

Vec initial_lambda(std::uint32_t h_state, const Vec& eigenvalues) {
  Vec lam(h_state);
  double lo = eigenvalues.front();
  double hi = eigenvalues.back();
  if (hi - lo <= 0.0) {
    // Degenerate spectrum (H = 1): take the midpoint of the target range.
    std::fill(lam.begin(), lam.end(), 0.5 * (kLambdaInitMin + kLambdaInitMax));
    return lam;
  }
  for (std::size_t i = 0; i < h_state; ++i) {
    double t = (eigenvalues[i] - lo) / (hi - lo);
    lam[i] = kLambdaInitMin + t * (kLambdaInitMax - kLambdaInitMin);
  }
  return lam;
}

}  // namespace

BlockParams init_block(std::uint32_t h_in, std::uint32_t h_state, std::uint32_t h_out,
                       std::uint64_t seed) {
  require(h_in >= 1 && h_state >= 1 && h_out >= 1, Errc::bad_argument, "block dims must be >= 1");
  BlockParams blk;
  HippoOperator op = hippo_init(h_state);
  blk.lambda = initial_lambda(h_state, op.eigenvalues);

  Rng rb = Rng::derive(seed, 1);
  Rng rc = Rng::derive(seed, 2);
  Rng rw = Rng::derive(seed, 3);
  blk.input_proj = Mat(h_in, h_state);
  fill_normal(blk.input_proj, 1.0 / std::sqrt(static_cast<double>(h_in)), rb);
  blk.readout = Mat(h_state, h_out);
  fill_normal(blk.readout, 1.0 / std::sqrt(static_cast<double>(h_state)), rc);
  blk.gate_w = Mat(h_out, h_out);
  fill_normal(blk.gate_w, 1.0 / std::sqrt(static_cast<double>(h_out)), rw);
  blk.gate_b.assign(h_out, 0.0);
  blk.norm_scale.assign(h_in, 1.0);
  blk.norm_shift.assign(h_in, 0.0);
  return blk;
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  m.params = make_params(config);

  Rng re = Rng::derive(seed, 0);
  fill_normal(m.params.embedding.w, 1.0 / std::sqrt(static_cast<double>(config.embedding_dim)),
              re);
  for (std::size_t b = 0; b < config.total_blocks(); ++b) {
    const StageConfig& st = config.stage_of(b);
    m.params.blocks[b] = init_block(st.h_in, st.h_state, st.h_out, splitmix64(seed) + b + 1);
  }
  Rng rh = Rng::derive(seed, 0x4eadULL);
  fill_normal(m.params.head.w,
              1.0 / std::sqrt(static_cast<double>(config.stages.back().h_out)), rh);
  return m;
}

// ---------------------------------------------------------------------------
// Elementwise pieces

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_derivative(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

double transition_factor(double lambda, double dt_ms) {
  require(lambda > 0.0, Errc::bad_argument, "transition_factor: lambda must be > 0");
  require(dt_ms >= 0.0, Errc::bad_argument, "transition_factor: dt must be >= 0");
  return std::exp(-lambda * dt_ms);
}

double bbar_factor(double lambda) {
  require(lambda > 0.0, Errc::bad_argument, "bbar_factor: lambda must be > 0");
  if (lambda < kBbarSeriesCutoff)
    return 1.0 - lambda / 2.0 + lambda * lambda / 6.0 - lambda * lambda * lambda / 24.0;
  return (1.0 - std::exp(-lambda)) / lambda;
}

double bbar_factor_derivative(double lambda) {
  require(lambda > 0.0, Errc::bad_argument, "bbar_factor_derivative: lambda must be > 0");
  if (lambda < kBbarSeriesCutoff)
    return -0.5 + lambda / 3.0 - lambda * lambda / 8.0 + lambda * lambda * lambda / 30.0;
  return ((lambda + 1.0) * std::exp(-lambda) - 1.0) / (lambda * lambda);
}

Mat input_projection_bar(double lambda, const Mat& input_proj) {
  double f = bbar_factor(lambda);
  Mat out = input_proj;
  for (double& x : out.a) x *= f;
  return out;
}

Mat input_projection_bar(const Vec& lambda, const Mat& input_proj) {
  require(lambda.size() == input_proj.cols, Errc::dimension_mismatch,
          "input_projection_bar: lambda size must match state columns");
  Vec f(lambda.size());
  for (std::size_t i = 0; i < lambda.size(); ++i) f[i] = bbar_factor(lambda[i]);
  Mat out = input_proj;
  for (std::size_t j = 0; j < out.rows; ++j)
    for (std::size_t i = 0; i < out.cols; ++i) out(j, i) *= f[i];
  return out;
}

Vec embed_event(const EmbeddingParams& embedding, std::uint32_t channel) {
  require(channel < embedding.w.rows, Errc::channel_out_of_range,
          "embed_event: channel " + std::to_string(channel) + " out of range");
  Vec v(embedding.w.cols);
  for (std::size_t j = 0; j < embedding.w.cols; ++j) v[j] = embedding.w(channel, j);
  return v;
}

StateVector step_state(const StateVector& state, double dt_ms, const Vec& projected_input,
                       const Vec& lambda) {
  require(projected_input.size() == state.h.size() && lambda.size() == state.h.size(),
          Errc::dimension_mismatch, "step_state: size mismatch");
  require(all_finite(projected_input), Errc::non_finite, "step_state: non-finite input");
  Vec a(state.h.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = transition_factor(lambda[i], dt_ms);
  StateVector next;
  next.h.resize(state.h.size());
  decay_update(a.data(), state.h.data(), projected_input.data(), next.h.data(), a.size());
  next.last_timestamp_us =
      state.last_timestamp_us + static_cast<std::uint64_t>(std::llround(dt_ms * 1000.0));
  return next;
}

StateVector step_state(const StateVector& state, double dt_ms, const Vec& projected_input,
                       double lambda) {
  return step_state(state, dt_ms, projected_input, Vec(state.h.size(), lambda));
}

Vec gated_block_output(const Vec& y, const Mat& gate_w, const Vec& gate_b) {
  require(gate_w.rows == y.size() && gate_w.cols == y.size() && gate_b.size() == y.size(),
          Errc::dimension_mismatch, "gated_block_output: size mismatch");
  require(all_finite(y), Errc::non_finite, "gated_block_output: non-finite input");
  Vec g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = gelu(y[i]);
  Vec out(y.size());
  for (std::size_t o = 0; o < y.size(); ++o) {
    double z = gate_b[o];
    for (std::size_t i = 0; i < y.size(); ++i) z += gate_w(o, i) * g[i];
    out[o] = y[o] + y[o] * sigmoid(z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block evaluation

namespace {

bool all_equal(const Vec& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] != v[0]) return false;
  return true;
}

double fake_quant(double x, double step) {
  double code = std::nearbyint(x / step);
  code = std::clamp(code, -128.0, 127.0);
  return code * step;
}

}  // namespace

std::vector<io::TimedVec> run_block(const BlockParams& params,
                                    const std::vector<io::TimedVec>& inputs,
                                    const RunContext& ctx, BlockCache* cache) {
  const std::size_t h_in = params.input_proj.rows;
  const std::size_t h_state = params.input_proj.cols;
  const std::size_t h_out = params.readout.cols;
  require(params.readout.rows == h_state, Errc::dimension_mismatch, "readout rows != state dim");
  require(params.lambda.size() == h_state, Errc::dimension_mismatch, "lambda size != state dim");
  for (double l : params.lambda)
    require(l > 0.0, Errc::invariant_violation, "block lambda must be > 0");

  const std::size_t n = inputs.size();
  std::vector<io::TimedVec> outputs(n);
  if (n == 0) return outputs;

  const Vec* lam_device = &params.lambda;
  if (ctx.hw != nullptr) {
    const Vec* ov = ctx.hw->realized_lambda(ctx.block_index);
    if (ov != nullptr) {
      require(ov->size() == h_state, Errc::dimension_mismatch, "realized lambda size mismatch");
      lam_device = ov;
    }
  }

  // The crossbar is programmed from the nominal rates; device variation only
  // affects the decay, so the bbar factor always uses params.lambda.
  Vec bbar(h_state);
  for (std::size_t i = 0; i < h_state; ++i) bbar[i] = bbar_factor(params.lambda[i]);

  if (cache != nullptr) {
    cache->dt_ms.resize(n);
    cache->x.resize(n);
    cache->mean.resize(n);
    cache->inv_std.resize(n);
    cache->xn.resize(n);
    cache->xa.resize(n);
    cache->v.resize(n);
    cache->u.resize(n);
    cache->a.resize(n);
    cache->h.resize(n);
    cache->y.resize(n);
    cache->gel.resize(n);
    cache->sig.resize(n);
  }

  std::vector<scan::DiagElement> elements(n);
  std::vector<Vec> measured_vmm;  // post-noise VMM outputs, kept for pulse accounting
  if (ctx.hw != nullptr) measured_vmm.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec& x = inputs[k].value;
    require(x.size() == h_in, Errc::dimension_mismatch, "block input size mismatch");
    double dt_ms = 0.0;
    if (k > 0) {
      require(inputs[k].timestamp_us >= inputs[k - 1].timestamp_us,
              Errc::non_monotonic_timestamps, "block inputs must be time-ordered");
      dt_ms = static_cast<double>(inputs[k].timestamp_us - inputs[k - 1].timestamp_us) / 1000.0;
    }

    // Pre-norm layer normalization over the feature axis.
    double mean = 0.0;
    for (double xi : x) mean += xi;
    mean /= static_cast<double>(h_in);
    double var = 0.0;
    for (double xi : x) var += (xi - mean) * (xi - mean);
    var /= static_cast<double>(h_in);
    double inv_std = 1.0 / std::sqrt(var + kNormEpsilon);
    Vec xn(h_in), xa(h_in);
    for (std::size_t j = 0; j < h_in; ++j) {
      xn[j] = (x[j] - mean) * inv_std;
      xa[j] = params.norm_scale[j] * xn[j] + params.norm_shift[j];
    }

    Vec v(h_state, 0.0);
    for (std::size_t j = 0; j < h_in; ++j) {
      double xj = xa[j];
      for (std::size_t i = 0; i < h_state; ++i) v[i] += params.input_proj(j, i) * xj;
    }
    Vec u(h_state);
    for (std::size_t i = 0; i < h_state; ++i) u[i] = bbar[i] * v[i];

    if (ctx.hw != nullptr) {
      ctx.hw->after_vmm(ctx.block_index, u);
      measured_vmm[k] = u;
    }

    Vec a(h_state);
    for (std::size_t i = 0; i < h_state; ++i) a[i] = std::exp(-(*lam_device)[i] * dt_ms);

    if (cache != nullptr) {
      cache->dt_ms[k] = dt_ms;
      cache->x[k] = x;
      cache->mean[k] = mean;
      cache->inv_std[k] = inv_std;
      cache->xn[k] = xn;
      cache->xa[k] = std::move(xa);
      cache->v[k] = v;
      cache->u[k] = u;
      cache->a[k] = a;
    }

    elements[k].a = std::move(a);
    elements[k].b = std::move(u);
    if (ctx.hw != nullptr) ctx.hw->after_state_update(ctx.block_index, elements[k].b);
  }

  // Shared decay rates collapse the transition to a scalar per event; use the
  // scalar elements then (identical arithmetic per dimension, cheaper combine).
  std::vector<Vec> states(n);
  bool scalar_path = cache == nullptr && all_equal(*lam_device);
  if (scalar_path) {
    std::vector<scan::ScalarElement> selems(n);
    for (std::size_t k = 0; k < n; ++k) {
      selems[k].a = elements[k].a[0];
      selems[k].b = std::move(elements[k].b);
    }
    std::vector<scan::ScalarElement> prefix = scan::inclusive_scan(selems, ctx.scan);
    for (std::size_t k = 0; k < n; ++k) states[k] = std::move(prefix[k].b);
  } else {
    std::vector<scan::DiagElement> prefix = scan::inclusive_scan(elements, ctx.scan);
    for (std::size_t k = 0; k < n; ++k) states[k] = std::move(prefix[k].b);
  }

  for (std::size_t k = 0; k < n; ++k) {
    const Vec& h = states[k];
    if (ctx.hw != nullptr) ctx.hw->record_state_update(ctx.block_index, measured_vmm[k], h);

    Vec y(h_out, 0.0);
    for (std::size_t i = 0; i < h_state; ++i) {
      double hi = h[i];
      for (std::size_t o = 0; o < h_out; ++o) y[o] += params.readout(i, o) * hi;
    }

    Vec g(h_out), s(h_out), outv(h_out);
    for (std::size_t o = 0; o < h_out; ++o) g[o] = gelu(y[o]);
    for (std::size_t o = 0; o < h_out; ++o) {
      double z = params.gate_b[o];
      for (std::size_t i = 0; i < h_out; ++i) z += params.gate_w(o, i) * g[i];
      s[o] = sigmoid(z);
      outv[o] = y[o] + y[o] * s[o];
    }
    if (ctx.output_quant_step > 0.0)
      for (double& q : outv) q = fake_quant(q, ctx.output_quant_step);
    if (ctx.hw != nullptr) ctx.hw->after_block_output(ctx.block_index, outv);

    if (cache != nullptr) {
      cache->h[k] = h;
      cache->y[k] = y;
      cache->gel[k] = std::move(g);
      cache->sig[k] = std::move(s);
    }
    outputs[k].timestamp_us = inputs[k].timestamp_us;
    outputs[k].value = std::move(outv);
  }
  return outputs;
}

std::vector<io::TimedVec> block_forward(const BlockParams& params,
                                        const std::vector<io::TimedVec>& inputs,
                                        const scan::ScanOptions& opts) {
  RunContext ctx;
  ctx.scan = opts;
  return run_block(params, inputs, ctx, nullptr);
}

Vec model_forward(const Model& model, const io::EventSequence& sequence, HwInterface* hw,
                  const scan::ScanOptions& opts) {
  model.config.validate();
  require(!sequence.events.empty(), Errc::bad_argument, "cannot classify an empty sequence");

  std::vector<io::TimedVec> flow(sequence.events.size());
  for (std::size_t k = 0; k < sequence.events.size(); ++k) {
    flow[k].timestamp_us = sequence.events[k].timestamp_us;
    flow[k].value = embed_event(model.params.embedding, sequence.events[k].channel);
  }

  std::size_t flat = 0;
  for (const StageConfig& st : model.config.stages) {
    for (std::uint32_t b = 0; b < st.blocks; ++b, ++flat) {
      RunContext ctx;
      ctx.scan = opts;
      ctx.hw = hw;
      ctx.block_index = flat;
      flow = run_block(model.params.blocks[flat], flow, ctx, nullptr);
    }
    flow = io::pool_stride(flow, st.pool_stride);
  }

  const std::size_t h_out = model.config.stages.back().h_out;
  Vec pooled(h_out, 0.0);
  for (const io::TimedVec& tv : flow) axpy(1.0, tv.value, pooled);
  for (double& p : pooled) p /= static_cast<double>(flow.size());

  Vec logits(model.config.num_classes, 0.0);
  for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = model.params.head.b[c];
  for (std::size_t o = 0; o < h_out; ++o) {
    double zo = pooled[o];
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += model.params.head.w(o, c) * zo;
  }
  return logits;
}

}  // namespace evssm::model
