#include "evssm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <sstream>

#include "evssm/rng.hpp"

namespace evssm::train {

using io::EventDataset;
using io::EventSequence;
using io::TimedVec;
using model::BlockCache;
using model::BlockParams;
using model::Model;
using model::ModelConfig;
using model::ParamSet;
using model::TensorRef;

LambdaMode lambda_mode_from_string(const std::string& s) {
  if (s == "free") return LambdaMode::free_mode;
  if (s == "fixed") return LambdaMode::fixed;
  if (s == "two-tier") return LambdaMode::two_tier;
  fail(Errc::bad_argument, "unknown lambda mode: " + s);
}

std::string to_string(LambdaMode mode) {
  switch (mode) {
    case LambdaMode::free_mode: return "free";
    case LambdaMode::fixed: return "fixed";
    case LambdaMode::two_tier: return "two-tier";
  }
  return "?";
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0, Errc::bad_config, "learning_rate must be > 0");
  require(plateau_window >= 1, Errc::bad_config, "plateau_window must be >= 1");
  require(plateau_epsilon >= 0.0, Errc::bad_config, "plateau_epsilon must be >= 0");
  require(batch_size >= 1, Errc::bad_config, "batch_size must be >= 1");
}

// ---------------------------------------------------------------------------
// Parameter-set arithmetic

namespace {

ParamSet zero_like(const ModelConfig& config) {
  ParamSet p = model::make_params(config);
  for (TensorRef& r : model::tensor_refs(p)) std::fill(r.data, r.data + r.size, 0.0);
  return p;
}

void accumulate(ParamSet& into, ParamSet& from) {
  auto dst = model::tensor_refs(into);
  auto src = model::tensor_refs(from);
  for (std::size_t t = 0; t < dst.size(); ++t)
    for (std::size_t i = 0; i < dst[t].size; ++i) dst[t].data[i] += src[t].data[i];
}

void scale(ParamSet& p, double s) {
  for (TensorRef& r : model::tensor_refs(p))
    for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= s;
}

bool params_finite(ParamSet& p) {
  for (TensorRef& r : model::tensor_refs(p))
    if (!all_finite(std::span<const double>(r.data, r.size))) return false;
  return true;
}

struct SoftmaxCE {
  double loss;
  Vec dlogits;  // softmax - onehot
};

SoftmaxCE softmax_ce(const Vec& logits, std::uint32_t label) {
  double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  SoftmaxCE out;
  out.loss = std::log(z) - (logits[label] - mx);
  out.dlogits.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) out.dlogits[c] = std::exp(logits[c] - mx) / z;
  out.dlogits[label] -= 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Cached forward / backward for one sequence

struct StageTape {
  std::vector<std::vector<TimedVec>> flow;  // flow[0] = stage input, flow[b+1] = block b output
  std::vector<BlockCache> caches;
};

struct SeqTape {
  std::vector<std::uint32_t> channels;
  std::vector<StageTape> stages;
  std::vector<TimedVec> final_flow;  // after the last pooling
  Vec pooled;
  Vec logits;
};

void forward_sequence(const Model& m, const EventSequence& seq, const LossOptions& opts,
                      SeqTape& tape) {
  require(!seq.events.empty(), Errc::bad_argument, "cannot train on an empty sequence");
  const ModelConfig& cfg = m.config;

  std::vector<TimedVec> flow(seq.events.size());
  tape.channels.resize(seq.events.size());
  for (std::size_t k = 0; k < seq.events.size(); ++k) {
    tape.channels[k] = seq.events[k].channel;
    flow[k].timestamp_us = seq.events[k].timestamp_us;
    flow[k].value = model::embed_event(m.params.embedding, seq.events[k].channel);
  }

  tape.stages.resize(cfg.stages.size());
  std::size_t flat = 0;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    StageTape& st = tape.stages[s];
    st.flow.clear();
    st.caches.resize(cfg.stages[s].blocks);
    st.flow.push_back(std::move(flow));
    for (std::uint32_t b = 0; b < cfg.stages[s].blocks; ++b, ++flat) {
      model::RunContext ctx;
      ctx.scan = opts.scan;
      ctx.block_index = flat;
      if (!opts.block_output_quant_steps.empty())
        ctx.output_quant_step = opts.block_output_quant_steps[flat];
      st.flow.push_back(
          model::run_block(m.params.blocks[flat], st.flow.back(), ctx, &st.caches[b]));
    }
    flow = io::pool_stride(st.flow.back(), cfg.stages[s].pool_stride);
  }
  tape.final_flow = std::move(flow);

  const std::size_t h_out = cfg.stages.back().h_out;
  tape.pooled.assign(h_out, 0.0);
  for (const TimedVec& tv : tape.final_flow) axpy(1.0, tv.value, tape.pooled);
  for (double& p : tape.pooled) p /= static_cast<double>(tape.final_flow.size());

  tape.logits.assign(cfg.num_classes, 0.0);
  for (std::size_t c = 0; c < tape.logits.size(); ++c) tape.logits[c] = m.params.head.b[c];
  for (std::size_t o = 0; o < h_out; ++o)
    for (std::size_t c = 0; c < tape.logits.size(); ++c)
      tape.logits[c] += m.params.head.w(o, c) * tape.pooled[o];
}

// Gradients of one block; returns the gradient with respect to the block inputs.
std::vector<Vec> block_backward(const BlockParams& p, const BlockCache& cache,
                                const std::vector<Vec>& dout, bool lambda_frozen,
                                const scan::ScanOptions& scan_opts, BlockParams& g) {
  const std::size_t n = dout.size();
  const std::size_t h_in = p.input_proj.rows;
  const std::size_t h_state = p.input_proj.cols;
  const std::size_t h_out = p.readout.cols;

  std::vector<Vec> dh(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec& y = cache.y[k];
    const Vec& s = cache.sig[k];
    const Vec& gel = cache.gel[k];
    Vec dy(h_out), dz(h_out);
    for (std::size_t o = 0; o < h_out; ++o) {
      dy[o] = dout[k][o] * (1.0 + s[o]);
      dz[o] = dout[k][o] * y[o] * s[o] * (1.0 - s[o]);
    }
    for (std::size_t o = 0; o < h_out; ++o) {
      g.gate_b[o] += dz[o];
      for (std::size_t i = 0; i < h_out; ++i) g.gate_w(o, i) += dz[o] * gel[i];
    }
    for (std::size_t i = 0; i < h_out; ++i) {
      double dg = 0.0;
      for (std::size_t o = 0; o < h_out; ++o) dg += p.gate_w(o, i) * dz[o];
      dy[i] += dg * model::gelu_derivative(y[i]);
    }

    dh[k].assign(h_state, 0.0);
    const Vec& h = cache.h[k];
    for (std::size_t i = 0; i < h_state; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < h_out; ++o) {
        acc += p.readout(i, o) * dy[o];
        g.readout(i, o) += h[i] * dy[o];
      }
      dh[k][i] = acc;
    }
  }

  // Adjoint of the linear recurrence.
  std::vector<scan::DiagElement> elements(n);
  for (std::size_t k = 0; k < n; ++k) {
    elements[k].a = cache.a[k];
    elements[k].b = cache.u[k];
  }
  scan::AdjointResult<Vec> adj = scan::scan_adjoint(elements, cache.h, dh, scan_opts);

  Vec dlam(h_state, 0.0);
  Vec bbar(h_state), dfac(h_state, 0.0);
  for (std::size_t i = 0; i < h_state; ++i) bbar[i] = model::bbar_factor(p.lambda[i]);

  std::vector<Vec> dx(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < h_state; ++i) {
      dlam[i] += adj.d_a[k][i] * (-cache.dt_ms[k]) * cache.a[k][i];
      dfac[i] += adj.d_b[k][i] * cache.v[k][i];
    }
    Vec dv(h_state);
    for (std::size_t i = 0; i < h_state; ++i) dv[i] = adj.d_b[k][i] * bbar[i];

    Vec dxa(h_in, 0.0);
    for (std::size_t j = 0; j < h_in; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < h_state; ++i) {
        acc += p.input_proj(j, i) * dv[i];
        g.input_proj(j, i) += cache.xa[k][j] * dv[i];
      }
      dxa[j] = acc;
    }

    // Affine part of the pre-norm, then the normalization itself.
    Vec dxn(h_in);
    for (std::size_t j = 0; j < h_in; ++j) {
      g.norm_scale[j] += dxa[j] * cache.xn[k][j];
      g.norm_shift[j] += dxa[j];
      dxn[j] = dxa[j] * p.norm_scale[j];
    }
    double mean_dxn = 0.0, mean_dxn_xn = 0.0;
    for (std::size_t j = 0; j < h_in; ++j) {
      mean_dxn += dxn[j];
      mean_dxn_xn += dxn[j] * cache.xn[k][j];
    }
    mean_dxn /= static_cast<double>(h_in);
    mean_dxn_xn /= static_cast<double>(h_in);
    dx[k].resize(h_in);
    for (std::size_t j = 0; j < h_in; ++j)
      dx[k][j] = cache.inv_std[k] * (dxn[j] - mean_dxn - cache.xn[k][j] * mean_dxn_xn);
  }

  if (!lambda_frozen) {
    for (std::size_t i = 0; i < h_state; ++i) {
      dlam[i] += dfac[i] * model::bbar_factor_derivative(p.lambda[i]);
      g.lambda[i] += dlam[i] * p.lambda[i];  // chain into log space
    }
  }
  return dx;
}

void backward_sequence(const Model& m, const SeqTape& tape, const Vec& dlogits,
                       const scan::ScanOptions& scan_opts, ParamSet& g) {
  const ModelConfig& cfg = m.config;
  const std::size_t h_out = cfg.stages.back().h_out;

  Vec dpooled(h_out, 0.0);
  for (std::size_t c = 0; c < dlogits.size(); ++c) {
    g.head.b[c] += dlogits[c];
    for (std::size_t o = 0; o < h_out; ++o) {
      g.head.w(o, c) += tape.pooled[o] * dlogits[c];
      dpooled[o] += m.params.head.w(o, c) * dlogits[c];
    }
  }

  const std::size_t final_len = tape.final_flow.size();
  std::vector<Vec> dflow(final_len, Vec(h_out, 0.0));
  for (std::size_t k = 0; k < final_len; ++k)
    for (std::size_t o = 0; o < h_out; ++o)
      dflow[k][o] = dpooled[o] / static_cast<double>(final_len);

  std::size_t flat_end = cfg.total_blocks();
  for (std::size_t s = cfg.stages.size(); s-- > 0;) {
    const model::StageConfig& sc = cfg.stages[s];
    const StageTape& st = tape.stages[s];
    // Undo pooling: each window member receives dout/width.
    const std::size_t pre_len = st.flow.back().size();
    const std::size_t stride = sc.pool_stride;
    std::vector<Vec> dpre(pre_len);
    for (std::size_t base = 0, w = 0; base < pre_len; base += stride, ++w) {
      const std::size_t end = std::min(pre_len, base + stride);
      const double width = static_cast<double>(end - base);
      for (std::size_t k = base; k < end; ++k) {
        dpre[k].resize(dflow[w].size());
        for (std::size_t j = 0; j < dflow[w].size(); ++j) dpre[k][j] = dflow[w][j] / width;
      }
    }
    for (std::uint32_t b = sc.blocks; b-- > 0;) {
      const std::size_t flat = flat_end - sc.blocks + b;
      dpre = block_backward(m.params.blocks[flat], st.caches[b], dpre, m.lambda_frozen,
                            scan_opts, g.blocks[flat]);
    }
    flat_end -= sc.blocks;
    dflow = std::move(dpre);
  }

  for (std::size_t k = 0; k < tape.channels.size(); ++k)
    for (std::size_t j = 0; j < cfg.embedding_dim; ++j)
      g.embedding.w(tape.channels[k], j) += dflow[k][j];
}

double sequence_loss(const Model& m, const EventSequence& seq) {
  Vec logits = model::model_forward(m, seq);
  return softmax_ce(logits, seq.label).loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss and gradients

LossGrads loss_and_gradients(const Model& m, std::span<const EventSequence> batch,
                             const LossOptions& opts) {
  require(!batch.empty(), Errc::bad_argument, "batch must be non-empty");
  m.config.validate();
  if (!opts.block_output_quant_steps.empty())
    require(opts.block_output_quant_steps.size() == m.config.total_blocks(),
            Errc::dimension_mismatch, "one output quant step per block required");

  const std::size_t n = batch.size();
  std::vector<double> losses(n, 0.0);
  std::vector<ParamSet> grads(n);
  std::vector<char> ok(n, 1);

  parallel_for(n, opts.threads, [&](std::size_t i) {
    try {
      SeqTape tape;
      forward_sequence(m, batch[i], opts, tape);
      SoftmaxCE ce = softmax_ce(tape.logits, batch[i].label);
      losses[i] = ce.loss;
      grads[i] = zero_like(m.config);
      backward_sequence(m, tape, ce.dlogits, opts.scan, grads[i]);
    } catch (const Error&) {
      ok[i] = 0;
    }
  });

  LossGrads out;
  out.grads = zero_like(m.config);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!ok[i]) {
      out.finite = false;
      out.loss = std::numeric_limits<double>::quiet_NaN();
      return out;
    }
    total += losses[i];
    accumulate(out.grads, grads[i]);  // fixed sequence order keeps this deterministic
  }
  out.loss = total / static_cast<double>(n);
  scale(out.grads, 1.0 / static_cast<double>(n));
  out.finite = std::isfinite(out.loss) && params_finite(out.grads);
  return out;
}

double evaluate_loss(const Model& m, std::span<const EventSequence> data, unsigned threads) {
  require(!data.empty(), Errc::bad_argument, "empty evaluation set");
  std::vector<double> losses(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { losses[i] = sequence_loss(m, data[i]); });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(data.size());
}

GradientCheckResult check_gradients(const Model& m, std::span<const EventSequence> batch,
                                    double step) {
  LossGrads base = loss_and_gradients(m, batch);
  require(base.finite, Errc::divergence, "cannot check gradients of a non-finite loss");

  Model probe = m;
  auto prefs = model::tensor_refs(probe.params);
  auto grefs = model::tensor_refs(base.grads);

  auto batch_loss = [&](const Model& mm) {
    double total = 0.0;
    for (const EventSequence& s : batch) total += sequence_loss(mm, s);
    return total / static_cast<double>(batch.size());
  };

  GradientCheckResult res;
  for (std::size_t t = 0; t < prefs.size(); ++t) {
    if (m.lambda_frozen && prefs[t].log_reparam) continue;  // frozen rates carry no gradient
    for (std::size_t i = 0; i < prefs[t].size; ++i) {
      const double saved = prefs[t].data[i];
      double lp, lm;
      if (prefs[t].log_reparam) {
        prefs[t].data[i] = saved * std::exp(step);
        lp = batch_loss(probe);
        prefs[t].data[i] = saved * std::exp(-step);
        lm = batch_loss(probe);
      } else {
        prefs[t].data[i] = saved + step;
        lp = batch_loss(probe);
        prefs[t].data[i] = saved - step;
        lm = batch_loss(probe);
      }
      prefs[t].data[i] = saved;
      const double fd = (lp - lm) / (2.0 * step);
      const double an = grefs[t].data[i];
      const double rel = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst_tensor = prefs[t].name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamOptimizer::AdamOptimizer(const TrainConfig& config)
    : lr_(config.learning_rate),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      epsilon_(config.adam_epsilon) {}

void AdamOptimizer::step(Model& m, ParamSet& grads) {
  auto prefs = model::tensor_refs(m.params);
  auto grefs = model::tensor_refs(grads);
  require(prefs.size() == grefs.size(), Errc::dimension_mismatch, "optimizer: shape mismatch");

  if (m_.empty()) {
    m_.resize(prefs.size());
    v_.resize(prefs.size());
    for (std::size_t t = 0; t < prefs.size(); ++t) {
      m_[t].assign(prefs[t].size, 0.0);
      v_[t].assign(prefs[t].size, 0.0);
    }
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

  for (std::size_t t = 0; t < prefs.size(); ++t) {
    require(prefs[t].size == grefs[t].size, Errc::dimension_mismatch,
            "optimizer: tensor " + prefs[t].name + " shape mismatch");
    if (m.lambda_frozen && prefs[t].log_reparam) continue;
    for (std::size_t i = 0; i < prefs[t].size; ++i) {
      const double g = grefs[t].data[i];
      m_[t][i] = beta1_ * m_[t][i] + (1.0 - beta1_) * g;
      v_[t][i] = beta2_ * v_[t][i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[t][i] / bc1;
      const double vhat = v_[t][i] / bc2;
      const double delta = lr_ * mhat / (std::sqrt(vhat) + epsilon_);
      if (prefs[t].log_reparam) {
        // Multiplicative form of the log-space step; exp(0) leaves the value bit-exact.
        prefs[t].data[i] *= std::exp(-delta);
      } else {
        prefs[t].data[i] -= delta;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

Vec lambda_means(const Model& m) {
  Vec means(m.params.blocks.size(), 0.0);
  for (std::size_t b = 0; b < m.params.blocks.size(); ++b) {
    const Vec& lam = m.params.blocks[b].lambda;
    double s = 0.0;
    for (double l : lam) s += l;
    means[b] = s / static_cast<double>(lam.size());
  }
  return means;
}

// Runs one optimization stage. Returns true if training diverged; the model is
// left at the last finite iteration in that case.
bool run_stage(Model& m, const EventDataset& train_set, const EventDataset& eval_set,
               const TrainConfig& cfg, std::uint64_t epoch_salt, TrainReport& report,
               const char* stage_name) {
  AdamOptimizer adam(cfg);
  LossOptions lopts;
  lopts.threads = cfg.threads;

  double best = std::numeric_limits<double>::infinity();
  std::size_t stall = 0;

  std::vector<std::size_t> order(train_set.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(cfg.seed, epoch_salt + epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_u64(i)]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t base = 0; base < order.size(); base += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), base + cfg.batch_size);
      std::vector<EventSequence> batch;
      batch.reserve(end - base);
      for (std::size_t i = base; i < end; ++i) batch.push_back(train_set.sequences[order[i]]);

      ParamSet snapshot = m.params;
      LossGrads lg = loss_and_gradients(m, batch, lopts);
      bool ok = lg.finite;
      if (ok) {
        adam.step(m, lg.grads);
        // A finite gradient can still push a rate to 0 or a weight to inf.
        ok = params_finite(m.params);
        if (ok)
          for (const BlockParams& blk : m.params.blocks)
            for (double l : blk.lambda) ok = ok && l > 0.0;
      }
      if (!ok) {
        m.params = std::move(snapshot);  // last finite iteration
        report.diverged = true;
        report.divergence_note = std::string(stage_name) + ": non-finite loss at epoch " +
                                 std::to_string(epoch) + ", rolled back to last finite step";
        return true;
      }
      loss_sum += lg.loss * static_cast<double>(end - base);
      seen += end - base;
    }

    EpochStats st;
    st.train_loss = loss_sum / static_cast<double>(seen);
    st.eval_loss = evaluate_loss(m, eval_set.sequences, cfg.threads);
    st.eval_accuracy = evaluate(m, eval_set, cfg.threads).accuracy;
    report.epochs.push_back(st);
    report.lambda_mean_by_layer.push_back(lambda_means(m));

    if (!std::isfinite(st.eval_loss)) {
      report.diverged = true;
      report.divergence_note = std::string(stage_name) + ": non-finite eval loss";
      return true;
    }

    if (!std::isfinite(best)) {
      best = st.eval_loss;
      stall = 0;
    } else {
      const double improvement = (best - st.eval_loss) / std::max(std::abs(best), 1e-12);
      if (st.eval_loss < best && improvement > cfg.plateau_epsilon) {
        best = st.eval_loss;
        stall = 0;
      } else {
        ++stall;
      }
    }
    if (stall >= cfg.plateau_window) break;
  }
  return false;
}

void fix_lambda(Model& m, LambdaMode mode) {
  auto layer_mean = [](const Vec& lam) {
    double s = 0.0;
    for (double l : lam) s += l;
    return s / static_cast<double>(lam.size());
  };

  if (mode == LambdaMode::fixed) {
    for (BlockParams& blk : m.params.blocks) {
      const double mean = layer_mean(blk.lambda);
      std::fill(blk.lambda.begin(), blk.lambda.end(), mean);
    }
  } else {  // two-tier: first layer keeps its own mean, the rest pool theirs
    require(!m.params.blocks.empty(), Errc::bad_config, "no blocks");
    const double first = layer_mean(m.params.blocks[0].lambda);
    std::fill(m.params.blocks[0].lambda.begin(), m.params.blocks[0].lambda.end(), first);
    double pooled = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 1; b < m.params.blocks.size(); ++b) {
      for (double l : m.params.blocks[b].lambda) pooled += l;
      count += m.params.blocks[b].lambda.size();
    }
    if (count > 0) {
      pooled /= static_cast<double>(count);
      for (std::size_t b = 1; b < m.params.blocks.size(); ++b)
        std::fill(m.params.blocks[b].lambda.begin(), m.params.blocks[b].lambda.end(), pooled);
    }
  }
  m.lambda_frozen = true;
}

void check_dataset_compat(const Model& m, const EventDataset& ds) {
  require(ds.num_channels == m.config.num_channels, Errc::dimension_mismatch,
          "dataset channel count does not match the model");
  require(ds.num_classes == m.config.num_classes, Errc::dimension_mismatch,
          "dataset class count does not match the model");
}

}  // namespace

TrainResult three_stage_lambda_training(Model model, const EventDataset& train_set,
                                        const EventDataset& eval_set, const TrainConfig& config) {
  config.validate();
  require(config.lambda_mode != LambdaMode::free_mode, Errc::bad_config,
          "three-stage training requires fixed or two-tier mode");
  check_dataset_compat(model, train_set);
  check_dataset_compat(model, eval_set);

  TrainResult out;
  model.lambda_frozen = false;
  const bool stage1_diverged =
      run_stage(model, train_set, eval_set, config, 0x51ULL << 32, out.report, "stage1");
  // Divergence in stage 1 is recoverable: rates come from the last finite iteration.

  out.report.stage_transition_epochs.push_back(out.report.epochs.size());
  fix_lambda(model, config.lambda_mode);

  run_stage(model, train_set, eval_set, config, 0x53ULL << 32, out.report, "stage3");
  (void)stage1_diverged;  // already recorded in the report by run_stage
  out.model = std::move(model);
  return out;
}

TrainResult fit(Model model, const EventDataset& train_set, const EventDataset& eval_set,
                  const TrainConfig& config) {
  config.validate();
  if (config.lambda_mode != LambdaMode::free_mode)
    return three_stage_lambda_training(std::move(model), train_set, eval_set, config);

  check_dataset_compat(model, train_set);
  check_dataset_compat(model, eval_set);
  TrainResult out;
  model.lambda_frozen = false;
  run_stage(model, train_set, eval_set, config, 0x46ULL << 32, out.report, "free");
  out.model = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(const Model& m, const EventDataset& dataset, unsigned threads) {
  require(!dataset.sequences.empty(), Errc::bad_argument, "empty dataset");
  check_dataset_compat(m, dataset);

  std::vector<std::uint32_t> predicted(dataset.sequences.size());
  parallel_for(dataset.sequences.size(), threads, [&](std::size_t i) {
    Vec logits = model::model_forward(m, dataset.sequences[i]);
    predicted[i] = static_cast<std::uint32_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
  });

  EvalResult res;
  res.confusion.assign(dataset.num_classes, std::vector<std::uint64_t>(dataset.num_classes, 0));
  std::uint64_t correct = 0;
  for (std::size_t i = 0; i < dataset.sequences.size(); ++i) {
    const std::uint32_t truth = dataset.sequences[i].label;
    res.confusion[truth][predicted[i]] += 1;
    if (predicted[i] == truth) ++correct;
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.sequences.size());
  return res;
}

double count_baseline_accuracy(const EventDataset& train_set, const EventDataset& test_set,
                               std::size_t iterations, double learning_rate) {
  require(!train_set.sequences.empty() && !test_set.sequences.empty(), Errc::bad_argument,
          "baseline needs non-empty datasets");
  const std::size_t j = train_set.num_channels;
  const std::size_t c = train_set.num_classes;

  auto features = [&](const EventSequence& s) {
    Vec f(j, 0.0);
    for (const io::Event& e : s.events) f[e.channel] += 1.0;
    const double total = std::max<double>(1.0, static_cast<double>(s.events.size()));
    for (double& x : f) x /= total;
    return f;
  };

  std::vector<Vec> x_train;
  for (const EventSequence& s : train_set.sequences) x_train.push_back(features(s));

  // Standardize on training statistics.
  Vec mu(j, 0.0), sd(j, 0.0);
  for (const Vec& f : x_train) axpy(1.0, f, mu);
  for (double& v : mu) v /= static_cast<double>(x_train.size());
  for (const Vec& f : x_train)
    for (std::size_t d = 0; d < j; ++d) sd[d] += (f[d] - mu[d]) * (f[d] - mu[d]);
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(x_train.size())) + 1e-9;
  auto standardize = [&](Vec f) {
    for (std::size_t d = 0; d < j; ++d) f[d] = (f[d] - mu[d]) / sd[d];
    return f;
  };
  for (Vec& f : x_train) f = standardize(f);

  Mat w(j, c);
  Vec b(c, 0.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    Mat gw(j, c);
    Vec gb(c, 0.0);
    for (std::size_t i = 0; i < x_train.size(); ++i) {
      Vec logits = b;
      for (std::size_t d = 0; d < j; ++d)
        for (std::size_t k = 0; k < c; ++k) logits[k] += w(d, k) * x_train[i][d];
      SoftmaxCE ce = softmax_ce(logits, train_set.sequences[i].label);
      for (std::size_t k = 0; k < c; ++k) {
        gb[k] += ce.dlogits[k];
        for (std::size_t d = 0; d < j; ++d) gw(d, k) += ce.dlogits[k] * x_train[i][d];
      }
    }
    const double inv = 1.0 / static_cast<double>(x_train.size());
    for (std::size_t d = 0; d < j; ++d)
      for (std::size_t k = 0; k < c; ++k) w(d, k) -= learning_rate * gw(d, k) * inv;
    for (std::size_t k = 0; k < c; ++k) b[k] -= learning_rate * gb[k] * inv;
  }

  std::uint64_t correct = 0;
  for (const EventSequence& s : test_set.sequences) {
    Vec f = standardize(features(s));
    Vec logits = b;
    for (std::size_t d = 0; d < j; ++d)
      for (std::size_t k = 0; k < c; ++k) logits[k] += w(d, k) * f[d];
    const std::size_t pred = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (pred == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_set.sequences.size());
}

// ---------------------------------------------------------------------------
// Reports

std::string report_to_json(const TrainReport& report) {
  nlohmann::json doc;
  doc["epochs"] = nlohmann::json::array();
  for (std::size_t e = 0; e < report.epochs.size(); ++e)
    doc["epochs"].push_back({{"epoch", e},
                             {"train_loss", report.epochs[e].train_loss},
                             {"eval_loss", report.epochs[e].eval_loss},
                             {"eval_accuracy", report.epochs[e].eval_accuracy}});
  doc["lambda_mean_by_layer"] = report.lambda_mean_by_layer;
  doc["stage_transition_epochs"] = report.stage_transition_epochs;
  doc["diverged"] = report.diverged;
  doc["divergence_note"] = report.divergence_note;
  return doc.dump(2);
}

std::string report_to_csv(const TrainReport& report) {
  std::string out = "epoch,train_loss,eval_loss,eval_acc\n";
  char buf[160];
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e, report.epochs[e].train_loss,
                  report.epochs[e].eval_loss, report.epochs[e].eval_accuracy);
    out += buf;
  }
  return out;
}

}  // namespace evssm::train
