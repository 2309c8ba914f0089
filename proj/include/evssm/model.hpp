#ifndef EVSSM_MODEL_HPP
#define EVSSM_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "evssm/common.hpp"
#include "evssm/event_io.hpp"
#include "evssm/scan.hpp"

namespace evssm::model {

// ---------------------------------------------------------------------------
// Configuration

struct StageConfig {
  std::uint32_t blocks = 1;
  std::uint32_t h_in = 1;
  std::uint32_t h_state = 1;
  std::uint32_t h_out = 1;
  std::uint32_t pool_stride = 1;  // applied to this stage's outputs
};

struct ModelConfig {
  std::uint32_t num_channels = 0;  // J
  std::uint32_t num_classes = 0;
  std::uint32_t embedding_dim = 0;  // D
  std::vector<StageConfig> stages;

  void validate() const;
  std::size_t total_blocks() const;
  // Stage owning flat block index `b`.
  const StageConfig& stage_of(std::size_t b) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------
// Parameters

struct EmbeddingParams {
  Mat w;  // J x D; row j is the embedding of channel j
};

struct BlockParams {
  Vec lambda;      // per-dimension decay rates, ms^-1, > 0; shared when all equal
  Mat input_proj;  // B, h_in x h_state
  Mat readout;     // C, h_state x h_out
  Mat gate_w;      // h_out x h_out
  Vec gate_b;      // h_out
  Vec norm_scale;  // h_in
  Vec norm_shift;  // h_in
};

struct HeadParams {
  Mat w;  // h_out x num_classes
  Vec b;  // num_classes
};

struct ParamSet {
  EmbeddingParams embedding;
  std::vector<BlockParams> blocks;
  HeadParams head;
};

struct Model {
  ModelConfig config;
  ParamSet params;
  // Set after the decay rates are fixed to their layer means; frozen rates
  // receive zero gradient and no optimizer update.
  bool lambda_frozen = false;
};

// Zero-initialized parameter tensors with the shapes `config` implies.
ParamSet make_params(const ModelConfig& config);

// Flat view over every parameter tensor, in a fixed order. `log_reparam` marks
// tensors whose trainable coordinate is the log of the stored value (the decay
// rates): their gradient entries are dLoss/dlog(value).
struct TensorRef {
  std::string name;
  double* data;
  std::size_t size;
  bool log_reparam;
};
std::vector<TensorRef> tensor_refs(ParamSet& params);

// ---------------------------------------------------------------------------
// Initialization

// Decay-rate range the memory-operator eigenvalues are mapped into (ms^-1).
inline constexpr double kLambdaInitMin = 0.05;
inline constexpr double kLambdaInitMax = 2.0;

// LeCun-normal projections, zero gate bias, unit norm scale; per-dimension decay
// rates from the memory-operator spectrum rescaled into [kLambdaInitMin, kLambdaInitMax].
BlockParams init_block(std::uint32_t h_in, std::uint32_t h_state, std::uint32_t h_out,
                       std::uint64_t seed);
Model init_model(const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Elementwise pieces

double sigmoid(double x);
double gelu(double x);             // exact erf form, x * Phi(x)
double gelu_derivative(double x);  // Phi(x) + x * phi(x)

// exp(-lambda * dt); equivalently exp(-dt/tau) with tau = 1/lambda.
double transition_factor(double lambda, double dt_ms);

// (1 - e^-lambda) / lambda, the scalar in B-bar = Lambda^-1 (exp(Lambda) - I) B.
// Series branch below 1e-6 avoids cancellation; limit at 0+ is 1.
double bbar_factor(double lambda);
double bbar_factor_derivative(double lambda);

// B-bar: columns of B scaled by the per-dimension factor (or one shared factor).
Mat input_projection_bar(double lambda, const Mat& input_proj);
Mat input_projection_bar(const Vec& lambda, const Mat& input_proj);

Vec embed_event(const EmbeddingParams& embedding, std::uint32_t channel);

struct StateVector {
  Vec h;
  std::uint64_t last_timestamp_us = 0;
};

// h <- exp(-lambda*dt) h + projected_input. Shared decay-update kernel with the
// scan path and the hardware state-node model.
StateVector step_state(const StateVector& state, double dt_ms, const Vec& projected_input,
                       double lambda);
StateVector step_state(const StateVector& state, double dt_ms, const Vec& projected_input,
                       const Vec& lambda);

// y + y * sigmoid(gate_w * GELU(y) + gate_b)
Vec gated_block_output(const Vec& y, const Mat& gate_w, const Vec& gate_b);

// ---------------------------------------------------------------------------
// Hardware hooks. The simulated CIM execution reuses the exact float forward
// path; these callbacks are the only places it differs.

class HwInterface {
 public:
  virtual ~HwInterface() = default;
  // Per-device decay rates for this block; nullptr means use the model's.
  virtual const Vec* realized_lambda(std::size_t) const { return nullptr; }
  // Called on the crossbar VMM output (projected input) before the state update.
  virtual void after_vmm(std::size_t, Vec&) {}
  // Called on the state-update contribution; additions here persist in the state.
  virtual void after_state_update(std::size_t, Vec&) {}
  // Observes each completed update for pulse/energy accounting.
  virtual void record_state_update(std::size_t, const Vec& /*vmm_out*/, const Vec& /*state*/) {}
  // Observes the gated block output (post residual).
  virtual void after_block_output(std::size_t, Vec&) {}
};

// ---------------------------------------------------------------------------
// Block and model evaluation

// Per-event intermediates captured for backpropagation.
struct BlockCache {
  std::vector<double> dt_ms;
  std::vector<Vec> x;        // block input
  std::vector<double> mean;  // layer-norm statistics
  std::vector<double> inv_std;
  std::vector<Vec> xn;   // normalized, pre scale/shift
  std::vector<Vec> xa;   // scale*xn + shift
  std::vector<Vec> v;    // B^T xa
  std::vector<Vec> u;    // per-dim bbar factor * v   (scan input b_k)
  std::vector<Vec> a;    // per-dim transition factors
  std::vector<Vec> h;    // states after each event
  std::vector<Vec> y;    // C^T h
  std::vector<Vec> gel;  // GELU(y)
  std::vector<Vec> sig;  // sigmoid(gate_w*gel + gate_b)
};

struct RunContext {
  scan::ScanOptions scan;
  HwInterface* hw = nullptr;
  std::size_t block_index = 0;
  // When > 0, block outputs are rounded to this step (QAT fake quantization;
  // straight-through in the backward pass).
  double output_quant_step = 0.0;
};

std::vector<io::TimedVec> run_block(const BlockParams& params,
                                    const std::vector<io::TimedVec>& inputs,
                                    const RunContext& ctx, BlockCache* cache);

// Normalize, project, scan, read out, gate. Output timestamps equal input timestamps.
std::vector<io::TimedVec> block_forward(const BlockParams& params,
                                        const std::vector<io::TimedVec>& inputs,
                                        const scan::ScanOptions& opts = {});

// Embedding, stages with pooling after each, mean over survivors, classifier head.
Vec model_forward(const Model& model, const io::EventSequence& sequence,
                  HwInterface* hw = nullptr, const scan::ScanOptions& opts = {});

}  // namespace evssm::model

#endif  // EVSSM_MODEL_HPP
