#ifndef EVSSM_TRAINER_HPP
#define EVSSM_TRAINER_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evssm/event_io.hpp"
#include "evssm/model.hpp"

namespace evssm::train {

enum class LambdaMode { free_mode, fixed, two_tier };

LambdaMode lambda_mode_from_string(const std::string& s);
std::string to_string(LambdaMode mode);

struct TrainConfig {
  double learning_rate = 5e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 40;     // cap per training stage
  std::size_t plateau_window = 5;  // epochs without sufficient eval-loss improvement
  double plateau_epsilon = 1e-3;   // relative improvement threshold
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  LambdaMode lambda_mode = LambdaMode::fixed;
  unsigned threads = 1;

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double eval_loss = 0.0;
  double eval_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  // Per recorded epoch, per block: mean decay rate (ms^-1).
  std::vector<Vec> lambda_mean_by_layer;
  // Epoch counts at which a stage ended (stage 1 -> fix, fix -> stage 3 start).
  std::vector<std::size_t> stage_transition_epochs;
  bool diverged = false;
  std::string divergence_note;
};

std::string report_to_json(const TrainReport& report);
// epoch,train_loss,eval_loss,eval_acc
std::string report_to_csv(const TrainReport& report);

// ---------------------------------------------------------------------------
// Loss and gradients

struct LossOptions {
  unsigned threads = 1;
  scan::ScanOptions scan;
  // QAT: per-block fake-quantization step for block outputs (empty = off).
  std::vector<double> block_output_quant_steps;
};

struct LossGrads {
  double loss = 0.0;
  model::ParamSet grads;  // decay-rate entries hold dLoss/dlog(lambda)
  bool finite = true;
};

// Mean softmax cross-entropy over the batch, with reverse-mode gradients for every
// parameter. Decay-rate gradients flow through both the transition factors and the
// input-projection discretization factor; they are zeroed when the model's rates
// are frozen.
LossGrads loss_and_gradients(const model::Model& model,
                             std::span<const io::EventSequence> batch,
                             const LossOptions& opts = {});

double evaluate_loss(const model::Model& model, std::span<const io::EventSequence> data,
                     unsigned threads = 1);

// Central-difference verification of loss_and_gradients on every parameter.
struct GradientCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
};
GradientCheckResult check_gradients(const model::Model& model,
                                    std::span<const io::EventSequence> batch,
                                    double step = 1e-6);

// ---------------------------------------------------------------------------
// Optimizer

class AdamOptimizer {
 public:
  explicit AdamOptimizer(const TrainConfig& config);

  // Skips frozen decay-rate tensors entirely; rate updates run in log coordinates.
  void step(model::Model& model, model::ParamSet& grads);

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<Vec> m_, v_;
};

// ---------------------------------------------------------------------------
// Training procedures

struct TrainResult {
  model::Model model;
  TrainReport report;
};

// Stage 1: everything trains, per-dimension rates included, until the eval loss
// plateaus. Stage 2: each layer's rates collapse to their arithmetic mean (two-tier:
// first layer keeps its own mean, the rest share one pooled mean). Stage 3: rates
// frozen, remaining parameters train to convergence. Divergence in stage 1 rolls
// back to the last finite iteration; divergence in stage 3 aborts with the report.
TrainResult three_stage_lambda_training(model::Model model, const io::EventDataset& train_set,
                                        const io::EventDataset& eval_set,
                                        const TrainConfig& config);

// Dispatches on config.lambda_mode (free-rate training is a single stage).
TrainResult fit(model::Model model, const io::EventDataset& train_set,
                  const io::EventDataset& eval_set, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double accuracy = 0.0;
  // confusion[true_label][predicted] counts
  std::vector<std::vector<std::uint64_t>> confusion;
};
EvalResult evaluate(const model::Model& model, const io::EventDataset& dataset,
                    unsigned threads = 1);

// Logistic regression on per-channel event counts; the order-blind reference point.
double count_baseline_accuracy(const io::EventDataset& train_set,
                               const io::EventDataset& test_set,
                               std::size_t iterations = 300, double learning_rate = 0.5);

}  // namespace evssm::train

#endif  // EVSSM_TRAINER_HPP
