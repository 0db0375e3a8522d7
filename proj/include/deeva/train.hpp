#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deeva/data.hpp"
#include "deeva/model.hpp"
#include "deeva/targets.hpp"

namespace deeva {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int epochs = 10;
  int batch_size = 8;
  FocalLossParams focal;
  double pos_thr = 0.5, neg_thr = 0.4;
  uint64_t seed = 0;
  // validation protocol
  double eval_score_thr = 0.05;
  double eval_nms_thr = 0.5;
  int eval_max_dets = 100;
  double eval_iou_thr = 0.5;
  bool verbose = false;  // per-epoch line on stderr

  void validate() const;
};

// Predicate over parameter names selecting the trainable set.
struct FreezePlan {
  std::string name;
  std::function<bool(const std::string&)> trainable;

  static FreezePlan all();
  static FreezePlan head_only();   // final subnet layers + scene head
  static FreezePlan head_and_fpn();
  static FreezePlan by_name(const std::string& s);
};

struct SgdState {
  std::map<std::string, Tensor> velocity;
};

// v <- momentum*v - lr*g; p <- p + v, trainable parameters only.
void sgd_step(Model& m, const std::map<std::string, Tensor>& grads, const TrainConfig& cfg,
              SgdState& state);

// Marks the plan's parameters trainable and re-draws their initial values
// from seed; everything else is frozen at its current value.
void apply_freeze(Model& m, const FreezePlan& plan, uint64_t seed);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_map = 0.0;
  double val_scene_acc = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double final_train_loss = 0.0;
};

// Deterministic for a fixed (seed, data, config). Aborts with a diagnostic
// naming the batch when the loss goes non-finite.
TrainResult train_detector(Model& m, const std::vector<Sample>& train,
                           const std::vector<Sample>& val, const TrainConfig& cfg);

// Validation pass: detection mAP and scene accuracy under cfg's protocol.
struct ValMetrics {
  double map = 0.0;
  double scene_acc = 0.0;
};
ValMetrics validate(const Model& m, const std::vector<Sample>& val, const TrainConfig& cfg);

std::string train_log_json(const EpochLog& e, bool with_scene);

// --- random hyper-parameter search ---------------------------------------

struct HpoSpace {
  double lr_lo = 1e-3, lr_hi = 3e-2;            // log-uniform
  std::vector<double> gammas{0.0, 1.0, 2.0, 5.0};
  double alpha_lo = 0.1, alpha_hi = 0.9;
  double pos_lo = 0.45, pos_hi = 0.60;
  double neg_lo = 0.30, neg_hi = 0.45;
};

struct HpoTrial {
  int trial = 0;
  double lr = 0.0, gamma = 0.0, alpha = 0.0, pos_thr = 0.0, neg_thr = 0.0;
  double val_map = 0.0;
};

// Trains `trials` sampled configs for budget_epochs each and returns them
// ranked best-first (ties by trial index). A trial whose loss went non-finite
// is kept with val_map = 0.
std::vector<HpoTrial> random_hpo(const ModelConfig& model_cfg, const TrainConfig& base,
                                 const std::vector<Sample>& train, const std::vector<Sample>& val,
                                 const HpoSpace& space, int trials, int budget_epochs,
                                 uint64_t seed);

std::string hpo_trial_json(const HpoTrial& t);

}  // namespace deeva
