#include "deeva/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "deeva/eval.hpp"
#include "deeva/rng.hpp"
#include "json.hpp"

namespace deeva {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("epochs and batch_size must be >= 1");
  if (pos_thr < neg_thr) throw std::invalid_argument("pos_thr must be >= neg_thr");
  if (focal.alpha <= 0.0 || focal.alpha >= 1.0) throw std::invalid_argument("alpha must be in (0,1)");
  if (focal.gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
}

FreezePlan FreezePlan::all() {
  return {"all", [](const std::string&) { return true; }};
}

FreezePlan FreezePlan::head_only() {
  return {"head-only", [](const std::string& n) {
            return n.starts_with("cls_subnet.final") || n.starts_with("reg_subnet.final") ||
                   n.starts_with("scene_head.");
          }};
}

FreezePlan FreezePlan::head_and_fpn() {
  return {"head-fpn", [](const std::string& n) {
            return n.starts_with("cls_subnet.") || n.starts_with("reg_subnet.") ||
                   n.starts_with("fpn.") || n.starts_with("scene_head.");
          }};
}

FreezePlan FreezePlan::by_name(const std::string& s) {
  if (s == "all" || s == "none") return all();
  if (s == "head-only" || s == "head") return head_only();
  if (s == "head-fpn" || s == "head+fpn") return head_and_fpn();
  throw std::invalid_argument("unknown freeze plan: " + s);
}

void sgd_step(Model& m, const std::map<std::string, Tensor>& grads, const TrainConfig& cfg,
              SgdState& state) {
  for (auto& p : m.params()) {
    if (!p.trainable) continue;
    auto git = grads.find(p.name);
    if (git == grads.end()) {
      throw std::invalid_argument("missing gradient for trainable parameter " + p.name);
    }
    const Tensor& g = git->second;
    if (g.shape != p.value.shape) {
      throw std::invalid_argument("gradient shape mismatch for " + p.name + ": " +
                                  shape_str(g.shape) + " vs " + shape_str(p.value.shape));
    }
    auto vit = state.velocity.find(p.name);
    if (vit == state.velocity.end()) {
      vit = state.velocity.emplace(p.name, Tensor(p.value.shape, 0.0)).first;
    }
    Tensor nv(p.value.shape);
    Tensor np(p.value.shape);
    const double* vv = vit->second.ptr();
    const double* gv = g.ptr();
    const double* pv = p.value.ptr();
    for (int64_t i = 0; i < p.value.size(); ++i) {
      nv.ptr()[i] = cfg.momentum * vv[i] - cfg.learning_rate * gv[i];
      np.ptr()[i] = pv[i] + nv.ptr()[i];
    }
    vit->second = std::move(nv);
    p.value = std::move(np);
  }
}

void apply_freeze(Model& m, const FreezePlan& plan, uint64_t seed) {
  int trainable = 0;
  for (auto& p : m.params()) {
    p.trainable = plan.trainable(p.name);
    if (p.trainable) ++trainable;
  }
  if (trainable == 0) throw std::invalid_argument("freeze plan selects no parameters");
  for (auto& p : m.params()) {
    if (p.trainable) m.reinit_param(p.name, seed);
  }
}

// ---------------------------------------------------------------------------

namespace {

// dataset class ids resolved against the model's class vocabulary
std::vector<GroundTruth> to_ground_truths(const Annotation& ann,
                                          const std::vector<std::string>& class_names) {
  std::vector<GroundTruth> out;
  for (const auto& o : ann.objects) {
    for (size_t k = 0; k < class_names.size(); ++k) {
      if (class_names[k] == o.cls) {
        out.push_back({o.box, static_cast<int>(k)});
        break;
      }
    }
  }
  return out;
}

Tensor as_batch(const Tensor& chw) {
  std::vector<int> s = {1};
  s.insert(s.end(), chw.shape.begin(), chw.shape.end());
  Tensor out;
  out.shape = std::move(s);
  out.data = chw.data;
  return out;
}

int scene_truth_id(const Model& m, const Annotation& ann) {
  const auto& names = m.config().scene_class_names;
  for (size_t k = 0; k < names.size(); ++k)
    if (names[k] == ann.scene_label) return static_cast<int>(k);
  throw std::invalid_argument("scene label '" + ann.scene_label + "' not in model vocabulary");
}

int argmax_index(const Tensor& t) {
  const double* p = t.ptr();
  int best = 0;
  for (int64_t i = 1; i < t.size(); ++i)
    if (p[i] > p[best]) best = static_cast<int>(i);
  return best;
}

}  // namespace

ValMetrics validate(const Model& m, const std::vector<Sample>& val, const TrainConfig& cfg) {
  ValMetrics vm;
  const bool detect = m.config().head != HeadMode::kSceneClassification;
  const bool scene = m.config().head != HeadMode::kDetection;
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  std::vector<int> scene_pred, scene_true;
  for (const auto& s : val) {
    const Tensor img = as_batch(s.image);
    if (detect) {
      dets.push_back(m.predict(img, cfg.eval_score_thr, cfg.eval_nms_thr, cfg.eval_max_dets));
      gts.push_back(to_ground_truths(s.ann, m.config().class_names));
    }
    if (scene) {
      scene_pred.push_back(argmax_index(m.forward_scene(img)));
      scene_true.push_back(scene_truth_id(m, s.ann));
    }
  }
  if (detect) vm.map = mean_ap(dets, gts, cfg.eval_iou_thr, m.config().class_names).map;
  if (scene) {
    vm.scene_acc = scene_confusion(scene_pred, scene_true,
                                   m.config().num_scene_classes()).accuracy;
  }
  return vm;
}

TrainResult train_detector(Model& m, const std::vector<Sample>& train,
                           const std::vector<Sample>& val, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("training set is empty");
  const bool detect = m.config().head != HeadMode::kSceneClassification;
  const bool scene = m.config().head != HeadMode::kDetection;

  // anchor targets are a pure function of the config; build them once
  std::vector<AnchorTargets> targets;
  std::vector<int> scene_ids;
  for (const auto& s : train) {
    if (s.image.dim(1) != m.config().input_size || s.image.dim(2) != m.config().input_size) {
      throw std::invalid_argument("training image extents do not match model input size");
    }
    if (detect) {
      targets.push_back(match_anchors(m.anchors(), to_ground_truths(s.ann, m.config().class_names),
                                      cfg.pos_thr, cfg.neg_thr));
    }
    if (scene) scene_ids.push_back(scene_truth_id(m, s.ann));
  }

  TrainResult result;
  SgdState sgd;
  Rng shuffler(Rng::mix(cfg.seed, 0x5e55));
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffler.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::map<std::string, Tensor> acc;
      double batch_loss = 0.0;
      for (size_t bi = start; bi < stop; ++bi) {
        const size_t idx = order[bi];
        GradientTape tape;
        auto fw = m.forward(as_batch(train[idx].image), &tape);
        Tensor loss;
        if (detect) {
          loss = detection_loss(fw.cls_flat, fw.reg_flat, targets[idx], cfg.focal);
        }
        if (scene) {
          Tensor ce = cross_entropy_loss(fw.scene_logits, scene_ids[idx]);
          loss = detect ? add(loss, ce) : ce;
        }
        const double lv = loss.scalar();
        if (!std::isfinite(lv)) {
          throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batches) + ", sample " +
                                   train[idx].ann.image);
        }
        batch_loss += lv;
        auto grads = tape.gradients(loss);
        for (auto& [name, g] : grads) {
          auto it = acc.find(name);
          if (it == acc.end()) {
            acc.emplace(name, std::move(g));
          } else {
            double* a = it->second.ptr();
            const double* b = g.ptr();
            for (int64_t i = 0; i < g.size(); ++i) a[i] += b[i];
          }
        }
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& [name, g] : acc) {
        double* a = g.ptr();
        for (int64_t i = 0; i < g.size(); ++i) a[i] *= inv;
      }
      TrainConfig step_cfg = cfg;
      sgd_step(m, acc, step_cfg, sgd);
      epoch_loss += batch_loss * inv;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / std::max(1, batches);
    if (!val.empty()) {
      const ValMetrics vm = validate(m, val, cfg);
      log.val_map = vm.map;
      log.val_scene_acc = vm.scene_acc;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.verbose) {
      std::cerr << "epoch " << epoch << " loss " << log.train_loss << " val_map " << log.val_map
                << " scene_acc " << log.val_scene_acc << " (" << log.seconds << "s)\n";
    }
    result.log.push_back(log);
    result.final_train_loss = log.train_loss;
  }
  return result;
}

std::string train_log_json(const EpochLog& e, bool with_scene) {
  nlohmann::json j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["val_map"] = e.val_map;
  if (with_scene) j["val_scene_acc"] = e.val_scene_acc;
  j["seconds"] = e.seconds;
  return j.dump();
}

std::vector<HpoTrial> random_hpo(const ModelConfig& model_cfg, const TrainConfig& base,
                                 const std::vector<Sample>& train, const std::vector<Sample>& val,
                                 const HpoSpace& space, int trials, int budget_epochs,
                                 uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("random_hpo needs trials >= 1");
  std::vector<HpoTrial> report;
  for (int t = 0; t < trials; ++t) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(t)));
    HpoTrial trial;
    trial.trial = t;
    trial.lr = rng.log_uniform(space.lr_lo, space.lr_hi);
    trial.gamma = space.gammas[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(space.gammas.size()) - 1))];
    trial.alpha = rng.uniform(space.alpha_lo, space.alpha_hi);
    trial.pos_thr = rng.uniform(space.pos_lo, space.pos_hi);
    trial.neg_thr = rng.uniform(space.neg_lo, std::min(space.neg_hi, trial.pos_thr));

    TrainConfig cfg = base;
    cfg.learning_rate = trial.lr;
    cfg.focal.gamma = trial.gamma;
    cfg.focal.alpha = trial.alpha;
    cfg.pos_thr = trial.pos_thr;
    cfg.neg_thr = trial.neg_thr;
    cfg.epochs = budget_epochs;
    cfg.seed = Rng::mix(seed, 0x9000 + static_cast<uint64_t>(t));

    try {
      Model m = Model::build(model_cfg, cfg.seed);
      auto res = train_detector(m, train, val, cfg);
      trial.val_map = res.log.empty() ? 0.0 : res.log.back().val_map;
    } catch (const std::exception&) {
      trial.val_map = 0.0;  // failed trial stays in the report
    }
    report.push_back(trial);
  }
  std::stable_sort(report.begin(), report.end(), [](const HpoTrial& a, const HpoTrial& b) {
    if (a.val_map != b.val_map) return a.val_map > b.val_map;
    return a.trial < b.trial;
  });
  return report;
}

std::string hpo_trial_json(const HpoTrial& t) {
  nlohmann::json j;
  j["trial"] = t.trial;
  j["lr"] = t.lr;
  j["gamma"] = t.gamma;
  j["alpha"] = t.alpha;
  j["pos_thr"] = t.pos_thr;
  j["neg_thr"] = t.neg_thr;
  j["val_map"] = t.val_map;
  return j.dump();
}

}  // namespace deeva
