// Command-line front end: dataset synthesis, training, evaluation,
// hyper-parameter search, single-image detection, gradient verification and
// the ingestion service. Machine-readable JSON goes to stdout, diagnostics
// to stderr.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "deeva/data.hpp"
#include "deeva/eval.hpp"
#include "deeva/gradcheck.hpp"
#include "deeva/model.hpp"
#include "deeva/service.hpp"
#include "deeva/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace deeva;

namespace {

std::atomic<Service*> g_service{nullptr};

void handle_signal(int) {
  if (Service* s = g_service.load()) s->stop();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

ModelConfig make_model_config(int input_size, const std::vector<std::string>& classes,
                              const std::string& head) {
  ModelConfig cfg;
  cfg.input_size = input_size;
  cfg.num_classes = static_cast<int>(classes.size());
  cfg.class_names = classes;
  cfg.scene_class_names.assign(kSceneClasses.begin(), kSceneClasses.end());
  cfg.head = head_mode_from_name(head);
  return cfg;
}

std::vector<GroundTruth> gts_of(const Annotation& ann, const std::vector<std::string>& names) {
  std::vector<GroundTruth> out;
  for (const auto& o : ann.objects) {
    for (size_t k = 0; k < names.size(); ++k) {
      if (names[k] == o.cls) {
        out.push_back({o.box, static_cast<int>(k)});
        break;
      }
    }
  }
  return out;
}

void draw_box_outline(Tensor& image, const Box& b, double r, double g, double bl) {
  const int h = image.dim(1), w = image.dim(2);
  const int64_t plane = static_cast<int64_t>(h) * w;
  auto put = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    image.ptr()[static_cast<int64_t>(y) * w + x] = r;
    image.ptr()[plane + static_cast<int64_t>(y) * w + x] = g;
    image.ptr()[2 * plane + static_cast<int64_t>(y) * w + x] = bl;
  };
  const int x1 = static_cast<int>(b.x1), y1 = static_cast<int>(b.y1);
  const int x2 = static_cast<int>(b.x2) - 1, y2 = static_cast<int>(b.y2) - 1;
  for (int x = x1; x <= x2; ++x) {
    put(x, y1);
    put(x, y2);
  }
  for (int y = y1; y <= y2; ++y) {
    put(x1, y);
    put(x2, y);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deeva: dense detection, scene labels and frame-event surveillance"};
  app.require_subcommand(1);

  // --- synth --------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out = "dataset";
  int synth_count = 100;
  uint64_t synth_seed = 7;
  int synth_size = 128;
  std::string synth_classes = "worker,vehicle,excavator";
  int synth_min_obj = 0, synth_max_obj = 3;
  double synth_noise = 0.02, synth_overlap = 0.4;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--count", synth_count, "number of scenes");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--size", synth_size, "square image size (power of two)");
  synth->add_option("--classes", synth_classes, "comma-separated class mix");
  synth->add_option("--min-objects", synth_min_obj, "minimum objects per scene");
  synth->add_option("--max-objects", synth_max_obj, "maximum objects per scene");
  synth->add_option("--noise", synth_noise, "additive noise amplitude");
  synth->add_option("--max-overlap", synth_overlap, "max pairwise IoU between objects");

  // --- train ----------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "train a detector on a manifest");
  std::string train_manifest, train_out = "model.ckpt", train_log_path, train_head = "both";
  std::string train_freeze = "all", train_init_ckpt;
  int train_count = -1;
  TrainConfig tc;
  int train_input_size = 128;
  train_cmd->add_option("--manifest", train_manifest, "dataset manifest (NDJSON)")->required();
  train_cmd->add_option("--out", train_out, "checkpoint output path");
  train_cmd->add_option("--log", train_log_path, "per-epoch NDJSON log path");
  train_cmd->add_option("--train-count", train_count,
                        "first N samples train, the rest validate (default: 5/6 split)");
  train_cmd->add_option("--epochs", tc.epochs, "training epochs");
  train_cmd->add_option("--lr", tc.learning_rate, "learning rate");
  train_cmd->add_option("--momentum", tc.momentum, "SGD momentum");
  train_cmd->add_option("--batch-size", tc.batch_size, "batch size");
  train_cmd->add_option("--alpha", tc.focal.alpha, "focal loss alpha");
  train_cmd->add_option("--gamma", tc.focal.gamma, "focal loss gamma");
  train_cmd->add_option("--pos-thr", tc.pos_thr, "anchor match positive IoU");
  train_cmd->add_option("--neg-thr", tc.neg_thr, "anchor match negative IoU");
  train_cmd->add_option("--seed", tc.seed, "training seed");
  train_cmd->add_option("--head", train_head, "detection | scene_classification | both");
  train_cmd->add_option("--freeze", train_freeze, "all | head-only | head-fpn");
  train_cmd->add_option("--init-checkpoint", train_init_ckpt, "warm start from a checkpoint");
  train_cmd->add_option("--input-size", train_input_size, "model input size");
  train_cmd->add_flag("--verbose", tc.verbose, "per-epoch progress on stderr");

  // --- eval -----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest;
  double eval_iou = 0.5, eval_score = 0.05, eval_nms = 0.5;
  int eval_max_dets = 100;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--iou-thr", eval_iou, "matching IoU threshold");
  eval_cmd->add_option("--score-thr", eval_score, "detection score floor");
  eval_cmd->add_option("--nms-thr", eval_nms, "suppression IoU threshold");
  eval_cmd->add_option("--max-dets", eval_max_dets, "detections kept per image");

  // --- hpo --------------------------------------------------------------------
  auto* hpo_cmd = app.add_subcommand("hpo", "random hyper-parameter search");
  std::string hpo_manifest, hpo_report = "hpo.ndjson", hpo_head = "both";
  int hpo_trials = 8, hpo_budget = 2, hpo_train_count = -1, hpo_input_size = 128;
  uint64_t hpo_seed = 0;
  hpo_cmd->add_option("--manifest", hpo_manifest, "dataset manifest")->required();
  hpo_cmd->add_option("--trials", hpo_trials, "number of sampled configs");
  hpo_cmd->add_option("--budget-epochs", hpo_budget, "epochs per trial");
  hpo_cmd->add_option("--train-count", hpo_train_count, "train/val split point");
  hpo_cmd->add_option("--seed", hpo_seed, "search seed");
  hpo_cmd->add_option("--report", hpo_report, "NDJSON trial report path");
  hpo_cmd->add_option("--head", hpo_head, "model head mode");
  hpo_cmd->add_option("--input-size", hpo_input_size, "model input size");

  // --- detect ---------------------------------------------------------------
  auto* detect_cmd = app.add_subcommand("detect", "run detection on one image");
  std::string det_ckpt, det_image, det_annotated;
  double det_score = 0.3, det_nms = 0.5;
  int det_max = 50;
  detect_cmd->add_option("--checkpoint", det_ckpt, "model checkpoint")->required();
  detect_cmd->add_option("--image", det_image, "PPM/PGM image")->required();
  detect_cmd->add_option("--score-thr", det_score, "score threshold");
  detect_cmd->add_option("--nms-thr", det_nms, "suppression IoU threshold");
  detect_cmd->add_option("--max-dets", det_max, "max detections");
  detect_cmd->add_option("--annotated", det_annotated, "write a PPM with box outlines");

  // --- gradcheck --------------------------------------------------------------
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  GradSuiteConfig gc;
  grad_cmd->add_option("--nets", gc.nets, "random architectures to check");
  grad_cmd->add_option("--loss-instances", gc.loss_instances, "detection-loss instances");
  grad_cmd->add_option("--seed", gc.seed, "sampler seed");

  // --- serve ------------------------------------------------------------------
  auto* serve_cmd = app.add_subcommand("serve", "frame-ingestion surveillance service");
  std::string srv_ckpt, srv_watch, srv_log = "events.ndjson";
  int srv_port = -1;
  double srv_score = 0.3, srv_nms = 0.5;
  int64_t srv_max_frames = 0;
  size_t srv_queue = 64;
  serve_cmd->add_option("--checkpoint", srv_ckpt, "model checkpoint")->required();
  serve_cmd->add_option("--watch", srv_watch, "directory to watch for *.ppm / *.pgm");
  serve_cmd->add_option("--port", srv_port, "TCP port for the FRAME stream protocol");
  serve_cmd->add_option("--log", srv_log, "append-only event log path");
  serve_cmd->add_option("--score-thr", srv_score, "score threshold");
  serve_cmd->add_option("--nms-thr", srv_nms, "suppression IoU threshold");
  serve_cmd->add_option("--max-frames", srv_max_frames, "exit after N frames (0 = run forever)");
  serve_cmd->add_option("--queue-cap", srv_queue, "bounded ingest queue capacity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (*synth) {
      SceneSpec spec;
      spec.seed = synth_seed;
      spec.size = synth_size;
      spec.min_objects = synth_min_obj;
      spec.max_objects = synth_max_obj;
      spec.noise_amplitude = synth_noise;
      spec.max_pairwise_iou = synth_overlap;
      spec.class_weights.clear();
      for (const auto& c : split_csv(synth_classes)) spec.class_weights[c] = 1.0;
      const std::string manifest = synth_dataset(spec, synth_count, synth_out);
      std::cout << json{{"images", synth_count}, {"manifest", manifest}}.dump() << "\n";
      return 0;
    }

    if (*train_cmd) {
      auto samples = load_dataset(train_manifest);
      if (samples.empty()) throw std::runtime_error("manifest has no samples");
      size_t split = train_count > 0 ? static_cast<size_t>(train_count)
                                     : samples.size() * 5 / 6;
      split = std::min(split, samples.size());
      std::vector<Sample> train_set(samples.begin(), samples.begin() + static_cast<long>(split));
      std::vector<Sample> val_set(samples.begin() + static_cast<long>(split), samples.end());

      // detection classes present, in the fixed vocabulary order
      std::vector<std::string> classes;
      for (const char* name : kObjectClasses) {
        for (const auto& s : samples) {
          bool found = false;
          for (const auto& o : s.ann.objects) {
            if (o.cls == name) {
              classes.push_back(name);
              found = true;
              break;
            }
          }
          if (found) break;
        }
      }
      if (classes.empty()) classes = {"worker"};

      Model model = train_init_ckpt.empty()
                        ? Model::build(make_model_config(train_input_size, classes, train_head),
                                       tc.seed)
                        : load_checkpoint_file(train_init_ckpt);
      if (train_freeze != "all" && train_freeze != "none") {
        apply_freeze(model, FreezePlan::by_name(train_freeze), tc.seed);
      }
      auto result = train_detector(model, train_set, val_set, tc);
      save_checkpoint_file(model, train_out);
      if (!train_log_path.empty()) {
        std::ofstream lf(train_log_path, std::ios::trunc);
        for (const auto& e : result.log) {
          lf << train_log_json(e, model.config().head != HeadMode::kDetection) << "\n";
        }
      }
      const auto& last = result.log.back();
      std::cout << json{{"checkpoint", train_out},
                        {"epochs", static_cast<int>(result.log.size())},
                        {"final_train_loss", last.train_loss},
                        {"val_map", last.val_map},
                        {"val_scene_acc", last.val_scene_acc}}
                       .dump()
                << "\n";
      return 0;
    }

    if (*eval_cmd) {
      Model model = load_checkpoint_file(eval_ckpt);
      auto samples = load_dataset(eval_manifest);
      TrainConfig protocol;
      protocol.eval_score_thr = eval_score;
      protocol.eval_nms_thr = eval_nms;
      protocol.eval_max_dets = eval_max_dets;
      protocol.eval_iou_thr = eval_iou;

      std::vector<std::vector<Detection>> dets;
      std::vector<std::vector<GroundTruth>> gts;
      std::vector<int> sp, st;
      const bool detect = model.config().head != HeadMode::kSceneClassification;
      const bool scene = model.config().head != HeadMode::kDetection;
      for (const auto& s : samples) {
        Tensor batch;
        batch.shape = {1, s.image.dim(0), s.image.dim(1), s.image.dim(2)};
        batch.data = s.image.data;
        if (detect) {
          dets.push_back(model.predict(batch, eval_score, eval_nms, eval_max_dets));
          gts.push_back(gts_of(s.ann, model.config().class_names));
        }
        if (scene) {
          const Tensor logits = model.forward_scene(batch);
          int best = 0;
          for (int64_t i = 1; i < logits.size(); ++i)
            if (logits.ptr()[i] > logits.ptr()[best]) best = static_cast<int>(i);
          sp.push_back(best);
          st.push_back(scene_class_id(s.ann.scene_label));
        }
      }
      EvalResult r;
      if (detect) r = mean_ap(dets, gts, eval_iou, model.config().class_names);
      r.iou_thr = eval_iou;
      if (scene) {
        auto sc = scene_confusion(sp, st, model.config().num_scene_classes());
        r.has_scene = true;
        r.scene_accuracy = sc.accuracy;
        r.confusion = sc.counts;
      }
      std::cout << eval_report_json(r) << "\n";
      return 0;
    }

    if (*hpo_cmd) {
      auto samples = load_dataset(hpo_manifest);
      size_t split = hpo_train_count > 0 ? static_cast<size_t>(hpo_train_count)
                                         : samples.size() * 5 / 6;
      split = std::min(split, samples.size());
      std::vector<Sample> train_set(samples.begin(), samples.begin() + static_cast<long>(split));
      std::vector<Sample> val_set(samples.begin() + static_cast<long>(split), samples.end());
      std::vector<std::string> classes;
      for (const char* name : kObjectClasses) {
        for (const auto& s : samples) {
          bool found = false;
          for (const auto& o : s.ann.objects) {
            if (o.cls == name) {
              classes.push_back(name);
              found = true;
              break;
            }
          }
          if (found) break;
        }
      }
      TrainConfig base;
      base.epochs = hpo_budget;
      auto report = random_hpo(make_model_config(hpo_input_size, classes, hpo_head), base,
                               train_set, val_set, HpoSpace{}, hpo_trials, hpo_budget, hpo_seed);
      std::ofstream rf(hpo_report, std::ios::trunc);
      for (const auto& t : report) rf << hpo_trial_json(t) << "\n";
      std::cout << json{{"trials", hpo_trials},
                        {"report", hpo_report},
                        {"best", json::parse(hpo_trial_json(report.front()))}}
                       .dump()
                << "\n";
      return 0;
    }

    if (*detect_cmd) {
      Model model = load_checkpoint_file(det_ckpt);
      Tensor image = read_image(det_image);
      Event ev = process_frame(model, image, "cli", 0,
                               {det_score, det_nms, det_max}, nullptr);
      if (!det_annotated.empty()) {
        Tensor canvas = fit_image(image, model.config().input_size);
        Tensor copy(canvas.shape, canvas.values());
        for (const auto& d : ev.detections) draw_box_outline(copy, d.box, 0.1, 1.0, 0.1);
        write_ppm(det_annotated, copy);
      }
      std::cout << ev.to_json() << "\n";
      return 0;
    }

    if (*grad_cmd) {
      const auto result = run_gradient_suite(gc);
      std::cout << json{{"max_rel_err", result.max_rel_err},
                        {"tolerance", gc.tolerance},
                        {"nets", result.nets_checked},
                        {"loss_instances", result.loss_instances_checked},
                        {"passed", result.passed}}
                       .dump()
                << "\n";
      if (!result.passed) {
        for (const auto& f : result.failures) std::cerr << f << "\n";
        return 1;
      }
      return 0;
    }

    if (*serve_cmd) {
      if (srv_watch.empty() == (srv_port < 0)) {
        std::cerr << "serve needs exactly one of --watch or --port\n";
        return 2;
      }
      ServiceConfig sc;
      sc.mode = srv_watch.empty() ? ServiceConfig::Mode::kStreamListen
                                  : ServiceConfig::Mode::kWatchDir;
      sc.watch_dir = srv_watch;
      sc.port = srv_port < 0 ? 0 : srv_port;
      sc.log_path = srv_log;
      sc.thresholds = {srv_score, srv_nms, 50};
      sc.max_frames = srv_max_frames;
      sc.queue_capacity = srv_queue;
      Service service(sc, load_checkpoint_file(srv_ckpt));
      service.start();
      g_service.store(&service);
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      if (sc.mode == ServiceConfig::Mode::kStreamListen) {
        std::cout << json{{"listening", service.bound_port()}, {"log", srv_log}}.dump() << "\n"
                  << std::flush;
      } else {
        std::cout << json{{"watching", srv_watch}, {"log", srv_log}}.dump() << "\n" << std::flush;
      }
      service.wait();
      g_service.store(nullptr);
      const auto st = service.stats();
      std::cout << json{{"processed", st.processed},
                        {"dropped", st.dropped},
                        {"errors", st.errors}}
                       .dump()
                << "\n";
      return 0;
    }
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
