#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deeva/anchors.hpp"
#include "deeva/boxes.hpp"
#include "deeva/targets.hpp"
#include "deeva/tensor.hpp"

namespace deeva {

enum class HeadMode { kDetection, kSceneClassification, kBoth };

std::string head_mode_name(HeadMode m);
HeadMode head_mode_from_name(const std::string& s);

struct ModelConfig {
  int input_size = 128;  // square, power of two
  std::array<int, 3> backbone_channels{16, 32, 64};
  int subnet_hidden_layers = 2;
  int subnet_channels = 64;
  int num_classes = 3;
  AnchorConfig anchor_cfg = AnchorConfig::defaults();
  HeadMode head = HeadMode::kBoth;
  std::vector<std::string> class_names;        // size num_classes
  std::vector<std::string> scene_class_names;  // scene head vocabulary

  int num_scene_classes() const { return static_cast<int>(scene_class_names.size()); }
  void validate() const;

  std::string to_json_string() const;
  static ModelConfig from_json_string(const std::string& s);
};

struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = true;
};

// Backbone -> 3-level FPN -> weight-shared classification and regression
// subnets, plus a global-average scene head off the deepest stage.
class Model {
 public:
  static Model build(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const AnchorSet& anchors() const { return anchors_; }

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  Parameter& param(const std::string& name);
  const Parameter* find_param(const std::string& name) const;

  // Re-draws initial values for one named parameter (used by freeze plans).
  void reinit_param(const std::string& name, uint64_t seed);

  struct Forward {
    // per level, NCHW maps straight off the subnets
    std::vector<Tensor> cls_levels;  // [1, 9K, fh, fw] sigmoid probabilities
    std::vector<Tensor> reg_levels;  // [1, 36, fh, fw]
    // anchor-aligned flattenings
    Tensor cls_flat;  // [A, K]
    Tensor reg_flat;  // [A, 4]
    Tensor scene_logits;  // [K_scene], only when the scene head ran
    bool has_detect = false;
    bool has_scene = false;
  };

  // Training entry: with a tape, trainable parameters are watched under their
  // names and the whole graph is recorded. image is [1,C,H,W].
  Forward forward(const Tensor& image, GradientTape* tape = nullptr) const;

  // Per-level (probabilities, offsets), anchor order matching anchors().
  Forward forward_detect(const Tensor& image, GradientTape* tape = nullptr) const;
  Tensor forward_scene(const Tensor& image, GradientTape* tape = nullptr) const;

  std::vector<Detection> predict(const Tensor& image, double score_thr, double nms_thr,
                                 int max_dets) const;

 private:
  Model() = default;
  Forward run(const Tensor& image, GradientTape* tape, bool want_detect, bool want_scene) const;

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::map<std::string, size_t> index_;
  AnchorSet anchors_;
  // flattening gathers, built once per model
  std::vector<int32_t> cls_src_tensor_, reg_src_tensor_;
  std::vector<int64_t> cls_src_index_, reg_src_index_;

  void rebuild_index();
  void build_gathers();
  friend Model load_checkpoint(const std::vector<uint8_t>& bytes);
};

// --- checkpoint --------------------------------------------------------
// Layout: magic "DEEVA1", uint64 LE header length, UTF-8 JSON header
// (format version, config, manifest of name/shape/offset), zero padding to an
// 8-byte boundary, then little-endian float64 payload. Round trips bit-exact.

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kMagic, kVersion, kHeader, kManifestBounds, kManifestOverlap, kTruncatedPayload };
  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<uint8_t> save_checkpoint(const Model& m);
Model load_checkpoint(const std::vector<uint8_t>& bytes);
void save_checkpoint_file(const Model& m, const std::string& path);
Model load_checkpoint_file(const std::string& path);

}  // namespace deeva
