#include "deeva/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "deeva/rng.hpp"
#include "json.hpp"

namespace deeva {

using nlohmann::json;

std::string head_mode_name(HeadMode m) {
  switch (m) {
    case HeadMode::kDetection: return "detection";
    case HeadMode::kSceneClassification: return "scene_classification";
    case HeadMode::kBoth: return "both";
  }
  return "both";
}

HeadMode head_mode_from_name(const std::string& s) {
  if (s == "detection") return HeadMode::kDetection;
  if (s == "scene_classification") return HeadMode::kSceneClassification;
  if (s == "both") return HeadMode::kBoth;
  throw std::invalid_argument("unknown head mode: " + s);
}

void ModelConfig::validate() const {
  if (input_size <= 0 || (input_size & (input_size - 1)) != 0) {
    throw std::invalid_argument("input_size must be a positive power of two, got " +
                                std::to_string(input_size));
  }
  anchor_cfg.validate();
  const int max_stride = anchor_cfg.levels.back().stride;
  if (input_size % max_stride != 0 || input_size / max_stride < 1) {
    throw std::invalid_argument("input_size " + std::to_string(input_size) +
                                " not divisible by largest stride " + std::to_string(max_stride));
  }
  if (anchor_cfg.levels.size() != 3) {
    throw std::invalid_argument("model expects exactly 3 pyramid levels");
  }
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  for (int c : backbone_channels)
    if (c < 1) throw std::invalid_argument("backbone channels must be >= 1");
  if (subnet_hidden_layers < 1 || subnet_channels < 1) {
    throw std::invalid_argument("subnet depth/width must be >= 1");
  }
  if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes) {
    throw std::invalid_argument("class_names size disagrees with num_classes");
  }
  if (head != HeadMode::kDetection && scene_class_names.size() < 2) {
    throw std::invalid_argument("scene head needs at least 2 scene classes");
  }
}

// ---------------------------------------------------------------------------
// config <-> json

namespace {

json anchor_cfg_to_json(const AnchorConfig& a) {
  json j;
  j["levels"] = json::array();
  for (const auto& l : a.levels) j["levels"].push_back({{"stride", l.stride}, {"base_size", l.base_size}});
  j["ratios"] = a.ratios;
  j["scales"] = a.scales;
  return j;
}

AnchorConfig anchor_cfg_from_json(const json& j) {
  AnchorConfig a;
  a.levels.clear();
  for (const auto& l : j.at("levels")) {
    a.levels.push_back({l.at("stride").get<int>(), l.at("base_size").get<double>()});
  }
  a.ratios = j.at("ratios").get<std::array<double, 3>>();
  a.scales = j.at("scales").get<std::array<double, 3>>();
  return a;
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["input_size"] = c.input_size;
  j["backbone_channels"] = c.backbone_channels;
  j["subnet_hidden_layers"] = c.subnet_hidden_layers;
  j["subnet_channels"] = c.subnet_channels;
  j["num_classes"] = c.num_classes;
  j["anchors"] = anchor_cfg_to_json(c.anchor_cfg);
  j["head"] = head_mode_name(c.head);
  j["class_names"] = c.class_names;
  j["scene_class_names"] = c.scene_class_names;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.backbone_channels = j.at("backbone_channels").get<std::array<int, 3>>();
  c.subnet_hidden_layers = j.at("subnet_hidden_layers").get<int>();
  c.subnet_channels = j.at("subnet_channels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.anchor_cfg = anchor_cfg_from_json(j.at("anchors"));
  c.head = head_mode_from_name(j.at("head").get<std::string>());
  c.class_names = j.at("class_names").get<std::vector<std::string>>();
  c.scene_class_names = j.at("scene_class_names").get<std::vector<std::string>>();
  return c;
}

}  // namespace

std::string ModelConfig::to_json_string() const { return config_to_json(*this).dump(); }

ModelConfig ModelConfig::from_json_string(const std::string& s) {
  return config_from_json(json::parse(s));
}

// ---------------------------------------------------------------------------
// parameter descriptors

namespace {

enum class InitKind { kHeNormal, kSubnetNormal, kZero, kConst };

struct ParamDesc {
  std::string name;
  std::vector<int> shape;
  InitKind init;
  double const_value = 0.0;
};

constexpr double kSubnetStd = 0.01;
constexpr double kClassPrior = 0.01;  // initial sigmoid output of the class head

void push_conv(std::vector<ParamDesc>& out, const std::string& name, int out_ch, int in_ch,
               int k, InitKind wk, InitKind bk, double bias_const = 0.0) {
  out.push_back({name + ".w", {out_ch, in_ch, k, k}, wk, 0.0});
  out.push_back({name + ".b", {out_ch}, bk, bias_const});
}

std::vector<ParamDesc> param_descs(const ModelConfig& cfg) {
  std::vector<ParamDesc> d;
  const auto& ch = cfg.backbone_channels;
  push_conv(d, "backbone.stem", ch[0], 3, 3, InitKind::kHeNormal, InitKind::kZero);
  int prev = ch[0];
  for (int s = 0; s < 3; ++s) {
    const std::string stage = "backbone.stage" + std::to_string(s);
    push_conv(d, stage + ".entry", ch[static_cast<size_t>(s)], prev, 3, InitKind::kHeNormal, InitKind::kZero);
    push_conv(d, stage + ".res1", ch[static_cast<size_t>(s)], ch[static_cast<size_t>(s)], 3, InitKind::kHeNormal, InitKind::kZero);
    push_conv(d, stage + ".res2", ch[static_cast<size_t>(s)], ch[static_cast<size_t>(s)], 3, InitKind::kHeNormal, InitKind::kZero);
    prev = ch[static_cast<size_t>(s)];
  }
  const int w = cfg.subnet_channels;
  if (cfg.head != HeadMode::kSceneClassification) {
    for (int l = 0; l < 3; ++l) {
      push_conv(d, "fpn.lateral" + std::to_string(l), w, ch[static_cast<size_t>(l)], 1,
                InitKind::kHeNormal, InitKind::kZero);
    }
    for (int l = 0; l < 3; ++l) {
      push_conv(d, "fpn.smooth" + std::to_string(l), w, w, 3, InitKind::kHeNormal, InitKind::kZero);
    }
    for (int h = 0; h < cfg.subnet_hidden_layers; ++h) {
      push_conv(d, "cls_subnet.hidden" + std::to_string(h), w, w, 3, InitKind::kSubnetNormal, InitKind::kZero);
    }
    const double prior_bias = -std::log((1.0 - kClassPrior) / kClassPrior);
    push_conv(d, "cls_subnet.final", kAnchorsPerCell * cfg.num_classes, w, 3,
              InitKind::kSubnetNormal, InitKind::kConst, prior_bias);
    for (int h = 0; h < cfg.subnet_hidden_layers; ++h) {
      push_conv(d, "reg_subnet.hidden" + std::to_string(h), w, w, 3, InitKind::kSubnetNormal, InitKind::kZero);
    }
    push_conv(d, "reg_subnet.final", kAnchorsPerCell * 4, w, 3, InitKind::kSubnetNormal, InitKind::kZero);
  }
  if (cfg.head != HeadMode::kDetection) {
    push_conv(d, "scene_head.final", cfg.num_scene_classes(), ch[2], 1,
              InitKind::kSubnetNormal, InitKind::kZero);
  }
  return d;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Tensor materialize(const ParamDesc& d, uint64_t seed) {
  Tensor t(d.shape);
  Rng rng(Rng::mix(seed, fnv1a(d.name)));
  double* p = t.ptr();
  const int64_t n = t.size();
  switch (d.init) {
    case InitKind::kHeNormal: {
      int64_t fan_in = 1;
      for (size_t i = 1; i < d.shape.size(); ++i) fan_in *= d.shape[i];
      const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (int64_t i = 0; i < n; ++i) p[i] = rng.normal(0.0, std);
      break;
    }
    case InitKind::kSubnetNormal:
      for (int64_t i = 0; i < n; ++i) p[i] = rng.normal(0.0, kSubnetStd);
      break;
    case InitKind::kZero:
      break;
    case InitKind::kConst:
      for (int64_t i = 0; i < n; ++i) p[i] = d.const_value;
      break;
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model

Model Model::build(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  for (const auto& d : param_descs(cfg)) {
    m.params_.push_back({d.name, materialize(d, seed), true});
  }
  m.rebuild_index();
  m.anchors_ = generate_pyramid(cfg.anchor_cfg, cfg.input_size, cfg.input_size);
  m.build_gathers();
  return m;
}

void Model::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

Parameter& Model::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("no parameter named " + name);
  return params_[it->second];
}

const Parameter* Model::find_param(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

void Model::reinit_param(const std::string& name, uint64_t seed) {
  for (const auto& d : param_descs(cfg_)) {
    if (d.name == name) {
      param(name).value = materialize(d, seed);
      return;
    }
  }
  throw std::invalid_argument("no parameter named " + name);
}

void Model::build_gathers() {
  if (cfg_.head == HeadMode::kSceneClassification) return;
  const int k_cls = cfg_.num_classes;
  cls_src_tensor_.clear();
  cls_src_index_.clear();
  reg_src_tensor_.clear();
  reg_src_index_.clear();
  for (size_t l = 0; l < anchors_.levels.size(); ++l) {
    const auto& lvl = anchors_.levels[l];
    for (int i = 0; i < lvl.fh; ++i) {
      for (int j = 0; j < lvl.fw; ++j) {
        for (int a = 0; a < kAnchorsPerCell; ++a) {
          for (int k = 0; k < k_cls; ++k) {
            cls_src_tensor_.push_back(static_cast<int32_t>(l));
            cls_src_index_.push_back(
                ((static_cast<int64_t>(a) * k_cls + k) * lvl.fh + i) * lvl.fw + j);
          }
          for (int c = 0; c < 4; ++c) {
            reg_src_tensor_.push_back(static_cast<int32_t>(l));
            reg_src_index_.push_back(
                ((static_cast<int64_t>(a) * 4 + c) * lvl.fh + i) * lvl.fw + j);
          }
        }
      }
    }
  }
}

Model::Forward Model::run(const Tensor& image, GradientTape* tape, bool want_detect,
                          bool want_scene) const {
  if (image.shape.size() != 4 || image.dim(0) != 1 || image.dim(1) != 3 ||
      image.dim(2) != cfg_.input_size || image.dim(3) != cfg_.input_size) {
    throw std::invalid_argument("model expects [1,3," + std::to_string(cfg_.input_size) + "," +
                                std::to_string(cfg_.input_size) + "] input, got " +
                                shape_str(image.shape));
  }
  if (want_detect && cfg_.head == HeadMode::kSceneClassification) {
    throw std::invalid_argument("detection head is disabled in this config");
  }
  if (want_scene && cfg_.head == HeadMode::kDetection) {
    throw std::invalid_argument("scene head is disabled in this config");
  }

  std::map<std::string, Tensor> env;
  for (const auto& p : params_) {
    env.emplace(p.name, (tape && p.trainable) ? tape->watch(p.value, p.name) : p.value);
  }
  auto conv = [&](const Tensor& x, const std::string& name, int stride, int pad) {
    return conv2d(x, env.at(name + ".w"), env.at(name + ".b"), stride, pad);
  };

  // backbone: stem to stride 4, then three pooled residual stages
  Tensor x = relu(conv(image, "backbone.stem", 2, 1));
  x = maxpool2(x);
  std::vector<Tensor> taps;
  for (int s = 0; s < 3; ++s) {
    const std::string stage = "backbone.stage" + std::to_string(s);
    x = relu(conv(x, stage + ".entry", 1, 1));
    Tensor y = relu(conv(x, stage + ".res1", 1, 1));
    y = conv(y, stage + ".res2", 1, 1);
    x = relu(add(x, y));
    x = maxpool2(x);
    taps.push_back(x);
  }

  Forward out;
  if (want_detect) {
    // top-down pathway with lateral 1x1s, then 3x3 smoothing
    Tensor p2 = conv(taps[2], "fpn.lateral2", 1, 0);
    Tensor p1 = add(conv(taps[1], "fpn.lateral1", 1, 0), upsample_nearest2(p2));
    Tensor p0 = add(conv(taps[0], "fpn.lateral0", 1, 0), upsample_nearest2(p1));
    std::vector<Tensor> pyr = {conv(p0, "fpn.smooth0", 1, 1), conv(p1, "fpn.smooth1", 1, 1),
                               conv(p2, "fpn.smooth2", 1, 1)};
    for (const Tensor& p : pyr) {
      Tensor hc = p;
      for (int h = 0; h < cfg_.subnet_hidden_layers; ++h) {
        hc = relu(conv(hc, "cls_subnet.hidden" + std::to_string(h), 1, 1));
      }
      out.cls_levels.push_back(sigmoid(conv(hc, "cls_subnet.final", 1, 1)));
      Tensor hr = p;
      for (int h = 0; h < cfg_.subnet_hidden_layers; ++h) {
        hr = relu(conv(hr, "reg_subnet.hidden" + std::to_string(h), 1, 1));
      }
      out.reg_levels.push_back(conv(hr, "reg_subnet.final", 1, 1));
    }
    out.cls_flat = gather_concat(out.cls_levels, cls_src_tensor_, cls_src_index_,
                                 {static_cast<int>(anchors_.total()), cfg_.num_classes});
    out.reg_flat = gather_concat(out.reg_levels, reg_src_tensor_, reg_src_index_,
                                 {static_cast<int>(anchors_.total()), 4});
    out.has_detect = true;
  }
  if (want_scene) {
    Tensor g = global_avg(taps[2]);
    Tensor logits = conv(g, "scene_head.final", 1, 0);
    out.scene_logits = reshape(logits, {cfg_.num_scene_classes()});
    out.has_scene = true;
  }
  return out;
}

Model::Forward Model::forward(const Tensor& image, GradientTape* tape) const {
  return run(image, tape, cfg_.head != HeadMode::kSceneClassification,
             cfg_.head != HeadMode::kDetection);
}

Model::Forward Model::forward_detect(const Tensor& image, GradientTape* tape) const {
  return run(image, tape, true, false);
}

Tensor Model::forward_scene(const Tensor& image, GradientTape* tape) const {
  return run(image, tape, false, true).scene_logits;
}

std::vector<Detection> Model::predict(const Tensor& image, double score_thr, double nms_thr,
                                      int max_dets) const {
  if (!(score_thr > 0.0 && score_thr <= 1.0) || !(nms_thr > 0.0 && nms_thr < 1.0)) {
    throw std::invalid_argument("predict thresholds out of range");
  }
  Forward fw = run(image, nullptr, true, false);
  const double* probs = fw.cls_flat.ptr();
  const double* regs = fw.reg_flat.ptr();
  const int k_cls = cfg_.num_classes;
  const double img = static_cast<double>(cfg_.input_size);

  std::vector<Detection> cands;
  for (int64_t a = 0; a < anchors_.total(); ++a) {
    if (!anchors_.valid[static_cast<size_t>(a)]) continue;
    for (int k = 0; k < k_cls; ++k) {
      double s = probs[a * k_cls + k];
      s = std::min(std::max(s, kProbClamp), 1.0 - kProbClamp);
      if (s < score_thr) continue;
      const BoxOffsets off{regs[a * 4 + 0], regs[a * 4 + 1], regs[a * 4 + 2], regs[a * 4 + 3]};
      const Box decoded = decode_offsets(off, anchors_.anchors[static_cast<size_t>(a)]);
      auto clipped = clip_to_image(decoded, img, img);
      if (!clipped) continue;
      cands.push_back({*clipped, k, s});
    }
  }
  // bound the suppression cost on untrained models
  constexpr size_t kPreNmsTop = 2000;
  if (cands.size() > kPreNmsTop) {
    std::sort(cands.begin(), cands.end(), [](const Detection& a, const Detection& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.class_id != b.class_id) return a.class_id < b.class_id;
      if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
      return a.box.y1 < b.box.y1;
    });
    cands.resize(kPreNmsTop);
  }
  std::vector<Detection> kept = nms(std::move(cands), nms_thr);
  if (static_cast<int>(kept.size()) > max_dets) kept.resize(static_cast<size_t>(max_dets));
  return kept;
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {

constexpr char kMagic[6] = {'D', 'E', 'E', 'V', 'A', '1'};
constexpr int kFormatVersion = 1;

void put_u64le(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64le(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<uint8_t> save_checkpoint(const Model& m) {
  json manifest = json::array();
  uint64_t offset = 0;
  for (const auto& p : m.params()) {
    manifest.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
    offset += static_cast<uint64_t>(p.value.size()) * 8;
  }
  json header;
  header["version"] = kFormatVersion;
  header["config"] = json::parse(m.config().to_json_string());
  header["manifest"] = manifest;
  header["payload_bytes"] = offset;
  const std::string hs = header.dump();

  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 6);
  put_u64le(out, hs.size());
  out.insert(out.end(), hs.begin(), hs.end());
  while (out.size() % 8 != 0) out.push_back(0);
  for (const auto& p : m.params()) {
    for (double v : p.value.values()) {
      put_u64le(out, std::bit_cast<uint64_t>(v));
    }
  }
  return out;
}

Model load_checkpoint(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kMagic, 6) != 0) {
    throw CheckpointError(CheckpointError::Kind::kMagic, "not a DEEVA1 checkpoint");
  }
  const uint64_t hlen = get_u64le(bytes.data() + 6);
  if (14 + hlen > bytes.size()) {
    throw CheckpointError(CheckpointError::Kind::kHeader, "header extends past end of file");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 14, bytes.begin() + 14 + static_cast<int64_t>(hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kHeader, std::string("bad header json: ") + e.what());
  }

  ModelConfig cfg;
  uint64_t payload_bytes = 0;
  std::vector<std::tuple<std::string, std::vector<int>, uint64_t>> manifest;
  try {
    if (header.at("version").get<int>() != kFormatVersion) {
      throw CheckpointError(CheckpointError::Kind::kVersion,
                            "unsupported checkpoint version " + header.at("version").dump());
    }
    cfg = config_from_json(header.at("config"));
    cfg.validate();
    payload_bytes = header.at("payload_bytes").get<uint64_t>();
    for (const auto& e : header.at("manifest")) {
      manifest.emplace_back(e.at("name").get<std::string>(),
                            e.at("shape").get<std::vector<int>>(),
                            e.at("offset").get<uint64_t>());
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kHeader, std::string("bad header: ") + e.what());
  }

  // manifest sanity: in payload bounds, no overlaps
  std::vector<std::pair<uint64_t, uint64_t>> spans;
  for (const auto& [name, shape, off] : manifest) {
    const uint64_t nbytes = static_cast<uint64_t>(shape_size(shape)) * 8;
    if (off % 8 != 0 || off + nbytes > payload_bytes) {
      throw CheckpointError(CheckpointError::Kind::kManifestBounds,
                            "manifest entry '" + name + "' falls outside the payload");
    }
    spans.emplace_back(off, off + nbytes);
  }
  std::sort(spans.begin(), spans.end());
  for (size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) {
      throw CheckpointError(CheckpointError::Kind::kManifestOverlap, "manifest entries overlap");
    }
  }

  size_t payload_start = 14 + static_cast<size_t>(hlen);
  while (payload_start % 8 != 0) ++payload_start;
  if (payload_start + payload_bytes > bytes.size()) {
    throw CheckpointError(CheckpointError::Kind::kTruncatedPayload,
                          "payload truncated: expected " + std::to_string(payload_bytes) +
                              " bytes, file holds " +
                              std::to_string(bytes.size() - std::min(bytes.size(), payload_start)));
  }

  // architecture must agree with the config
  auto descs = param_descs(cfg);
  if (descs.size() != manifest.size()) {
    throw CheckpointError(CheckpointError::Kind::kHeader, "manifest does not match architecture");
  }
  Model m;
  m.cfg_ = cfg;
  for (size_t i = 0; i < descs.size(); ++i) {
    const auto& [name, shape, off] = manifest[i];
    if (name != descs[i].name || shape != descs[i].shape) {
      throw CheckpointError(CheckpointError::Kind::kHeader,
                            "manifest entry '" + name + "' does not match architecture");
    }
    Tensor t(shape);
    const uint8_t* src = bytes.data() + payload_start + off;
    for (int64_t k = 0; k < t.size(); ++k) {
      t.ptr()[k] = std::bit_cast<double>(get_u64le(src + k * 8));
    }
    m.params_.push_back({name, std::move(t), true});
  }
  m.rebuild_index();
  m.anchors_ = generate_pyramid(cfg.anchor_cfg, cfg.input_size, cfg.input_size);
  m.build_gathers();
  return m;
}

void save_checkpoint_file(const Model& m, const std::string& path) {
  const auto bytes = save_checkpoint(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to checkpoint: " + path);
}

Model load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return load_checkpoint(bytes);
}

}  // namespace deeva
