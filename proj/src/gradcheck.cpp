#include "deeva/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "deeva/rng.hpp"
#include "deeva/targets.hpp"

namespace deeva {

namespace {

struct LayerSpec {
  enum Kind { kConv, kResidual, kMaxPool, kUpsample, kSigmoid } kind;
  int out_ch = 0;
};

struct NetSpec {
  int input_ch = 0;
  int input_hw = 0;
  std::vector<LayerSpec> layers;
  Tensor input;
  std::map<std::string, Tensor> params;
};

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.ptr()[i] = rng.uniform(lo, hi);
  return t;
}

// Draws a net of up to 4 conv layers and up to 8 channels ending in a scalar.
NetSpec sample_net(uint64_t seed) {
  Rng rng(seed);
  NetSpec net;
  net.input_ch = static_cast<int>(rng.uniform_int(1, 3));
  net.input_hw = rng.uniform() < 0.5 ? 4 : 8;
  int convs = 0;
  int ch = net.input_ch;
  int hw = net.input_hw;
  const int total = static_cast<int>(rng.uniform_int(2, 4));
  while (convs < total) {
    const double pick = rng.uniform();
    if (pick < 0.45 || convs == 0) {
      const int out_ch = static_cast<int>(rng.uniform_int(2, 8));
      net.layers.push_back({LayerSpec::kConv, out_ch});
      ch = out_ch;
      ++convs;
    } else if (pick < 0.6 && convs + 2 <= total) {
      net.layers.push_back({LayerSpec::kResidual, ch});
      convs += 2;
    } else if (pick < 0.75 && hw >= 4) {
      net.layers.push_back({LayerSpec::kMaxPool, ch});
      hw /= 2;
    } else if (pick < 0.85 && hw <= 8) {
      net.layers.push_back({LayerSpec::kUpsample, ch});
      hw *= 2;
    } else {
      net.layers.push_back({LayerSpec::kSigmoid, ch});
    }
  }
  net.input = random_tensor(rng, {1, net.input_ch, net.input_hw, net.input_hw}, -1.0, 1.0);

  int in_ch = net.input_ch;
  int idx = 0;
  for (const auto& l : net.layers) {
    if (l.kind == LayerSpec::kConv) {
      net.params.emplace("conv" + std::to_string(idx) + ".w",
                         random_tensor(rng, {l.out_ch, in_ch, 3, 3}, -0.5, 0.5));
      net.params.emplace("conv" + std::to_string(idx) + ".b",
                         random_tensor(rng, {l.out_ch}, -0.2, 0.2));
      in_ch = l.out_ch;
      ++idx;
    } else if (l.kind == LayerSpec::kResidual) {
      for (int r = 0; r < 2; ++r) {
        net.params.emplace("conv" + std::to_string(idx) + ".w",
                           random_tensor(rng, {in_ch, in_ch, 3, 3}, -0.5, 0.5));
        net.params.emplace("conv" + std::to_string(idx) + ".b",
                           random_tensor(rng, {in_ch}, -0.2, 0.2));
        ++idx;
      }
    }
  }
  net.params.emplace("head.w", random_tensor(rng, {1, in_ch, 1, 1}, -0.5, 0.5));
  net.params.emplace("head.b", random_tensor(rng, {1}, -0.2, 0.2));
  return net;
}

// Forward pass; when margins is set, records the closest approach to a relu
// zero or a pooling tie so borderline nets can be rejected.
Tensor net_forward(const NetSpec& net, GradientTape* tape,
                   const std::map<std::string, Tensor>& params, double* margin) {
  auto update_relu_margin = [&](const Tensor& pre) {
    if (!margin) return;
    for (int64_t i = 0; i < pre.size(); ++i) {
      *margin = std::min(*margin, std::fabs(pre.values()[static_cast<size_t>(i)]));
    }
  };
  auto update_pool_margin = [&](const Tensor& pre) {
    if (!margin) return;
    const int n = pre.dim(0), c = pre.dim(1), h = pre.dim(2), w = pre.dim(3);
    const double* p = pre.ptr();
    for (int nc = 0; nc < n * c; ++nc) {
      const double* plane = p + static_cast<int64_t>(nc) * h * w;
      for (int y = 0; y + 1 < h; y += 2) {
        for (int x = 0; x + 1 < w; x += 2) {
          double v[4] = {plane[y * w + x], plane[y * w + x + 1], plane[(y + 1) * w + x],
                         plane[(y + 1) * w + x + 1]};
          std::sort(v, v + 4);
          *margin = std::min(*margin, v[3] - v[2]);
        }
      }
    }
  };

  Tensor x = net.input;
  int idx = 0;
  for (const auto& l : net.layers) {
    switch (l.kind) {
      case LayerSpec::kConv: {
        Tensor pre = conv2d(x, params.at("conv" + std::to_string(idx) + ".w"),
                            params.at("conv" + std::to_string(idx) + ".b"), 1, 1);
        update_relu_margin(pre);
        x = relu(pre);
        ++idx;
        break;
      }
      case LayerSpec::kResidual: {
        Tensor a = conv2d(x, params.at("conv" + std::to_string(idx) + ".w"),
                          params.at("conv" + std::to_string(idx) + ".b"), 1, 1);
        update_relu_margin(a);
        a = relu(a);
        ++idx;
        Tensor b = conv2d(a, params.at("conv" + std::to_string(idx) + ".w"),
                          params.at("conv" + std::to_string(idx) + ".b"), 1, 1);
        ++idx;
        x = add(x, b);
        break;
      }
      case LayerSpec::kMaxPool:
        update_pool_margin(x);
        x = maxpool2(x);
        break;
      case LayerSpec::kUpsample:
        x = upsample_nearest2(x);
        break;
      case LayerSpec::kSigmoid:
        x = sigmoid(x);
        break;
    }
  }
  x = global_avg(x);
  x = conv2d(x, params.at("head.w"), params.at("head.b"), 1, 0);
  return sum_all(sigmoid(x));
}

AnchorTargets random_targets(Rng& rng, int anchors, int classes) {
  AnchorTargets t;
  t.labels.resize(static_cast<size_t>(anchors));
  t.gt_class.assign(static_cast<size_t>(anchors), -1);
  t.offsets.resize(static_cast<size_t>(anchors));
  for (int a = 0; a < anchors; ++a) {
    const double pick = rng.uniform();
    if (pick < 0.2) {
      t.labels[static_cast<size_t>(a)] = AnchorLabel::kPositive;
      t.gt_class[static_cast<size_t>(a)] = static_cast<int>(rng.uniform_int(0, classes - 1));
      t.offsets[static_cast<size_t>(a)] = {rng.uniform(-1, 1), rng.uniform(-1, 1),
                                           rng.uniform(-1, 1), rng.uniform(-1, 1)};
      ++t.num_positive;
    } else if (pick < 0.3) {
      t.labels[static_cast<size_t>(a)] = AnchorLabel::kIgnore;
    } else {
      t.labels[static_cast<size_t>(a)] = AnchorLabel::kNegative;
    }
  }
  return t;
}

}  // namespace

GradSuiteResult run_gradient_suite(const GradSuiteConfig& cfg) {
  GradSuiteResult result;

  uint64_t candidate = 0;
  while (result.nets_checked < cfg.nets) {
    const uint64_t net_seed = Rng::mix(cfg.seed, candidate++);
    NetSpec net = sample_net(net_seed);
    double margin = 1e100;
    net_forward(net, nullptr, net.params, &margin);
    if (margin < cfg.margin) continue;  // too close to a kink for central differences

    auto program = [&net](GradientTape* tape, const std::map<std::string, Tensor>& params) {
      return net_forward(net, tape, params, nullptr);
    };
    const auto report = finite_diff_check(program, net.params, cfg.h);
    result.max_rel_err = std::max(result.max_rel_err, report.max_rel_err);
    if (report.max_rel_err >= cfg.tolerance) {
      result.failures.push_back("net seed " + std::to_string(net_seed) + " rel err " +
                                std::to_string(report.max_rel_err));
    }
    ++result.nets_checked;
  }

  const double gamma_grid[4] = {0.0, 1.0, 2.0, 5.0};
  for (int inst = 0; inst < cfg.loss_instances; ++inst) {
    Rng rng(Rng::mix(cfg.seed, 0xdead0000 + static_cast<uint64_t>(inst)));
    const int anchors = 50, classes = 3;
    AnchorTargets targets = random_targets(rng, anchors, classes);
    FocalLossParams params{rng.uniform(0.15, 0.85), gamma_grid[inst % 4]};

    Tensor cls = random_tensor(rng, {anchors, classes}, 0.05, 0.95);
    Tensor reg({anchors, 4});
    for (int a = 0; a < anchors; ++a) {
      const BoxOffsets& o = targets.offsets[static_cast<size_t>(a)];
      const double base[4] = {o.tx, o.ty, o.tw, o.th};
      for (int c = 0; c < 4; ++c) {
        // keep a margin from the |.| kink so the two-sided probe is smooth
        const double off = rng.uniform(0.1, 0.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        reg.ptr()[a * 4 + c] = base[c] + off;
      }
    }
    std::map<std::string, Tensor> leaves{{"cls", cls}, {"reg", reg}};
    auto program = [&targets, &params](GradientTape*, const std::map<std::string, Tensor>& p) {
      return detection_loss(p.at("cls"), p.at("reg"), targets, params);
    };
    const auto report = finite_diff_check(program, leaves, cfg.h);
    result.max_rel_err = std::max(result.max_rel_err, report.max_rel_err);
    if (report.max_rel_err >= cfg.tolerance) {
      result.failures.push_back("loss instance " + std::to_string(inst) + " rel err " +
                                std::to_string(report.max_rel_err));
    }
    ++result.loss_instances_checked;
  }

  result.passed = result.failures.empty();
  return result;
}

}  // namespace deeva
