#include "deeva/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace deeva {

int64_t shape_size(const std::vector<int>& s) {
  int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)) {
  data = std::make_shared<std::vector<double>>(static_cast<size_t>(shape_size(shape)), fill);
}

Tensor::Tensor(std::vector<int> s, std::vector<double> v) : shape(std::move(s)) {
  if (shape_size(shape) != static_cast<int64_t>(v.size())) {
    throw std::invalid_argument("tensor data length " + std::to_string(v.size()) +
                                " does not match shape " + shape_str(shape));
  }
  data = std::make_shared<std::vector<double>>(std::move(v));
}

double Tensor::scalar() const {
  if (size() != 1) {
    throw std::invalid_argument("expected one-element tensor, got shape " + shape_str(shape));
  }
  return (*data)[0];
}

// ---------------------------------------------------------------------------
// GradientTape

Tensor GradientTape::watch(const Tensor& t, const std::string& name) {
  for (const auto& l : leaves_) {
    if (l.name == name) throw std::invalid_argument("duplicate watched name: " + name);
  }
  Tensor out = t;
  out.tape = this;
  out.node = add_node(t.size(), {}, nullptr);
  leaves_.push_back({name, out.node, out.shape});
  return out;
}

int GradientTape::add_node(int64_t out_size, std::vector<int> parents, BackwardFn backward) {
  nodes_.push_back({out_size, std::move(parents), std::move(backward)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& GradientTape::grad_slot(int node) {
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].size), 0.0);
  return g;
}

std::map<std::string, Tensor> GradientTape::gradients(const Tensor& loss) {
  if (loss.tape != this || loss.node < 0) {
    throw std::invalid_argument("loss was not recorded on this tape");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("loss must be a single scalar, got shape " + shape_str(loss.shape));
  }
  grads_.assign(nodes_.size(), {});
  grad_slot(loss.node)[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (grads_[static_cast<size_t>(i)].empty()) continue;  // not on any path
    if (n.backward) n.backward(grads_[static_cast<size_t>(i)], *this);
  }
  std::map<std::string, Tensor> out;
  for (const auto& l : leaves_) {
    const auto& g = grads_[static_cast<size_t>(l.node)];
    Tensor t(l.shape, 0.0);
    if (!g.empty()) std::copy(g.begin(), g.end(), t.ptr());
    out.emplace(l.name, std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// op helpers

namespace {

GradientTape* tape_of(std::initializer_list<const Tensor*> ts) {
  GradientTape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (t->node < 0) continue;
    if (tape && t->tape != tape) throw std::invalid_argument("inputs recorded on different tapes");
    tape = t->tape;
  }
  return tape;
}

void accumulate(GradientTape& tape, int node, const std::vector<double>& contrib) {
  auto& slot = tape.grad_slot(node);
  for (size_t i = 0; i < contrib.size(); ++i) slot[i] += contrib[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad) {
  if (input.shape.size() != 4 || kernel.shape.size() != 4 || bias.shape.size() != 1) {
    throw std::invalid_argument("conv2d expects input NCHW " + shape_str(input.shape) +
                                ", kernel [O,C,kh,kw] " + shape_str(kernel.shape) +
                                ", bias [O] " + shape_str(bias.shape));
  }
  const int n_batch = input.dim(0), in_ch = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  const int out_ch = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kc != in_ch) {
    throw std::invalid_argument("conv2d channel mismatch: input " + shape_str(input.shape) +
                                " vs kernel " + shape_str(kernel.shape));
  }
  if (bias.dim(0) != out_ch) {
    throw std::invalid_argument("conv2d bias " + shape_str(bias.shape) + " vs kernel out " +
                                std::to_string(out_ch));
  }
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d needs stride >= 1 and pad >= 0");
  const int out_h = (in_h + 2 * pad - kh) / stride + 1;
  const int out_w = (in_w + 2 * pad - kw) / stride + 1;
  if (in_h + 2 * pad < kh || in_w + 2 * pad < kw || out_h < 1 || out_w < 1) {
    throw std::invalid_argument("conv2d output would be empty: input " + shape_str(input.shape) +
                                " kernel " + shape_str(kernel.shape) + " stride " +
                                std::to_string(stride) + " pad " + std::to_string(pad));
  }

  Tensor out({n_batch, out_ch, out_h, out_w});
  const double* in = input.ptr();
  const double* ker = kernel.ptr();
  const double* b = bias.ptr();
  double* o = out.ptr();

  // Per-output accumulation runs over (c,i,j) in ascending order; the inner
  // loop is over x so independent accumulators vectorize.
  for (int n = 0; n < n_batch; ++n) {
    for (int oc = 0; oc < out_ch; ++oc) {
      double* out_plane = o + (static_cast<int64_t>(n) * out_ch + oc) * out_h * out_w;
      const double* ker_oc = ker + static_cast<int64_t>(oc) * kc * kh * kw;
      for (int y = 0; y < out_h; ++y) {
        double* row = out_plane + static_cast<int64_t>(y) * out_w;
        for (int x = 0; x < out_w; ++x) row[x] = b[oc];
        for (int c = 0; c < in_ch; ++c) {
          const double* in_plane = in + (static_cast<int64_t>(n) * in_ch + c) * in_h * in_w;
          for (int i = 0; i < kh; ++i) {
            const int iy = y * stride + i - pad;
            if (iy < 0 || iy >= in_h) continue;
            const double* in_row = in_plane + static_cast<int64_t>(iy) * in_w;
            for (int j = 0; j < kw; ++j) {
              const double w = ker_oc[(static_cast<int64_t>(c) * kh + i) * kw + j];
              // x range keeping ix = x*stride + j - pad inside [0, in_w)
              int x_lo = 0;
              if (j < pad) x_lo = (pad - j + stride - 1) / stride;
              int x_hi = std::min(out_w, (in_w - 1 - j + pad) / stride + 1);
              const double* src = in_row + static_cast<int64_t>(x_lo) * stride + j - pad;
              if (stride == 1) {
                for (int x = x_lo; x < x_hi; ++x) row[x] += w * src[x - x_lo];
              } else {
                for (int x = x_lo; x < x_hi; ++x) row[x] += w * src[static_cast<int64_t>(x - x_lo) * stride];
              }
            }
          }
        }
      }
    }
  }

  GradientTape* tape = tape_of({&input, &kernel, &bias});
  if (tape) {
    auto in_shape = input.shape;
    auto ker_shape = kernel.shape;
    auto in_data = input.data;
    auto ker_data = kernel.data;
    const int in_node = input.node, ker_node = kernel.node, bias_node = bias.node;
    std::vector<int> parents;
    for (int p : {in_node, ker_node, bias_node})
      if (p >= 0) parents.push_back(p);
    out.tape = tape;
    out.node = tape->add_node(
        out.size(), parents,
        [=](const std::vector<double>& g, GradientTape& t) {
          const double* gin = g.data();
          const double* inp = in_data->data();
          const double* kerp = ker_data->data();
          if (bias_node >= 0) {
            auto& gb = t.grad_slot(bias_node);
            for (int n = 0; n < n_batch; ++n)
              for (int oc = 0; oc < out_ch; ++oc) {
                const double* gp = gin + (static_cast<int64_t>(n) * out_ch + oc) * out_h * out_w;
                double s = 0.0;
                for (int64_t k = 0; k < static_cast<int64_t>(out_h) * out_w; ++k) s += gp[k];
                gb[static_cast<size_t>(oc)] += s;
              }
          }
          if (ker_node >= 0) {
            auto& gk = t.grad_slot(ker_node);
            for (int oc = 0; oc < out_ch; ++oc) {
              for (int c = 0; c < in_ch; ++c) {
                for (int i = 0; i < kh; ++i) {
                  for (int j = 0; j < kw; ++j) {
                    double s = 0.0;
                    for (int n = 0; n < n_batch; ++n) {
                      const double* gp = gin + (static_cast<int64_t>(n) * out_ch + oc) * out_h * out_w;
                      const double* ip = inp + (static_cast<int64_t>(n) * in_ch + c) * in_h * in_w;
                      for (int y = 0; y < out_h; ++y) {
                        const int iy = y * stride + i - pad;
                        if (iy < 0 || iy >= in_h) continue;
                        int x_lo = 0;
                        if (j < pad) x_lo = (pad - j + stride - 1) / stride;
                        int x_hi = std::min(out_w, (in_w - 1 - j + pad) / stride + 1);
                        const double* grow = gp + static_cast<int64_t>(y) * out_w;
                        const double* irow = ip + static_cast<int64_t>(iy) * in_w + j - pad;
                        for (int x = x_lo; x < x_hi; ++x)
                          s += grow[x] * irow[static_cast<int64_t>(x) * stride];
                      }
                    }
                    gk[((static_cast<size_t>(oc) * in_ch + c) * kh + i) * kw + j] += s;
                  }
                }
              }
            }
          }
          if (in_node >= 0) {
            auto& gi = t.grad_slot(in_node);
            for (int n = 0; n < n_batch; ++n) {
              for (int oc = 0; oc < out_ch; ++oc) {
                const double* gp = gin + (static_cast<int64_t>(n) * out_ch + oc) * out_h * out_w;
                const double* ker_oc = kerp + static_cast<int64_t>(oc) * in_ch * kh * kw;
                for (int c = 0; c < in_ch; ++c) {
                  double* gip = gi.data() + (static_cast<int64_t>(n) * in_ch + c) * in_h * in_w;
                  for (int y = 0; y < out_h; ++y) {
                    const double* grow = gp + static_cast<int64_t>(y) * out_w;
                    for (int i = 0; i < kh; ++i) {
                      const int iy = y * stride + i - pad;
                      if (iy < 0 || iy >= in_h) continue;
                      double* girow = gip + static_cast<int64_t>(iy) * in_w;
                      for (int j = 0; j < kw; ++j) {
                        const double w = ker_oc[(static_cast<int64_t>(c) * kh + i) * kw + j];
                        int x_lo = 0;
                        if (j < pad) x_lo = (pad - j + stride - 1) / stride;
                        int x_hi = std::min(out_w, (in_w - 1 - j + pad) / stride + 1);
                        double* dst = girow + static_cast<int64_t>(x_lo) * stride + j - pad;
                        if (stride == 1) {
                          for (int x = x_lo; x < x_hi; ++x) dst[x - x_lo] += w * grow[x];
                        } else {
                          for (int x = x_lo; x < x_hi; ++x)
                            dst[static_cast<int64_t>(x - x_lo) * stride] += w * grow[x];
                        }
                      }
                    }
                  }
                }
              }
            }
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out(x.shape);
  const double* in = x.ptr();
  double* o = out.ptr();
  const int64_t n = x.size();
  if (kind == Activation::kRelu) {
    for (int64_t i = 0; i < n; ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  } else {
    for (int64_t i = 0; i < n; ++i) o[i] = 1.0 / (1.0 + std::exp(-in[i]));
  }
  GradientTape* tape = tape_of({&x});
  if (tape) {
    const int parent = x.node;
    auto saved = (kind == Activation::kRelu) ? x.data : out.data;
    out.tape = tape;
    out.node = tape->add_node(n, {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      auto& gp = t.grad_slot(parent);
      const double* s = saved->data();
      if (kind == Activation::kRelu) {
        for (int64_t i = 0; i < n; ++i) gp[static_cast<size_t>(i)] += s[i] > 0.0 ? g[static_cast<size_t>(i)] : 0.0;
      } else {
        for (int64_t i = 0; i < n; ++i) gp[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * s[i] * (1.0 - s[i]);
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) { return activation(x, Activation::kRelu); }
Tensor sigmoid(const Tensor& x) { return activation(x, Activation::kSigmoid); }

// ---------------------------------------------------------------------------
// pooling / resampling

namespace {

void require_nchw(const Tensor& x, const char* op) {
  if (x.shape.size() != 4) {
    throw std::invalid_argument(std::string(op) + " expects NCHW, got " + shape_str(x.shape));
  }
}

}  // namespace

Tensor maxpool2(const Tensor& x) {
  require_nchw(x, "maxpool2");
  const int n_batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2 requires even spatial extents >= 2, got " + shape_str(x.shape));
  }
  const int oh = h / 2, ow = w / 2;
  Tensor out({n_batch, ch, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.size()));
  const double* in = x.ptr();
  double* o = out.ptr();
  int64_t oi = 0;
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < ch; ++c) {
      const double* plane = in + (static_cast<int64_t>(n) * ch + c) * h * w;
      const int64_t plane_off = (static_cast<int64_t>(n) * ch + c) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int x2 = 0; x2 < ow; ++x2, ++oi) {
          // first max in scan order wins, for a deterministic argmax
          int64_t best = static_cast<int64_t>(2 * y) * w + 2 * x2;
          double bv = plane[best];
          const int64_t cand[3] = {best + 1, best + w, best + w + 1};
          for (int64_t k : cand) {
            if (plane[k] > bv) {
              bv = plane[k];
              best = k;
            }
          }
          o[oi] = bv;
          (*argmax)[static_cast<size_t>(oi)] = plane_off + best;
        }
      }
    }
  }
  GradientTape* tape = tape_of({&x});
  if (tape) {
    const int parent = x.node;
    const int64_t n = out.size();
    out.tape = tape;
    out.node = tape->add_node(n, {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      auto& gp = t.grad_slot(parent);
      for (int64_t i = 0; i < n; ++i) gp[static_cast<size_t>((*argmax)[static_cast<size_t>(i)])] += g[static_cast<size_t>(i)];
    });
  }
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  require_nchw(x, "upsample_nearest2");
  const int n_batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * 2, ow = w * 2;
  Tensor out({n_batch, ch, oh, ow});
  const double* in = x.ptr();
  double* o = out.ptr();
  for (int nc = 0; nc < n_batch * ch; ++nc) {
    const double* plane = in + static_cast<int64_t>(nc) * h * w;
    double* oplane = o + static_cast<int64_t>(nc) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const double* src = plane + static_cast<int64_t>(y / 2) * w;
      double* dst = oplane + static_cast<int64_t>(y) * ow;
      for (int x2 = 0; x2 < ow; ++x2) dst[x2] = src[x2 / 2];
    }
  }
  GradientTape* tape = tape_of({&x});
  if (tape) {
    const int parent = x.node;
    out.tape = tape;
    out.node = tape->add_node(out.size(), {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      auto& gp = t.grad_slot(parent);
      for (int nc = 0; nc < n_batch * ch; ++nc) {
        const double* gplane = g.data() + static_cast<int64_t>(nc) * oh * ow;
        double* dst = gp.data() + static_cast<int64_t>(nc) * h * w;
        for (int y = 0; y < h; ++y) {
          for (int x2 = 0; x2 < w; ++x2) {
            const double* g0 = gplane + static_cast<int64_t>(2 * y) * ow + 2 * x2;
            dst[static_cast<int64_t>(y) * w + x2] += g0[0] + g0[1] + g0[ow] + g0[ow + 1];
          }
        }
      }
    });
  }
  return out;
}

Tensor global_avg(const Tensor& x) {
  require_nchw(x, "global_avg");
  const int n_batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n_batch, ch, 1, 1});
  const double* in = x.ptr();
  double* o = out.ptr();
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int nc = 0; nc < n_batch * ch; ++nc) {
    const double* plane = in + static_cast<int64_t>(nc) * h * w;
    double s = 0.0;
    for (int64_t k = 0; k < static_cast<int64_t>(h) * w; ++k) s += plane[k];
    o[nc] = s * inv;
  }
  GradientTape* tape = tape_of({&x});
  if (tape) {
    const int parent = x.node;
    out.tape = tape;
    out.node = tape->add_node(out.size(), {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      auto& gp = t.grad_slot(parent);
      for (int nc = 0; nc < n_batch * ch; ++nc) {
        const double gv = g[static_cast<size_t>(nc)] * inv;
        double* dst = gp.data() + static_cast<int64_t>(nc) * h * w;
        for (int64_t k = 0; k < static_cast<int64_t>(h) * w; ++k) dst[k] += gv;
      }
    });
  }
  return out;
}

Tensor pool_or_resample(const Tensor& x, PoolKind kind) {
  switch (kind) {
    case PoolKind::kMaxPool2: return maxpool2(x);
    case PoolKind::kUpsampleNearest2: return upsample_nearest2(x);
    case PoolKind::kGlobalAvg: return global_avg(x);
  }
  throw std::invalid_argument("unknown pool kind");
}

// ---------------------------------------------------------------------------
// elementwise / shape plumbing

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw std::invalid_argument("add shape mismatch: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  }
  Tensor out(a.shape);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* o = out.ptr();
  const int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) o[i] = pa[i] + pb[i];
  GradientTape* tape = tape_of({&a, &b});
  if (tape) {
    const int na = a.node, nb = b.node;
    std::vector<int> parents;
    for (int p : {na, nb})
      if (p >= 0) parents.push_back(p);
    out.tape = tape;
    out.node = tape->add_node(n, parents, [=](const std::vector<double>& g, GradientTape& t) {
      if (na >= 0) accumulate(t, na, g);
      if (nb >= 0) accumulate(t, nb, g);
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape);
  const double* in = x.ptr();
  double* o = out.ptr();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) o[i] = in[i] * c;
  GradientTape* tape = tape_of({&x});
  if (tape) {
    const int parent = x.node;
    out.tape = tape;
    out.node = tape->add_node(n, {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      auto& gp = t.grad_slot(parent);
      for (int64_t i = 0; i < n; ++i) gp[static_cast<size_t>(i)] += g[static_cast<size_t>(i)] * c;
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  const double* in = x.ptr();
  const int64_t n = x.size();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += in[i];
  Tensor out({1}, {s});
  GradientTape* tape = tape_of({&x});
  if (tape) {
    const int parent = x.node;
    out.tape = tape;
    out.node = tape->add_node(1, {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      auto& gp = t.grad_slot(parent);
      for (int64_t i = 0; i < n; ++i) gp[static_cast<size_t>(i)] += g[0];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (shape_size(shape) != x.size()) {
    throw std::invalid_argument("reshape " + shape_str(x.shape) + " -> " + shape_str(shape) +
                                " changes element count");
  }
  Tensor out;
  out.shape = std::move(shape);
  out.data = x.data;
  GradientTape* tape = tape_of({&x});
  if (tape) {
    const int parent = x.node;
    out.tape = tape;
    out.node = tape->add_node(x.size(), {parent}, [=](const std::vector<double>& g, GradientTape& t) {
      accumulate(t, parent, g);
    });
  }
  return out;
}

Tensor gather_concat(const std::vector<Tensor>& inputs,
                     const std::vector<int32_t>& src_tensor,
                     const std::vector<int64_t>& src_index,
                     std::vector<int> out_shape) {
  if (src_tensor.size() != src_index.size()) {
    throw std::invalid_argument("gather_concat index arrays disagree in length");
  }
  if (shape_size(out_shape) != static_cast<int64_t>(src_index.size())) {
    throw std::invalid_argument("gather_concat output shape " + shape_str(out_shape) +
                                " does not match index count " + std::to_string(src_index.size()));
  }
  Tensor out(std::move(out_shape));
  double* o = out.ptr();
  for (size_t i = 0; i < src_index.size(); ++i) {
    const auto& t = inputs[static_cast<size_t>(src_tensor[i])];
    o[i] = (*t.data)[static_cast<size_t>(src_index[i])];
  }
  GradientTape* tape = nullptr;
  for (const auto& t : inputs) {
    GradientTape* tt = tape_of({&t});
    if (tt) {
      if (tape && tape != tt) throw std::invalid_argument("inputs recorded on different tapes");
      tape = tt;
    }
  }
  if (tape) {
    std::vector<int> nodes(inputs.size());
    std::vector<int> parents;
    for (size_t i = 0; i < inputs.size(); ++i) {
      nodes[i] = inputs[i].node;
      if (nodes[i] >= 0) parents.push_back(nodes[i]);
    }
    auto st = std::make_shared<std::vector<int32_t>>(src_tensor);
    auto si = std::make_shared<std::vector<int64_t>>(src_index);
    out.tape = tape;
    out.node = tape->add_node(out.size(), parents, [=](const std::vector<double>& g, GradientTape& t) {
      for (size_t i = 0; i < si->size(); ++i) {
        const int pn = nodes[static_cast<size_t>((*st)[i])];
        if (pn < 0) continue;
        t.grad_slot(pn)[static_cast<size_t>((*si)[i])] += g[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// finite differences

GradCheckReport finite_diff_check(const ScalarProgram& fn,
                                  const std::map<std::string, Tensor>& params,
                                  double h) {
  GradientTape tape;
  std::map<std::string, Tensor> watched;
  for (const auto& [name, p] : params) watched.emplace(name, tape.watch(p, name));
  Tensor loss = fn(&tape, watched);
  auto analytic = tape.gradients(loss);

  GradCheckReport report;
  for (const auto& [name, p] : params) {
    const auto& grad = analytic.at(name);
    double worst = 0.0;
    for (int64_t k = 0; k < p.size(); ++k) {
      auto probe = [&](double delta) {
        std::map<std::string, Tensor> shifted = params;
        Tensor q(p.shape, *p.data);
        (*q.data)[static_cast<size_t>(k)] += delta;
        shifted.at(name) = q;
        return fn(nullptr, shifted).scalar();
      };
      const double fd = (probe(h) - probe(-h)) / (2.0 * h);
      const double a = grad.values()[static_cast<size_t>(k)];
      const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-12});
      worst = std::max(worst, std::fabs(a - fd) / denom);
    }
    report.per_param.push_back({name, worst});
    report.max_rel_err = std::max(report.max_rel_err, worst);
  }
  return report;
}

}  // namespace deeva
