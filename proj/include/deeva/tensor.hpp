#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace deeva {

class GradientTape;

// Dense n-d array of 64-bit floats, row-major; image tensors are NCHW.
// A tensor is frozen once built — ops return new tensors. When node >= 0 the
// value is recorded on `tape` and participates in backward().
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  int node = -1;
  GradientTape* tape = nullptr;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> v);

  int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  const double* ptr() const { return data->data(); }
  double* ptr() { return data->data(); }
  const std::vector<double>& values() const { return *data; }

  // Value of a one-element tensor.
  double scalar() const;

  static Tensor scalar_of(double v) { return Tensor({1}, {v}); }
};

int64_t shape_size(const std::vector<int>& s);
std::string shape_str(const std::vector<int>& s);

// Records an op DAG as it is built. Nodes are appended in construction order,
// so the reverse of that order is a valid reverse-topological replay. One tape
// per training worker; a tape is never shared across threads.
class GradientTape {
 public:
  GradientTape() = default;
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  // Registers a leaf under a unique name; returns the tape-bound view.
  Tensor watch(const Tensor& t, const std::string& name);

  // Gradients of a one-element loss w.r.t. every watched leaf. Leaves with no
  // path to the loss get zero gradients. Resets accumulated state first, so
  // repeated calls replay identically.
  std::map<std::string, Tensor> gradients(const Tensor& loss);

  // --- op machinery ---------------------------------------------------
  // backward receives this node's accumulated gradient and adds each parent's
  // contribution into grad_slot(parent).
  using BackwardFn =
      std::function<void(const std::vector<double>& grad_out, GradientTape&)>;

  int add_node(int64_t out_size, std::vector<int> parents, BackwardFn backward);

  // Gradient accumulator for a node, zero-initialized on first touch.
  std::vector<double>& grad_slot(int node);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int64_t size;
    std::vector<int> parents;
    BackwardFn backward;
  };
  struct Leaf {
    std::string name;
    int node;
    std::vector<int> shape;
  };
  std::vector<Node> nodes_;
  std::vector<Leaf> leaves_;
  std::vector<std::vector<double>> grads_;
};

enum class Activation { kRelu, kSigmoid };
enum class PoolKind { kMaxPool2, kUpsampleNearest2, kGlobalAvg };

// input NCHW, kernel [out_ch, in_ch, kh, kw], bias [out_ch]; zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int pad);

Tensor activation(const Tensor& x, Activation kind);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor pool_or_resample(const Tensor& x, PoolKind kind);
Tensor maxpool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);
Tensor global_avg(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor sum_all(const Tensor& x);  // one-element result
Tensor reshape(const Tensor& x, std::vector<int> shape);

// out[i] = inputs[src_tensor[i]].data[src_index[i]]; gradient scatter-adds.
Tensor gather_concat(const std::vector<Tensor>& inputs,
                     const std::vector<int32_t>& src_tensor,
                     const std::vector<int64_t>& src_index,
                     std::vector<int> out_shape);

// --- finite-difference verification ------------------------------------
// A program maps named parameters to a one-element loss. With a tape it must
// route the watched tensors through its ops; with tape == nullptr it runs
// plain (used for the +/- h probes).
using ScalarProgram = std::function<Tensor(
    GradientTape* tape, const std::map<std::string, Tensor>& params)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::vector<GradCheckEntry> per_param;
};

// Central differences (f(p+h)-f(p-h))/2h against tape gradients; relative
// error denominator max(|a|, |b|, 1e-12).
GradCheckReport finite_diff_check(const ScalarProgram& fn,
                                  const std::map<std::string, Tensor>& params,
                                  double h);

}  // namespace deeva
