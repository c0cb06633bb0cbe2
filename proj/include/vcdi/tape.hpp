#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vcdi/mat.hpp"
#include "vcdi/param_store.hpp"

namespace vcdi {

struct TapeValue {
  std::size_t id = static_cast<std::size_t>(-1);
};

// Eagerly evaluated reverse-mode differentiation tape over Mat values.
//
// Every operation computes its result immediately, records a backward closure,
// and checks the result for non-finite entries (throwing NumericError with the
// offending node's name). Reductions and accumulations run in index order, so
// repeated evaluation of the same graph is bit-identical.
//
// Masked-attention convention: masked logits are excluded as if set to -1e9
// before normalization; a row with every position masked produces a zero
// output row instead of NaN.
class Tape {
 public:
  Tape() { nodes_.reserve(1024); }

  // Leaves.
  TapeValue input(Mat v, const std::string& name = "input");
  // Leaf bound to a ParamStore entry; backward() accumulates into store.grad.
  TapeValue param(ParamStore& store, const std::string& name);

  // Elementwise arithmetic (shapes must match).
  TapeValue add(TapeValue a, TapeValue b);
  TapeValue sub(TapeValue a, TapeValue b);
  TapeValue mul(TapeValue a, TapeValue b);
  TapeValue div(TapeValue a, TapeValue b);
  TapeValue scale(TapeValue a, double s);
  TapeValue add_scalar(TapeValue a, double s);

  // Linear algebra.
  TapeValue matmul(TapeValue a, TapeValue b);
  TapeValue transpose(TapeValue a);
  // y = x * w + b with x [m x k], w [k x n], b [1 x n].
  TapeValue affine(TapeValue x, TapeValue w, TapeValue b);

  // Elementwise nonlinearities.
  TapeValue tanh_op(TapeValue a);
  TapeValue sigmoid_op(TapeValue a);
  TapeValue relu_op(TapeValue a);
  TapeValue softplus_op(TapeValue a);
  TapeValue exp_op(TapeValue a);
  TapeValue log_op(TapeValue a);
  TapeValue sqrt_op(TapeValue a);
  TapeValue square_op(TapeValue a);
  // Unit-delta Huber kernel: 0.5*x^2 for |x| <= 1, |x| - 0.5 otherwise.
  TapeValue huber_op(TapeValue a);
  TapeValue atan2_op(TapeValue y, TapeValue x);
  // Wrap into (-pi, pi]; gradient is the identity away from the branch point.
  TapeValue wrap_angle_op(TapeValue a);

  // Structure.
  TapeValue concat_cols(const std::vector<TapeValue>& parts);
  TapeValue concat_rows(const std::vector<TapeValue>& parts);
  TapeValue slice_rows(TapeValue a, std::size_t r0, std::size_t r1);
  TapeValue slice_cols(TapeValue a, std::size_t c0, std::size_t c1);

  // Reductions.
  TapeValue sum_all(TapeValue a);
  TapeValue mean_all(TapeValue a);

  // Row-wise softmax; `allow` entries are 1.0 (attend) or 0.0 (masked).
  TapeValue softmax_rows(TapeValue a);
  TapeValue masked_softmax_rows(TapeValue a, Mat allow);

  TapeValue layer_norm_rows(TapeValue x, TapeValue gamma, TapeValue beta);

  // Elementwise product with a constant (mask gating).
  TapeValue mul_mask(TapeValue a, Mat m);

  // Column-wise max over each consecutive block of `group` rows, restricted
  // to rows whose mask entry (rows x 1, values 0/1) is nonzero. Blocks with
  // no unmasked row yield a zero output row. Gradient routes to the earliest
  // row attaining the per-column max.
  TapeValue rowgroup_max(TapeValue a, Mat mask, std::size_t group);

  // Rows hold interleaved (x, y) pairs over time; output is the cumulative
  // sum of the pairs along the row. Used to turn per-step displacements into
  // positions.
  TapeValue cumsum_pairs_rows(TapeValue a);

  // Weighted sum over rows of (log-sum-exp(row) - row[target]). Rows with
  // target < 0 are skipped. Returns a 1x1 scalar.
  TapeValue cross_entropy_rows(TapeValue logits, std::vector<int> targets,
                               std::vector<double> row_weights);

  // Escape hatch for tests: append a node with an arbitrary value and
  // backward closure.
  TapeValue raw_node(Mat value, const std::string& op,
                     std::function<void(Tape&)> backward);

  const Mat& value(TapeValue v) const { return nodes_[v.id].value; }
  Mat& grad_of(TapeValue v) { return nodes_[v.id].grad; }
  double scalar(TapeValue v) const;
  std::string node_name(TapeValue v) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Reverse sweep from a 1x1 root. Parameter gradients are accumulated into
  // their bound stores. One backward pass per tape.
  void backward(TapeValue root);

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> back;
    std::string op;
  };
  struct ParamBinding {
    std::size_t node_id;
    ParamStore* store;
    std::string name;
  };

  TapeValue push(Mat value, const std::string& op,
                 std::function<void(Tape&)> back);
  void check_finite(const Mat& m, const std::string& name) const;
  Node& node(std::size_t id) { return nodes_[id]; }

  std::vector<Node> nodes_;
  std::vector<ParamBinding> bindings_;
  bool backward_done_ = false;
};

}  // namespace vcdi
