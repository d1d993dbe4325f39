#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

// Reverse-mode differentiation over dense matrices. A Tape records one
// forward pass; backward() replays it in reverse.
namespace avl::ad {

using Mat = Eigen::MatrixXd;
using Mask = std::vector<std::uint8_t>;  // 1 = real row

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  // Zero-shaped until backward() reaches this node.
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  // Leaf bound to external storage; backward() adds its gradient into
  // `grad_sink` when non-null. `value` must outlive the tape.
  Var param(const Mat& value, Mat* grad_sink = nullptr);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // row (1 x n) broadcast over a's rows
  Var mul(Var a, Var b);        // elementwise
  Var scale(Var a, double s);
  Var relu(Var a);
  // Row-wise normalization with affine gain and bias rows (1 x n).
  Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var softmax_rows(Var a);
  // softmax(q k^T / sqrt(d) restricted to real keys) v.
  Var attention(Var q, Var k, Var v, const Mask& key_mask);
  // Mean over real rows, 1 x n. Requires at least one real row.
  Var masked_mean_rows(Var x, const Mask& mask);
  // Mean over rows of -log softmax(logits)[label], 1 x 1.
  Var cross_entropy(Var logits, const std::vector<int>& labels);
  Var sum(Var a);
  Var slice_cols(Var a, Eigen::Index first, Eigen::Index count);
  Var concat_cols(const std::vector<Var>& parts);

  // Throws UsageError unless `loss` is 1 x 1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend struct Var;

  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool has_grad = false;
    Mat* sink = nullptr;
    std::function<void()> back;
  };

  const Mat& val(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }
  // Gradient accumulator of node id, zero-initialized on first use.
  Mat& acc(int id);
  Var push(Mat value, std::function<void()> back);

  std::vector<Node> nodes_;
  Mat empty_;
};

}  // namespace avl::ad
