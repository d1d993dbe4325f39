#include "avl/autograd.hpp"

#include <cmath>
#include <limits>

#include "avl/errors.hpp"

namespace avl::ad {

const Mat& Var::value() const { return tape->val(id); }

const Mat& Var::grad() const {
  const auto& n = tape->nodes_[static_cast<std::size_t>(id)];
  return n.has_grad ? n.grad : tape->empty_;
}

Mat& Tape::acc(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    const Mat& v = val(id);
    n.grad = Mat::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::push(Mat value, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Mat value) { return push(std::move(value), nullptr); }

Var Tape::param(const Mat& value, Mat* grad_sink) {
  Node n;
  n.ref = &value;
  n.sink = grad_sink;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

namespace {
void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(std::string("autograd ") + op + ": shape mismatch");
  }
}
}  // namespace

Var Tape::matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw UsageError("autograd matmul: inner dimension mismatch");
  const int out = static_cast<int>(nodes_.size());
  return push(a.value() * b.value(), [this, a, b, out] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    acc(a.id).noalias() += g * val(b.id).transpose();
    acc(b.id).noalias() += val(a.id).transpose() * g;
  });
}

Var Tape::add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  const int out = static_cast<int>(nodes_.size());
  return push(a.value() + b.value(), [this, a, b, out] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    acc(a.id) += g;
    acc(b.id) += g;
  });
}

Var Tape::add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw UsageError("autograd add_row: shape mismatch");
  const int out = static_cast<int>(nodes_.size());
  Mat v = a.value();
  v.rowwise() += row.value().row(0);
  return push(std::move(v), [this, a, row, out] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    acc(a.id) += g;
    acc(row.id) += g.colwise().sum();
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "mul");
  const int out = static_cast<int>(nodes_.size());
  return push(a.value().cwiseProduct(b.value()), [this, a, b, out] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    acc(a.id) += g.cwiseProduct(val(b.id));
    acc(b.id) += g.cwiseProduct(val(a.id));
  });
}

Var Tape::scale(Var a, double s) {
  const int out = static_cast<int>(nodes_.size());
  return push(a.value() * s, [this, a, s, out] {
    acc(a.id) += nodes_[static_cast<std::size_t>(out)].grad * s;
  });
}

Var Tape::relu(Var a) {
  const int out = static_cast<int>(nodes_.size());
  return push(a.value().cwiseMax(0.0), [this, a, out] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    acc(a.id) += (val(a.id).array() > 0.0).select(g, 0.0);
  });
}

Var Tape::layernorm(Var x, Var gain, Var bias, double eps) {
  const Mat& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw UsageError("autograd layernorm: gain/bias shape mismatch");
  }
  Mat xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std[r];
  }
  Mat y = xhat.array().rowwise() * gain.value().row(0).array();
  y.rowwise() += bias.value().row(0);
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(y), [this, x, gain, bias, out, xhat = std::move(xhat),
                             inv_std = std::move(inv_std)] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    acc(gain.id) += g.cwiseProduct(xhat).colwise().sum();
    acc(bias.id) += g.colwise().sum();
    const Mat dxhat = g.array().rowwise() * val(gain.id).row(0).array();
    Mat& dx = acc(x.id);
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      const double m1 = dxhat.row(r).mean();
      const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
      dx.row(r).array() += inv_std[r] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
    }
  });
}

namespace {
Mat softmax_of_rows(const Mat& a) {
  Mat y(a.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double m = a.row(r).maxCoeff();
    y.row(r) = (a.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}
}  // namespace

Var Tape::softmax_rows(Var a) {
  const int out = static_cast<int>(nodes_.size());
  return push(softmax_of_rows(a.value()), [this, a, out] {
    const Node& o = nodes_[static_cast<std::size_t>(out)];
    const Eigen::VectorXd dot = o.grad.cwiseProduct(o.value).rowwise().sum();
    acc(a.id) += o.value.cwiseProduct(o.grad.colwise() - dot);
  });
}

Var Tape::attention(Var q, Var k, Var v, const Mask& key_mask) {
  const Mat& qv = q.value();
  const Mat& kv = k.value();
  const Mat& vv = v.value();
  if (qv.cols() != kv.cols() || kv.rows() != vv.rows() ||
      key_mask.size() != static_cast<std::size_t>(kv.rows())) {
    throw UsageError("autograd attention: shape mismatch");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
  // Scores over real keys only; masked columns get probability exactly 0.
  Mat p = (qv * kv.transpose()) * inv_sqrt_d;
  bool any = false;
  for (std::size_t j = 0; j < key_mask.size(); ++j) {
    if (!key_mask[j]) {
      p.col(static_cast<Eigen::Index>(j)).setConstant(-std::numeric_limits<double>::infinity());
    } else {
      any = true;
    }
  }
  if (!any) throw UsageError("autograd attention: no real keys");
  p = softmax_of_rows(p);
  Mat y = p * vv;
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(y), [this, q, k, v, out, p = std::move(p), inv_sqrt_d] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    const Mat dp = g * val(v.id).transpose();
    acc(v.id).noalias() += p.transpose() * g;
    const Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
    const Mat ds = p.cwiseProduct(dp.colwise() - dot) * inv_sqrt_d;
    acc(q.id).noalias() += ds * val(k.id);
    acc(k.id).noalias() += ds.transpose() * val(q.id);
  });
}

Var Tape::masked_mean_rows(Var x, const Mask& mask) {
  const Mat& xv = x.value();
  if (mask.size() != static_cast<std::size_t>(xv.rows())) {
    throw UsageError("autograd masked_mean_rows: mask length mismatch");
  }
  Mat m = Mat::Zero(1, xv.cols());
  int count = 0;
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    if (mask[static_cast<std::size_t>(r)]) {
      m += xv.row(r);
      ++count;
    }
  }
  if (count == 0) throw UsageError("autograd masked_mean_rows: no real rows");
  m /= count;
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(m), [this, x, mask, count, out] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    Mat& dx = acc(x.id);
    for (Eigen::Index r = 0; r < dx.rows(); ++r) {
      if (mask[static_cast<std::size_t>(r)]) dx.row(r) += g.row(0) / count;
    }
  });
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& labels) {
  const Mat& z = logits.value();
  if (labels.size() != static_cast<std::size_t>(z.rows())) {
    throw UsageError("autograd cross_entropy: one label per row required");
  }
  Mat p = softmax_of_rows(z);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw UsageError("autograd cross_entropy: label out of range");
    // log-sum-exp form for accuracy at confident logits.
    const double m = z.row(r).maxCoeff();
    loss += (m + std::log((z.row(r).array() - m).exp().sum())) - z(r, y);
  }
  const double n = static_cast<double>(z.rows());
  Mat l(1, 1);
  l(0, 0) = loss / n;
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(l), [this, logits, labels, out, p = std::move(p), n] {
    const double g = nodes_[static_cast<std::size_t>(out)].grad(0, 0);
    Mat d = p;
    for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
    acc(logits.id) += d * (g / n);
  });
}

Var Tape::sum(Var a) {
  Mat s(1, 1);
  s(0, 0) = a.value().sum();
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(s), [this, a, out] {
    acc(a.id).array() += nodes_[static_cast<std::size_t>(out)].grad(0, 0);
  });
}

Var Tape::slice_cols(Var a, Eigen::Index first, Eigen::Index count) {
  if (first < 0 || count < 0 || first + count > a.cols()) throw UsageError("autograd slice_cols: out of range");
  const int out = static_cast<int>(nodes_.size());
  return push(a.value().middleCols(first, count), [this, a, first, count, out] {
    acc(a.id).middleCols(first, count) += nodes_[static_cast<std::size_t>(out)].grad;
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("autograd concat_cols: nothing to concatenate");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw UsageError("autograd concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  const int out = static_cast<int>(nodes_.size());
  return push(std::move(v), [this, parts, out] {
    const Mat& g = nodes_[static_cast<std::size_t>(out)].grad;
    Eigen::Index c0 = 0;
    for (const Var& p : parts) {
      const Eigen::Index w = val(p.id).cols();
      acc(p.id) += g.middleCols(c0, w);
      c0 += w;
    }
  });
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("autograd backward: variable from another tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw UsageError("autograd backward: loss must be scalar");
  acc(loss.id).setConstant(1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.back) n.back();
    if (n.sink) *n.sink += n.grad;
  }
}

}  // namespace avl::ad
