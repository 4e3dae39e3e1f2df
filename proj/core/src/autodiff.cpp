#include "detm/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace detm::ad {

const Mat& Var::value() const { return tape_->node(*this).value; }
const Mat& Var::grad() const { return tape_->node(*this).grad; }

Var Tape::make(Mat value, bool needs_grad, std::function<void()> backprop) {
  nodes_.push_back(Node{std::move(value), Mat(), needs_grad, std::move(backprop)});
  return Var(this, nodes_.size() - 1);
}

Mat& Tape::grad_buffer(std::size_t idx) {
  Node& n = nodes_[idx];
  if (n.grad.size() == 0) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

Var Tape::leaf(Mat value, bool needs_grad) {
  return make(std::move(value), needs_grad, nullptr);
}

Var Tape::scalar_constant(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return leaf(std::move(m), false);
}

static void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::runtime_error(std::string(op) + ": shape mismatch");
  }
}

Var Tape::add(Var a, Var b) {
  check_same_shape(node(a).value, node(b).value, "add");
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Mat out = node(a).value + node(b).value;
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_, bi = b.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, bi]() {
    const Mat& g = nodes_[oi].grad;
    if (nodes_[ai].needs_grad) grad_buffer(ai) += g;
    if (nodes_[bi].needs_grad) grad_buffer(bi) += g;
  };
  return v;
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(node(a).value, node(b).value, "sub");
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Mat out = node(a).value - node(b).value;
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_, bi = b.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, bi]() {
    const Mat& g = nodes_[oi].grad;
    if (nodes_[ai].needs_grad) grad_buffer(ai) += g;
    if (nodes_[bi].needs_grad) grad_buffer(bi) -= g;
  };
  return v;
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(node(a).value, node(b).value, "mul");
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Mat out = node(a).value.cwiseProduct(node(b).value);
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_, bi = b.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, bi]() {
    const Mat& g = nodes_[oi].grad;
    if (nodes_[ai].needs_grad) grad_buffer(ai) += g.cwiseProduct(nodes_[bi].value);
    if (nodes_[bi].needs_grad) grad_buffer(bi) += g.cwiseProduct(nodes_[ai].value);
  };
  return v;
}

Var Tape::matmul(Var a, Var b) {
  if (node(a).value.cols() != node(b).value.rows()) {
    throw std::runtime_error("matmul: inner dimension mismatch");
  }
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Mat out = node(a).value * node(b).value;
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_, bi = b.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, bi]() {
    const Mat& g = nodes_[oi].grad;
    if (nodes_[ai].needs_grad) grad_buffer(ai) += g * nodes_[bi].value.transpose();
    if (nodes_[bi].needs_grad) grad_buffer(bi) += nodes_[ai].value.transpose() * g;
  };
  return v;
}

Var Tape::add_rowvec(Var a, Var row) {
  if (node(row).value.rows() != 1 ||
      node(row).value.cols() != node(a).value.cols()) {
    throw std::runtime_error("add_rowvec: row shape mismatch");
  }
  const bool ng = node(a).needs_grad || node(row).needs_grad;
  Mat out = node(a).value.rowwise() + node(row).value.row(0);
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_, ri = row.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, ri]() {
    const Mat& g = nodes_[oi].grad;
    if (nodes_[ai].needs_grad) grad_buffer(ai) += g;
    if (nodes_[ri].needs_grad) grad_buffer(ri) += g.colwise().sum();
  };
  return v;
}

Var Tape::scale(Var a, double s) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value * s;
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, s]() {
    grad_buffer(ai) += nodes_[oi].grad * s;
  };
  return v;
}

Var Tape::add_const(Var a, double c) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.array() + c;
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() { grad_buffer(ai) += nodes_[oi].grad; };
  return v;
}

Var Tape::exp(Var a) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.array().exp();
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    grad_buffer(ai) += nodes_[oi].grad.cwiseProduct(nodes_[oi].value);
  };
  return v;
}

Var Tape::log(Var a) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.array().log();
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    grad_buffer(ai) += nodes_[oi].grad.cwiseQuotient(nodes_[ai].value);
  };
  return v;
}

Var Tape::square(Var a) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.array().square();
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    grad_buffer(ai) += 2.0 * nodes_[oi].grad.cwiseProduct(nodes_[ai].value);
  };
  return v;
}

Var Tape::sigmoid(Var a) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.unaryExpr([](double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                  : std::exp(x) / (1.0 + std::exp(x));
  });
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    const Mat& y = nodes_[oi].value;
    grad_buffer(ai) +=
        nodes_[oi].grad.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix()));
  };
  return v;
}

Var Tape::tanh(Var a) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.array().tanh();
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    const Mat& y = nodes_[oi].value;
    grad_buffer(ai) +=
        nodes_[oi].grad.cwiseProduct((1.0 - y.array().square()).matrix());
  };
  return v;
}

Var Tape::softplus(Var a) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.unaryExpr([](double x) {
    return x > 30.0 ? x : std::log1p(std::exp(x));
  });
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    const Mat sig = nodes_[ai].value.unaryExpr([](double x) {
      return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
    });
    grad_buffer(ai) += nodes_[oi].grad.cwiseProduct(sig);
  };
  return v;
}

Var Tape::clamp(Var a, double lo, double hi) {
  const bool ng = node(a).needs_grad;
  Mat out = node(a).value.unaryExpr(
      [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); });
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, lo, hi]() {
    const Mat mask = nodes_[ai].value.unaryExpr(
        [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    grad_buffer(ai) += nodes_[oi].grad.cwiseProduct(mask);
  };
  return v;
}

Var Tape::softmax_rows(Var a) {
  const Mat& x = node(a).value;
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  if (!node(a).needs_grad) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    const Mat& y = nodes_[oi].value;
    const Mat& g = nodes_[oi].grad;
    Mat& ga = grad_buffer(ai);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      ga.row(r) += y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
  };
  return v;
}

Var Tape::sum(Var a) {
  Mat out(1, 1);
  out(0, 0) = node(a).value.sum();
  if (!node(a).needs_grad) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai]() {
    grad_buffer(ai).array() += nodes_[oi].grad(0, 0);
  };
  return v;
}

Var Tape::concat_cols(Var a, Var b) {
  if (node(a).value.rows() != node(b).value.rows()) {
    throw std::runtime_error("concat_cols: row count mismatch");
  }
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Mat out(node(a).value.rows(), node(a).value.cols() + node(b).value.cols());
  out << node(a).value, node(b).value;
  if (!ng) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_, bi = b.idx_;
  const auto a_cols = node(a).value.cols();
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, bi, a_cols]() {
    const Mat& g = nodes_[oi].grad;
    if (nodes_[ai].needs_grad) grad_buffer(ai) += g.leftCols(a_cols);
    if (nodes_[bi].needs_grad) grad_buffer(bi) += g.rightCols(g.cols() - a_cols);
  };
  return v;
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::runtime_error("stack_rows: no inputs");
  Eigen::Index total = 0;
  const Eigen::Index cols = node(rows[0]).value.cols();
  bool ng = false;
  for (const Var& r : rows) {
    if (node(r).value.cols() != cols) {
      throw std::runtime_error("stack_rows: column mismatch");
    }
    total += node(r).value.rows();
    ng = ng || node(r).needs_grad;
  }
  Mat out(total, cols);
  Eigen::Index at = 0;
  std::vector<std::pair<std::size_t, Eigen::Index>> spans;  // (node idx, row count)
  spans.reserve(rows.size());
  for (const Var& r : rows) {
    const Mat& v = node(r).value;
    out.middleRows(at, v.rows()) = v;
    spans.emplace_back(r.idx_, v.rows());
    at += v.rows();
  }
  if (!ng) return make(std::move(out), false, nullptr);
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, spans = std::move(spans)]() {
    const Mat& g = nodes_[oi].grad;
    Eigen::Index at = 0;
    for (const auto& [idx, count] : spans) {
      if (nodes_[idx].needs_grad) {
        grad_buffer(idx) += g.middleRows(at, count);
      }
      at += count;
    }
  };
  return v;
}

Var Tape::slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > node(a).value.rows()) {
    throw std::runtime_error("slice_rows: out of range");
  }
  Mat out = node(a).value.middleRows(start, count);
  if (!node(a).needs_grad) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, start, count]() {
    grad_buffer(ai).middleRows(start, count) += nodes_[oi].grad;
  };
  return v;
}

Var Tape::gather_rows(Var a, std::vector<Eigen::Index> idx) {
  const Mat& x = node(a).value;
  Mat out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.rows()) {
      throw std::runtime_error("gather_rows: index out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  }
  if (!node(a).needs_grad) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, idx = std::move(idx)]() {
    const Mat& g = nodes_[oi].grad;
    Mat& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    }
  };
  return v;
}

Var Tape::gather_cols(Var a, std::vector<Eigen::Index> idx) {
  const Mat& x = node(a).value;
  Mat out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.cols()) {
      throw std::runtime_error("gather_cols: index out of range");
    }
    out.col(static_cast<Eigen::Index>(i)) = x.col(idx[i]);
  }
  if (!node(a).needs_grad) return make(std::move(out), false, nullptr);
  const auto ai = a.idx_;
  Var v = make(std::move(out), true, nullptr);
  const auto oi = v.idx_;
  nodes_[oi].backprop = [this, oi, ai, idx = std::move(idx)]() {
    const Mat& g = nodes_[oi].grad;
    Mat& ga = grad_buffer(ai);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      ga.col(idx[i]) += g.col(static_cast<Eigen::Index>(i));
    }
  };
  return v;
}

Var Tape::gaussian_kl(Var mu_q, Var logvar_q, Var mu_p, Var logvar_p) {
  // 0.5 * sum( exp(lq - lp) + (mp - mq)^2 * exp(-lp) - 1 + lp - lq )
  Var d = sub(logvar_q, logvar_p);
  Var ratio = exp(d);
  Var mdiff = square(sub(mu_p, mu_q));
  Var scaled = mul(mdiff, exp(scale(logvar_p, -1.0)));
  Var term = sub(add(add_const(add(ratio, scaled), -1.0), logvar_p), logvar_q);
  return scale(sum(term), 0.5);
}

void Tape::backward(Var loss) {
  Node& l = node(loss);
  if (l.value.rows() != 1 || l.value.cols() != 1) {
    throw std::runtime_error("backward: loss must be 1x1");
  }
  grad_buffer(loss.idx_)(0, 0) = 1.0;
  for (std::size_t i = loss.idx_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop && n.needs_grad && n.grad.size() != 0) {
      n.backprop();
    }
  }
}

}  // namespace detm::ad
