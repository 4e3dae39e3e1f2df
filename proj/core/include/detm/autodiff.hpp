#pragma once

// Reverse-mode autodiff over dense matrices, just enough for the model's
// computation graph (recurrent gates, feed-forward encoder, softmax decoder,
// Gaussian KL terms). A Tape owns the nodes; Vars are cheap handles that die
// with their tape.

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace detm::ad {

using Mat = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;
  const Mat& value() const;
  const Mat& grad() const;
  double scalar() const { return value()(0, 0); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t idx) : tape_(tape), idx_(idx) {}
  Tape* tape_ = nullptr;
  std::size_t idx_ = 0;
};

class Tape {
 public:
  Var leaf(Mat value, bool needs_grad = false);
  Var constant(Mat value) { return leaf(std::move(value), false); }
  Var scalar_constant(double v);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);          // elementwise
  Var matmul(Var a, Var b);
  Var add_rowvec(Var a, Var row);  // broadcast a 1 x m row over n x m
  Var scale(Var a, double s);
  Var add_const(Var a, double c);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var softplus(Var a);
  Var clamp(Var a, double lo, double hi);
  Var softmax_rows(Var a);
  Var sum(Var a);                  // 1 x 1
  Var concat_cols(Var a, Var b);
  Var stack_rows(const std::vector<Var>& rows);  // vertical concatenation
  Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
  Var gather_rows(Var a, std::vector<Eigen::Index> idx);
  Var gather_cols(Var a, std::vector<Eigen::Index> idx);

  // Diagonal-Gaussian KL between q and p, summed over all entries: 1 x 1.
  Var gaussian_kl(Var mu_q, Var logvar_q, Var mu_p, Var logvar_p);

  // Seeds d(loss)/d(loss) = 1 and propagates to every leaf that needs grads.
  void backward(Var loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> backprop;  // pulls from this node's grad into parents
  };
  Node& node(Var v) { return nodes_[v.idx_]; }
  const Node& node(Var v) const { return nodes_[v.idx_]; }
  Var make(Mat value, bool needs_grad, std::function<void()> backprop);
  Mat& grad_buffer(std::size_t idx);

  std::deque<Node> nodes_;  // deque keeps references stable on append
};

}  // namespace detm::ad
