// Reverse-mode autodiff over Eigen double matrices. Graphs are built per
// forward pass from shared_ptr nodes; parameters are long-lived leaves whose
// gradients accumulate until the optimizer clears them.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace deper::nn {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // pull this->grad into parents

    explicit Node(Mat v, bool rg) : value(std::move(v)), requires_grad(rg) {
        if (requires_grad) {
            grad = Mat::Zero(value.rows(), value.cols());
        }
    }
};

class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Var constant(Mat v) { return Var(std::make_shared<Node>(std::move(v), false)); }
    static Var param(Mat v) { return Var(std::make_shared<Node>(std::move(v), true)); }
    static Var scalar(double v) { return constant(Mat::Constant(1, 1, v)); }

    bool defined() const { return n_ != nullptr; }
    const Mat& value() const { return n_->value; }
    Mat& value() { return n_->value; }
    const Mat& grad() const { return n_->grad; }
    Mat& grad() { return n_->grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    int rows() const { return static_cast<int>(n_->value.rows()); }
    int cols() const { return static_cast<int>(n_->value.cols()); }
    double item() const { return n_->value(0, 0); }
    void zero_grad() {
        if (n_ && n_->requires_grad) {
            n_->grad.setZero();
        }
    }
    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

// Runs reverse-mode accumulation from a 1x1 root. Gradients add into every
// requires_grad node reachable from the root.
void backward(const Var& root);

// ----- elementwise / linear algebra -----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a * b^T
Var add_rowvec(const Var& m, const Var& row);
Var mul_rowvec(const Var& m, const Var& row);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var transpose(const Var& a);

// ----- structure -----
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int r0, int h);
Var slice_cols(const Var& a, int c0, int w);
Var gather_rows(const Var& table, std::vector<int> ids);
Var mask_rows(const Var& m, const Vec& keep);  // zeroes rows with keep==0

// ----- normalization / softmax -----
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
Var logsumexp_rows(const Var& a);  // R x 1

// ----- reductions / losses -----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var weighted_sum(const Var& a, const Mat& w);                  // scalar sum(a .* w)
Var nll_rows(const Var& logits, std::vector<int> targets);     // R x 1 per-row NLL
Var smooth_l1(const Var& pred, const Mat& target);             // elementwise, transition 1.0
Var bce(const Var& pred, const Mat& target, double clamp = 1e-7);

}  // namespace deper::nn
