#include "deper/nn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "deper/errors.hpp"

namespace deper::nn {

namespace {

Var make(Mat value, std::vector<Var> parents, std::function<void(Node&)> fn) {
    bool rg = false;
    for (const Var& p : parents) {
        rg = rg || p.requires_grad();
    }
    auto node = std::make_shared<Node>(std::move(value), rg);
    if (rg) {
        node->parents.reserve(parents.size());
        for (const Var& p : parents) {
            node->parents.push_back(p.node());
        }
        node->backward_fn = std::move(fn);
    }
    return Var(node);
}

Mat softmax_rows_value(const Mat& a) {
    Mat out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        const double mx = a.row(i).maxCoeff();
        out.row(i) = (a.row(i).array() - mx).exp();
        out.row(i) /= out.row(i).sum();
    }
    return out;
}

}  // namespace

void backward(const Var& root) {
    if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
        throw Error("backward root must be a defined 1x1 value");
    }
    if (!root.requires_grad()) {
        return;
    }
    // iterative post-order; reversed it yields consumers before producers
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root.node().get(), 0});
    visited.insert(root.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    root.node()->grad(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->backward_fn(*n);
        }
    }
}

// ----- elementwise / linear algebra -----

Var add(const Var& a, const Var& b) {
    return make(a.value() + b.value(), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node* p = n.parents[static_cast<std::size_t>(k)].get();
            if (p->requires_grad) {
                p->grad += n.grad;
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    return make(a.value() - b.value(), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->grad += n.grad;
        }
        if (pb->requires_grad) {
            pb->grad -= n.grad;
        }
    });
}

Var cmul(const Var& a, const Var& b) {
    return make(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->grad.array() += n.grad.array() * pb->value.array();
        }
        if (pb->requires_grad) {
            pb->grad.array() += n.grad.array() * pa->value.array();
        }
    });
}

Var scale(const Var& a, double c) {
    return make(a.value() * c, {a}, [c](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad += c * n.grad;
        }
    });
}

Var matmul(const Var& a, const Var& b) {
    return make(a.value() * b.value(), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->grad.noalias() += n.grad * pb->value.transpose();
        }
        if (pb->requires_grad) {
            pb->grad.noalias() += pa->value.transpose() * n.grad;
        }
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    return make(a.value() * b.value().transpose(), {a, b}, [](Node& n) {
        Node* pa = n.parents[0].get();
        Node* pb = n.parents[1].get();
        if (pa->requires_grad) {
            pa->grad.noalias() += n.grad * pb->value;
        }
        if (pb->requires_grad) {
            pb->grad.noalias() += n.grad.transpose() * pa->value;
        }
    });
}

Var add_rowvec(const Var& m, const Var& row) {
    Mat out = m.value();
    out.rowwise() += row.value().row(0);
    return make(std::move(out), {m, row}, [](Node& n) {
        Node* pm = n.parents[0].get();
        Node* pr = n.parents[1].get();
        if (pm->requires_grad) {
            pm->grad += n.grad;
        }
        if (pr->requires_grad) {
            pr->grad.row(0) += n.grad.colwise().sum();
        }
    });
}

Var mul_rowvec(const Var& m, const Var& row) {
    Mat out = m.value();
    out.array().rowwise() *= row.value().row(0).array();
    return make(std::move(out), {m, row}, [](Node& n) {
        Node* pm = n.parents[0].get();
        Node* pr = n.parents[1].get();
        if (pm->requires_grad) {
            pm->grad.array() += n.grad.array().rowwise() * pr->value.row(0).array();
        }
        if (pr->requires_grad) {
            pr->grad.row(0) +=
                (n.grad.array() * pm->value.array()).colwise().sum().matrix();
        }
    });
}

Var relu(const Var& a) {
    return make(a.value().cwiseMax(0.0), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad.array() += n.grad.array() * (p->value.array() > 0.0).cast<double>();
        }
    });
}

Var sigmoid(const Var& a) {
    Mat y(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double x = a.value()(i);
        y(i) = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    Mat cache = y;
    return make(std::move(y), {a}, [cache](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad.array() += n.grad.array() * cache.array() * (1.0 - cache.array());
        }
    });
}

Var transpose(const Var& a) {
    return make(a.value().transpose(), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad += n.grad.transpose();
        }
    });
}

// ----- structure -----

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw Error("concat_rows: empty");
    }
    int rows = 0;
    const int cols = parts.front().cols();
    for (const Var& p : parts) {
        rows += p.rows();
    }
    Mat out(rows, cols);
    std::vector<int> offsets(parts.size());
    int r = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        offsets[i] = r;
        out.middleRows(r, parts[i].rows()) = parts[i].value();
        r += parts[i].rows();
    }
    return make(std::move(out), parts, [offsets](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Node* p = n.parents[i].get();
            if (p->requires_grad) {
                p->grad += n.grad.middleRows(offsets[i], p->value.rows());
            }
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw Error("concat_cols: empty");
    }
    const int rows = parts.front().rows();
    int cols = 0;
    for (const Var& p : parts) {
        cols += p.cols();
    }
    Mat out(rows, cols);
    std::vector<int> offsets(parts.size());
    int c = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        offsets[i] = c;
        out.middleCols(c, parts[i].cols()) = parts[i].value();
        c += parts[i].cols();
    }
    return make(std::move(out), parts, [offsets](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            Node* p = n.parents[i].get();
            if (p->requires_grad) {
                p->grad += n.grad.middleCols(offsets[i], p->value.cols());
            }
        }
    });
}

Var slice_rows(const Var& a, int r0, int h) {
    return make(a.value().middleRows(r0, h), {a}, [r0, h](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad.middleRows(r0, h) += n.grad;
        }
    });
}

Var slice_cols(const Var& a, int c0, int w) {
    return make(a.value().middleCols(c0, w), {a}, [c0, w](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad.middleCols(c0, w) += n.grad;
        }
    });
}

Var gather_rows(const Var& table, std::vector<int> ids) {
    Mat out(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) {
            throw Error("gather_rows: index out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    }
    return make(std::move(out), {table}, [ids = std::move(ids)](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            for (std::size_t i = 0; i < ids.size(); ++i) {
                p->grad.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
            }
        }
    });
}

Var mask_rows(const Var& m, const Vec& keep) {
    Mat out = m.value();
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        if (keep(i) == 0.0) {
            out.row(i).setZero();
        }
    }
    return make(std::move(out), {m}, [keep](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            for (Eigen::Index i = 0; i < keep.size(); ++i) {
                if (keep(i) != 0.0) {
                    p->grad.row(i) += n.grad.row(i);
                }
            }
        }
    });
}

// ----- normalization / softmax -----

Var softmax_rows(const Var& a) {
    Mat y = softmax_rows_value(a.value());
    Mat cache = y;
    return make(std::move(y), {a}, [cache](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            for (Eigen::Index i = 0; i < cache.rows(); ++i) {
                const double dot = n.grad.row(i).dot(cache.row(i));
                p->grad.row(i) +=
                    (cache.row(i).array() * (n.grad.row(i).array() - dot)).matrix();
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    const Mat& v = x.value();
    const Eigen::Index rows = v.rows(), cols = v.cols();
    Mat xhat(rows, cols);
    Vec inv_sd(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mu = v.row(i).mean();
        const double var = (v.row(i).array() - mu).square().mean();
        inv_sd(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (v.row(i).array() - mu) * inv_sd(i);
    }
    Mat out = xhat;
    out.array().rowwise() *= gain.value().row(0).array();
    out.rowwise() += bias.value().row(0);
    return make(std::move(out), {x, gain, bias}, [xhat, inv_sd](Node& n) {
        Node* px = n.parents[0].get();
        Node* pg = n.parents[1].get();
        Node* pb = n.parents[2].get();
        if (pg->requires_grad) {
            pg->grad.row(0) += (n.grad.array() * xhat.array()).colwise().sum().matrix();
        }
        if (pb->requires_grad) {
            pb->grad.row(0) += n.grad.colwise().sum();
        }
        if (px->requires_grad) {
            using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;
            const RowArr g_row = pg->value.row(0).array();
            for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                const RowArr dxhat = n.grad.row(i).array() * g_row;
                const double m1 = dxhat.mean();
                const double m2 = (dxhat * xhat.row(i).array()).mean();
                px->grad.row(i) +=
                    (inv_sd(i) * (dxhat - m1 - xhat.row(i).array() * m2)).matrix();
            }
        }
    });
}

Var l2_normalize_rows(const Var& a, double eps) {
    const Mat& v = a.value();
    Mat y(v.rows(), v.cols());
    Vec norms(v.rows());
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        norms(i) = std::max(v.row(i).norm(), eps);
        y.row(i) = v.row(i) / norms(i);
    }
    Mat cache = y;
    return make(std::move(y), {a}, [cache, norms](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            for (Eigen::Index i = 0; i < cache.rows(); ++i) {
                const double dot = n.grad.row(i).dot(cache.row(i));
                p->grad.row(i) += (n.grad.row(i) - dot * cache.row(i)) / norms(i);
            }
        }
    });
}

Var logsumexp_rows(const Var& a) {
    const Mat& v = a.value();
    Mat out(v.rows(), 1);
    Mat soft = softmax_rows_value(v);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const double mx = v.row(i).maxCoeff();
        out(i, 0) = mx + std::log((v.row(i).array() - mx).exp().sum());
    }
    return make(std::move(out), {a}, [soft](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad += (soft.array().colwise() * n.grad.col(0).array()).matrix();
        }
    });
}

// ----- reductions / losses -----

Var sum_all(const Var& a) {
    return make(Mat::Constant(1, 1, a.value().sum()), {a}, [](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad.array() += n.grad(0, 0);
        }
    });
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.value().size());
    return make(Mat::Constant(1, 1, a.value().mean()), {a}, [inv](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad.array() += n.grad(0, 0) * inv;
        }
    });
}

Var weighted_sum(const Var& a, const Mat& w) {
    return make(Mat::Constant(1, 1, (a.value().array() * w.array()).sum()), {a}, [w](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            p->grad += n.grad(0, 0) * w;
        }
    });
}

Var nll_rows(const Var& logits, std::vector<int> targets) {
    const Mat& v = logits.value();
    if (static_cast<Eigen::Index>(targets.size()) != v.rows()) {
        throw Error("nll_rows: target count mismatch");
    }
    Mat soft = softmax_rows_value(v);
    Mat out(v.rows(), 1);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= v.cols()) {
            throw Error("nll_rows: target out of range");
        }
        out(i, 0) = -std::log(std::max(soft(i, t), 1e-300));
    }
    return make(std::move(out), {logits}, [soft, targets = std::move(targets)](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            for (Eigen::Index i = 0; i < soft.rows(); ++i) {
                const double g = n.grad(i, 0);
                p->grad.row(i) += g * soft.row(i);
                p->grad(i, targets[static_cast<std::size_t>(i)]) -= g;
            }
        }
    });
}

Var smooth_l1(const Var& pred, const Mat& target) {
    const Mat e = pred.value() - target;
    Mat out(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < e.size(); ++i) {
        const double x = e(i);
        out(i) = std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5;
    }
    return make(std::move(out), {pred}, [e](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            for (Eigen::Index i = 0; i < e.size(); ++i) {
                const double x = e(i);
                const double d = std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
                p->grad(i) += n.grad(i) * d;
            }
        }
    });
}

Var bce(const Var& pred, const Mat& target, double clamp) {
    const Mat& v = pred.value();
    Mat out(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double p = std::min(std::max(v(i), clamp), 1.0 - clamp);
        out(i) = -(target(i) * std::log(p) + (1.0 - target(i)) * std::log(1.0 - p));
    }
    return make(std::move(out), {pred}, [target, clamp](Node& n) {
        Node* p = n.parents[0].get();
        if (p->requires_grad) {
            for (Eigen::Index i = 0; i < target.size(); ++i) {
                const double x = p->value(i);
                if (x <= clamp || x >= 1.0 - clamp) {
                    continue;  // flat in the clamped region
                }
                p->grad(i) += n.grad(i) * (-target(i) / x + (1.0 - target(i)) / (1.0 - x));
            }
        }
    });
}

}  // namespace deper::nn
