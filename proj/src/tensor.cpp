#include "wa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace wa {
namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

int prod(const std::vector<int>& shape) {
    int p = 1;
    for (int d : shape) p *= d;
    return p;
}

void check_positive_dims(const std::vector<int>& shape) {
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
    }
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        if (!t->tracked()) continue;
        if (tape != nullptr && tape != t->tape()) {
            throw std::invalid_argument("operands recorded on different tapes");
        }
        tape = t->tape();
    }
    return tape;
}

void require_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
}

// C += A * B with A (m x k), B (k x n). ikj order keeps the inner loop
// streaming over contiguous rows of B and C.
void matmul_accum(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        const double* arow = a + static_cast<std::size_t>(i) * k;
        for (int t = 0; t < k; ++t) {
            const double av = arow[t];
            const double* brow = b + static_cast<std::size_t>(t) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A^T * B with A (k x m), B (k x n), C (m x n)
void matmul_at_accum(const double* a, const double* b, double* c, int k, int m, int n) {
    for (int t = 0; t < k; ++t) {
        const double* arow = a + static_cast<std::size_t>(t) * m;
        const double* brow = b + static_cast<std::size_t>(t) * n;
        for (int i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T with A (m x k), B (n x k), C (m x n)
void matmul_bt_accum(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
            crow[j] += acc;
        }
    }
}

struct AxisSpan {
    int outer, len, inner;
};

AxisSpan axis_span(const std::vector<int>& shape, int axis) {
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    }
    AxisSpan s{1, shape[static_cast<std::size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
    return s;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

// ---- Tensor ----

Tensor::Tensor() : data_(std::make_shared<std::vector<double>>()) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)) {
    check_positive_dims(shape_);
    if (prod(shape_) != static_cast<int>(values.size())) {
        throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(std::vector<int> shape) {
    check_positive_dims(shape);
    const int n = prod(shape);
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& v : *t.data_) v = rng.normal() * stddev;
    return t;
}

double Tensor::value() const {
    if (size() != 1) throw std::invalid_argument("value(): tensor is not scalar, shape " + shape_str(shape_));
    return (*data_)[0];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    check_positive_dims(new_shape);
    if (prod(new_shape) != size()) {
        throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                                    ": element count mismatch");
    }
    Tensor t = *this;
    t.shape_ = std::move(new_shape);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : *data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---- Tape ----

Tensor Tape::leaf(const Tensor& values) {
    Tensor t = values.detached();
    const int id = record({}, t.size(), nullptr);
    t.bind(this, id);
    return t;
}

int Tape::record(std::vector<int> parents, int output_size, BackwardFn fn) {
    const int id = static_cast<int>(nodes_.size());
    for (int p : parents) {
        if (p < 0 || p >= id) throw std::logic_error("tape parents must precede their node");
    }
    nodes_.push_back(Node{std::move(parents), output_size, std::move(fn)});
    return id;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.tracked() || loss.tape() != this) {
        throw std::invalid_argument("backward: loss is not recorded on this tape");
    }
    if (loss.size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    grads_.assign(nodes_.size(), {});
    visits_ = 0;
    grad_buf(loss.node())[0] = 1.0;
    for (int id = loss.node(); id >= 0; --id) {
        if (grads_[static_cast<std::size_t>(id)].empty()) continue;  // unreachable from loss
        ++visits_;
        if (nodes_[static_cast<std::size_t>(id)].fn) {
            nodes_[static_cast<std::size_t>(id)].fn(*this, grads_[static_cast<std::size_t>(id)]);
        }
    }
}

bool Tape::has_grad(const Tensor& t) const {
    return t.tracked() && t.tape() == this && !grads_.empty() &&
           !grads_[static_cast<std::size_t>(t.node())].empty();
}

std::vector<double> Tape::grad_of(const Tensor& t) const {
    if (!t.tracked() || t.tape() != this) {
        throw std::invalid_argument("grad_of: tensor is not recorded on this tape");
    }
    if (grads_.empty() || grads_[static_cast<std::size_t>(t.node())].empty()) {
        return std::vector<double>(static_cast<std::size_t>(t.size()), 0.0);
    }
    return grads_[static_cast<std::size_t>(t.node())];
}

std::vector<double>& Tape::grad_buf(int node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].size), 0.0);
    return g;
}

bool Tape::topological_order_ok() const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        for (int p : nodes_[i].parents) {
            if (p < 0 || p >= static_cast<int>(i)) return false;
        }
    }
    return true;
}

// ---- ops ----

namespace {

// Binds out to a new tape node when any input is tracked.
void finish_op(Tensor& out, std::initializer_list<const Tensor*> inputs, Tape::BackwardFn fn) {
    Tape* tape = common_tape(inputs);
    if (tape == nullptr) return;
    std::vector<int> parents;
    for (const Tensor* t : inputs) {
        if (t->tracked()) parents.push_back(t->node());
    }
    const int id = tape->record(std::move(parents), out.size(), std::move(fn));
    tape->bind_output(out, id);
}

void accum(Tape& tape, int node, const std::vector<double>& contrib) {
    auto& g = tape.grad_buf(node);
    for (std::size_t i = 0; i < contrib.size(); ++i) g[i] += contrib[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    const int pa = a.node(), pb = b.node();
    finish_op(out, {&a, &b}, [pa, pb](Tape& tp, const std::vector<double>& g) {
        if (pa >= 0) accum(tp, pa, g);
        if (pb >= 0) accum(tp, pb, g);
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    const int pa = a.node(), pb = b.node();
    finish_op(out, {&a, &b}, [pa, pb](Tape& tp, const std::vector<double>& g) {
        if (pa >= 0) accum(tp, pa, g);
        if (pb >= 0) {
            auto& gb = tp.grad_buf(pb);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    const int pa = a.node(), pb = b.node();
    const Tensor av = a.detached(), bv = b.detached();
    finish_op(out, {&a, &b}, [pa, pb, av, bv](Tape& tp, const std::vector<double>& g) {
        if (pa >= 0) {
            auto& ga = tp.grad_buf(pa);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv.data()[i];
        }
        if (pb >= 0) {
            auto& gb = tp.grad_buf(pb);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av.data()[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    for (int i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
    const int pa = a.node();
    finish_op(out, {&a}, [pa, c](Tape& tp, const std::vector<double>& g) {
        auto& ga = tp.grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
    return out;
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    require_2d(m, "add_rowvec");
    if (v.size() != m.dim(1)) {
        throw std::invalid_argument("add_rowvec: vector length " + shape_str(v.shape()) +
                                    " does not match matrix " + shape_str(m.shape()));
    }
    const int rows = m.dim(0), cols = m.dim(1);
    Tensor out = Tensor::zeros(m.shape());
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out.data()[i * cols + j] = m.data()[i * cols + j] + v.data()[j];
    }
    const int pm = m.node(), pv = v.node();
    finish_op(out, {&m, &v}, [pm, pv, rows, cols](Tape& tp, const std::vector<double>& g) {
        if (pm >= 0) accum(tp, pm, g);
        if (pv >= 0) {
            auto& gv = tp.grad_buf(pv);
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * cols + j)];
            }
        }
    });
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    matmul_accum(a.data(), b.data(), out.data(), m, k, n);
    const int pa = a.node(), pb = b.node();
    const Tensor av = a.detached(), bv = b.detached();
    finish_op(out, {&a, &b}, [pa, pb, av, bv, m, k, n](Tape& tp, const std::vector<double>& g) {
        if (pa >= 0) {
            // dA = g * B^T
            matmul_bt_accum(g.data(), bv.data(), tp.grad_buf(pa).data(), m, n, k);
        }
        if (pb >= 0) {
            // dB = A^T * g
            matmul_at_accum(av.data(), g.data(), tp.grad_buf(pb).data(), m, k, n);
        }
    });
    return out;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int r = a.dim(0), c = a.dim(1);
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) out.data()[j * r + i] = a.data()[i * c + j];
    }
    const int pa = a.node();
    finish_op(out, {&a}, [pa, r, c](Tape& tp, const std::vector<double>& g) {
        auto& ga = tp.grad_buf(pa);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) ga[static_cast<std::size_t>(i * c + j)] += g[static_cast<std::size_t>(j * r + i)];
        }
    });
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const AxisSpan sp = axis_span(x.shape(), axis);
    Tensor out = Tensor::zeros(x.shape());
    for (int o = 0; o < sp.outer; ++o) {
        for (int in = 0; in < sp.inner; ++in) {
            const int base = o * sp.len * sp.inner + in;
            double mx = -1e300;
            for (int t = 0; t < sp.len; ++t) mx = std::max(mx, x.data()[base + t * sp.inner]);
            double denom = 0.0;
            for (int t = 0; t < sp.len; ++t) {
                const double e = std::exp(x.data()[base + t * sp.inner] - mx);
                out.data()[base + t * sp.inner] = e;
                denom += e;
            }
            for (int t = 0; t < sp.len; ++t) out.data()[base + t * sp.inner] /= denom;
        }
    }
    const int px = x.node();
    const Tensor sv = out.detached();
    finish_op(out, {&x}, [px, sv, sp](Tape& tp, const std::vector<double>& g) {
        auto& gx = tp.grad_buf(px);
        for (int o = 0; o < sp.outer; ++o) {
            for (int in = 0; in < sp.inner; ++in) {
                const int base = o * sp.len * sp.inner + in;
                double dot = 0.0;
                for (int t = 0; t < sp.len; ++t) {
                    const int idx = base + t * sp.inner;
                    dot += g[static_cast<std::size_t>(idx)] * sv.data()[idx];
                }
                for (int t = 0; t < sp.len; ++t) {
                    const int idx = base + t * sp.inner;
                    gx[static_cast<std::size_t>(idx)] += sv.data()[idx] * (g[static_cast<std::size_t>(idx)] - dot);
                }
            }
        }
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.ndim() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
    const int c = x.dim(x.ndim() - 1);
    if (gamma.size() != c || beta.size() != c) {
        throw std::invalid_argument("layer_norm: gamma/beta length must equal last dim " + std::to_string(c));
    }
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    const int rows = x.size() / c;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> xhat(static_cast<std::size_t>(x.size()));
    std::vector<double> inv_std(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const double* row = x.data() + static_cast<std::size_t>(r) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += row[j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = row[j] - mu;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = inv;
        for (int j = 0; j < c; ++j) {
            const double xh = (row[j] - mu) * inv;
            xhat[static_cast<std::size_t>(r * c + j)] = xh;
            out.data()[r * c + j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    const int px = x.node(), pg = gamma.node(), pb = beta.node();
    const Tensor gv = gamma.detached();
    finish_op(out, {&x, &gamma, &beta},
              [px, pg, pb, gv, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                  Tape& tp, const std::vector<double>& g) {
                  for (int r = 0; r < rows; ++r) {
                      const std::size_t base = static_cast<std::size_t>(r) * c;
                      if (pg >= 0) {
                          auto& gg = tp.grad_buf(pg);
                          for (int j = 0; j < c; ++j) gg[static_cast<std::size_t>(j)] += g[base + j] * xhat[base + j];
                      }
                      if (pb >= 0) {
                          auto& gb = tp.grad_buf(pb);
                          for (int j = 0; j < c; ++j) gb[static_cast<std::size_t>(j)] += g[base + j];
                      }
                      if (px >= 0) {
                          auto& gx = tp.grad_buf(px);
                          double mean_gy = 0.0, mean_gyx = 0.0;
                          for (int j = 0; j < c; ++j) {
                              const double gy = g[base + j] * gv.data()[j];
                              mean_gy += gy;
                              mean_gyx += gy * xhat[base + j];
                          }
                          mean_gy /= c;
                          mean_gyx /= c;
                          const double inv = inv_std[static_cast<std::size_t>(r)];
                          for (int j = 0; j < c; ++j) {
                              const double gy = g[base + j] * gv.data()[j];
                              gx[base + j] += inv * (gy - mean_gy - xhat[base + j] * mean_gyx);
                          }
                      }
                  }
              });
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    const int px = x.node();
    const Tensor xv = x.detached();
    finish_op(out, {&x}, [px, xv](Tape& tp, const std::vector<double>& g) {
        auto& gx = tp.grad_buf(px);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = xv.data()[static_cast<int>(i)];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += g[i] * (cdf + v * pdf);
        }
    });
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += x.data()[i];
    Tensor out = Tensor::scalar(acc);
    const int px = x.node();
    const int n = x.size();
    finish_op(out, {&x}, [px, n](Tape& tp, const std::vector<double>& g) {
        auto& gx = tp.grad_buf(px);
        for (int i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += g[0];
    });
    return out;
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    for (int i = 0; i < x.size(); ++i) acc += x.data()[i];
    const int n = x.size();
    Tensor out = Tensor::scalar(acc / n);
    const int px = x.node();
    finish_op(out, {&x}, [px, n](Tape& tp, const std::vector<double>& g) {
        auto& gx = tp.grad_buf(px);
        const double gi = g[0] / n;
        for (int i = 0; i < n; ++i) gx[static_cast<std::size_t>(i)] += gi;
    });
    return out;
}

Tensor mean_blocks(const Tensor& m, int block_rows) {
    require_2d(m, "mean_blocks");
    const int rows = m.dim(0), cols = m.dim(1);
    if (block_rows <= 0 || rows % block_rows != 0) {
        throw std::invalid_argument("mean_blocks: rows " + std::to_string(rows) + " not divisible by block " +
                                    std::to_string(block_rows));
    }
    const int nb = rows / block_rows;
    Tensor out = Tensor::zeros({nb, cols});
    for (int b = 0; b < nb; ++b) {
        for (int i = 0; i < block_rows; ++i) {
            const double* row = m.data() + static_cast<std::size_t>(b * block_rows + i) * cols;
            for (int j = 0; j < cols; ++j) out.data()[b * cols + j] += row[j] / block_rows;
        }
    }
    const int pm = m.node();
    finish_op(out, {&m}, [pm, nb, block_rows, cols](Tape& tp, const std::vector<double>& g) {
        auto& gm = tp.grad_buf(pm);
        for (int b = 0; b < nb; ++b) {
            for (int i = 0; i < block_rows; ++i) {
                const std::size_t base = static_cast<std::size_t>(b * block_rows + i) * cols;
                for (int j = 0; j < cols; ++j) gm[base + j] += g[static_cast<std::size_t>(b * cols + j)] / block_rows;
            }
        }
    });
    return out;
}

Tensor cumsum_blocks(const Tensor& m, int block_rows) {
    require_2d(m, "cumsum_blocks");
    const int rows = m.dim(0), cols = m.dim(1);
    if (block_rows <= 0 || rows % block_rows != 0) {
        throw std::invalid_argument("cumsum_blocks: rows " + std::to_string(rows) + " not divisible by block " +
                                    std::to_string(block_rows));
    }
    const int nb = rows / block_rows;
    Tensor out = Tensor::zeros(m.shape());
    for (int b = 0; b < nb; ++b) {
        for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < block_rows; ++i) {
                acc += m.data()[(b * block_rows + i) * cols + j];
                out.data()[(b * block_rows + i) * cols + j] = acc;
            }
        }
    }
    const int pm = m.node();
    finish_op(out, {&m}, [pm, nb, block_rows, cols](Tape& tp, const std::vector<double>& g) {
        auto& gm = tp.grad_buf(pm);
        for (int b = 0; b < nb; ++b) {
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int i = block_rows - 1; i >= 0; --i) {
                    acc += g[static_cast<std::size_t>((b * block_rows + i) * cols + j)];
                    gm[static_cast<std::size_t>((b * block_rows + i) * cols + j)] += acc;
                }
            }
        }
    });
    return out;
}

Tensor slice_rows(const Tensor& m, int r0, int r1) {
    require_2d(m, "slice_rows");
    const int rows = m.dim(0), cols = m.dim(1);
    if (r0 < 0 || r1 > rows || r0 >= r1) {
        throw std::invalid_argument("slice_rows: invalid range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                                    ") for " + shape_str(m.shape()));
    }
    const int n = r1 - r0;
    Tensor out = Tensor::zeros({n, cols});
    std::copy(m.data() + static_cast<std::size_t>(r0) * cols, m.data() + static_cast<std::size_t>(r1) * cols,
              out.data());
    const int pm = m.node();
    finish_op(out, {&m}, [pm, r0, n, cols](Tape& tp, const std::vector<double>& g) {
        auto& gm = tp.grad_buf(pm);
        for (int i = 0; i < n * cols; ++i) gm[static_cast<std::size_t>(r0 * cols + i)] += g[static_cast<std::size_t>(i)];
    });
    return out;
}

Tensor slice_cols(const Tensor& m, int c0, int c1) {
    require_2d(m, "slice_cols");
    const int rows = m.dim(0), cols = m.dim(1);
    if (c0 < 0 || c1 > cols || c0 >= c1) {
        throw std::invalid_argument("slice_cols: invalid range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                    ") for " + shape_str(m.shape()));
    }
    const int n = c1 - c0;
    Tensor out = Tensor::zeros({rows, n});
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < n; ++j) out.data()[i * n + j] = m.data()[i * cols + c0 + j];
    }
    const int pm = m.node();
    finish_op(out, {&m}, [pm, rows, cols, c0, n](Tape& tp, const std::vector<double>& g) {
        auto& gm = tp.grad_buf(pm);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < n; ++j) gm[static_cast<std::size_t>(i * cols + c0 + j)] += g[static_cast<std::size_t>(i * n + j)];
        }
    });
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    const int cols = parts[0].ndim() == 2 ? parts[0].dim(1) : -1;
    int rows = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_rows");
        if (p.dim(1) != cols) {
            throw std::invalid_argument("concat_rows: column mismatch " + shape_str(p.shape()));
        }
        rows += p.dim(0);
    }
    Tensor out = Tensor::zeros({rows, cols});
    int at = 0;
    std::vector<int> offsets, pnodes, sizes;
    for (const Tensor& p : parts) {
        std::copy(p.data(), p.data() + p.size(), out.data() + static_cast<std::size_t>(at));
        offsets.push_back(at);
        pnodes.push_back(p.node());
        sizes.push_back(p.size());
        at += p.size();
    }
    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
        if (p.tracked()) {
            if (tape && tape != p.tape()) throw std::invalid_argument("concat_rows: operands on different tapes");
            tape = p.tape();
        }
    }
    if (tape) {
        std::vector<int> parents;
        for (int pn : pnodes) {
            if (pn >= 0) parents.push_back(pn);
        }
        const int id = tape->record(std::move(parents), out.size(),
                                    [offsets, pnodes, sizes](Tape& tp, const std::vector<double>& g) {
                                        for (std::size_t k = 0; k < pnodes.size(); ++k) {
                                            if (pnodes[k] < 0) continue;
                                            auto& gp = tp.grad_buf(pnodes[k]);
                                            for (int i = 0; i < sizes[k]; ++i) {
                                                gp[static_cast<std::size_t>(i)] +=
                                                    g[static_cast<std::size_t>(offsets[k] + i)];
                                            }
                                        }
                                    });
        tape->bind_output(out, id);
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int rows = parts[0].ndim() == 2 ? parts[0].dim(0) : -1;
    int cols = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols");
        if (p.dim(0) != rows) throw std::invalid_argument("concat_cols: row mismatch " + shape_str(p.shape()));
        cols += p.dim(1);
    }
    Tensor out = Tensor::zeros({rows, cols});
    std::vector<int> offsets, pnodes, widths;
    int at = 0;
    for (const Tensor& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < w; ++j) out.data()[i * cols + at + j] = p.data()[i * w + j];
        }
        offsets.push_back(at);
        pnodes.push_back(p.node());
        widths.push_back(w);
        at += w;
    }
    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
        if (p.tracked()) {
            if (tape && tape != p.tape()) throw std::invalid_argument("concat_cols: operands on different tapes");
            tape = p.tape();
        }
    }
    if (tape) {
        std::vector<int> parents;
        for (int pn : pnodes) {
            if (pn >= 0) parents.push_back(pn);
        }
        const int id = tape->record(std::move(parents), out.size(),
                                    [offsets, pnodes, widths, rows, cols](Tape& tp, const std::vector<double>& g) {
                                        for (std::size_t k = 0; k < pnodes.size(); ++k) {
                                            if (pnodes[k] < 0) continue;
                                            auto& gp = tp.grad_buf(pnodes[k]);
                                            const int w = widths[k];
                                            for (int i = 0; i < rows; ++i) {
                                                for (int j = 0; j < w; ++j) {
                                                    gp[static_cast<std::size_t>(i * w + j)] +=
                                                        g[static_cast<std::size_t>(i * cols + offsets[k] + j)];
                                                }
                                            }
                                        }
                                    });
        tape->bind_output(out, id);
    }
    return out;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    require_2d(q, "scaled_dot_attention");
    require_2d(k, "scaled_dot_attention");
    require_2d(v, "scaled_dot_attention");
    if (q.dim(1) != k.dim(1)) {
        throw std::invalid_argument("scaled_dot_attention: query/key width mismatch " + shape_str(q.shape()) +
                                    " vs " + shape_str(k.shape()));
    }
    if (k.dim(0) != v.dim(0)) {
        throw std::invalid_argument("scaled_dot_attention: key/value count mismatch " + shape_str(k.shape()) +
                                    " vs " + shape_str(v.shape()));
    }
    Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
    Tensor weights = softmax(logits, 1);
    return matmul(weights, v);
}

Tensor smooth_l1_mean(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "smooth_l1_mean");
    const int n = pred.size();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = pred.data()[i] - target.data()[i];
        const double a = std::fabs(d);
        acc += a < 1.0 ? 0.5 * d * d : a - 0.5;
    }
    Tensor out = Tensor::scalar(acc / n);
    const int pp = pred.node(), pt = target.node();
    const Tensor pv = pred.detached(), tv = target.detached();
    finish_op(out, {&pred, &target}, [pp, pt, pv, tv, n](Tape& tp, const std::vector<double>& g) {
        for (int i = 0; i < n; ++i) {
            const double d = pv.data()[i] - tv.data()[i];
            const double grad = g[0] * (std::fabs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0)) / n;
            if (pp >= 0) tp.grad_buf(pp)[static_cast<std::size_t>(i)] += grad;
            if (pt >= 0) tp.grad_buf(pt)[static_cast<std::size_t>(i)] -= grad;
        }
    });
    return out;
}

Tensor bce_logits_mean(const Tensor& logits, const Tensor& targets) {
    require_same_shape(logits, targets, "bce_logits_mean");
    const int n = logits.size();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = logits.data()[i], y = targets.data()[i];
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    }
    Tensor out = Tensor::scalar(acc / n);
    const int pl = logits.node(), py = targets.node();
    const Tensor zv = logits.detached(), yv = targets.detached();
    finish_op(out, {&logits, &targets}, [pl, py, zv, yv, n](Tape& tp, const std::vector<double>& g) {
        for (int i = 0; i < n; ++i) {
            const double z = zv.data()[i];
            const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
            if (pl >= 0) tp.grad_buf(pl)[static_cast<std::size_t>(i)] += g[0] * (sig - yv.data()[i]) / n;
            if (py >= 0) tp.grad_buf(py)[static_cast<std::size_t>(i)] -= g[0] * z / n;
        }
    });
    return out;
}

Tensor cross_entropy_index(const Tensor& logits, int index) {
    const int n = logits.size();
    if (index < 0 || index >= n) {
        throw std::invalid_argument("cross_entropy_index: index " + std::to_string(index) + " out of range " +
                                    std::to_string(n));
    }
    double mx = -1e300;
    for (int i = 0; i < n; ++i) mx = std::max(mx, logits.data()[i]);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) denom += std::exp(logits.data()[i] - mx);
    const double lse = mx + std::log(denom);
    Tensor out = Tensor::scalar(lse - logits.data()[index]);
    const int pl = logits.node();
    const Tensor zv = logits.detached();
    finish_op(out, {&logits}, [pl, zv, index, n, mx, denom](Tape& tp, const std::vector<double>& g) {
        auto& gl = tp.grad_buf(pl);
        for (int i = 0; i < n; ++i) {
            const double p = std::exp(zv.data()[i] - mx) / denom;
            gl[static_cast<std::size_t>(i)] += g[0] * (p - (i == index ? 1.0 : 0.0));
        }
    });
    return out;
}

Tensor mse_mean(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_mean");
    const int n = pred.size();
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / n);
    const int pp = pred.node(), pt = target.node();
    const Tensor pv = pred.detached(), tv = target.detached();
    finish_op(out, {&pred, &target}, [pp, pt, pv, tv, n](Tape& tp, const std::vector<double>& g) {
        for (int i = 0; i < n; ++i) {
            const double grad = g[0] * 2.0 * (pv.data()[i] - tv.data()[i]) / n;
            if (pp >= 0) tp.grad_buf(pp)[static_cast<std::size_t>(i)] += grad;
            if (pt >= 0) tp.grad_buf(pt)[static_cast<std::size_t>(i)] -= grad;
        }
    });
    return out;
}

Tensor sinusoidal_embedding(long t, int dim) {
    if (dim <= 0 || dim % 2 != 0) {
        throw std::invalid_argument("sinusoidal_embedding: dimension must be even and positive, got " +
                                    std::to_string(dim));
    }
    if (t < 0) throw std::invalid_argument("sinusoidal_embedding: t must be non-negative");
    Tensor out = Tensor::zeros({dim});
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        out.data()[2 * i] = std::sin(static_cast<double>(t) * freq);
        out.data()[2 * i + 1] = std::cos(static_cast<double>(t) * freq);
    }
    return out;
}

// ---- AdamW ----

void AdamW::step(std::map<std::string, Tensor>& params,
                 const std::map<std::string, std::vector<double>>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        const std::size_t n = static_cast<std::size_t>(p.size());
        auto& slot = slots_[name];
        if (slot.m.empty()) {
            slot.m.assign(n, 0.0);
            slot.v.assign(n, 0.0);
        }
        if (slot.m.size() != n) {
            throw std::invalid_argument("adamw: moment size mismatch for '" + name + "'");
        }
        const std::vector<double>* g = nullptr;
        auto it = grads.find(name);
        if (it != grads.end()) {
            if (it->second.size() != n) {
                throw std::invalid_argument("adamw: gradient size mismatch for '" + name + "': " +
                                            std::to_string(it->second.size()) + " vs " + std::to_string(n));
            }
            g = &it->second;
        }
        double* pd = p.data();
        // decoupled decay, independent of the adaptive update
        if (hp_.weight_decay != 0.0) {
            const double keep = 1.0 - hp_.lr * hp_.weight_decay;
            for (std::size_t i = 0; i < n; ++i) pd[i] *= keep;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            slot.m[i] = hp_.beta1 * slot.m[i] + (1.0 - hp_.beta1) * gi;
            slot.v[i] = hp_.beta2 * slot.v[i] + (1.0 - hp_.beta2) * gi * gi;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            pd[i] -= hp_.lr * mhat / (std::sqrt(vhat) + hp_.eps);
        }
    }
}

}  // namespace wa
