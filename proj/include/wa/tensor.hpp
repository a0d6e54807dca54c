#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "wa/rng.hpp"

namespace wa {

class Tape;

// Dense row-major f64 tensor. Copies share storage; forward ops never
// mutate their inputs. A tensor participates in reverse-mode autodiff when
// it carries a node handle on a live Tape.
class Tensor {
  public:
    Tensor();
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    int size() const { return static_cast<int>(data_->size()); }

    std::vector<double>& values() { return *data_; }
    const std::vector<double>& values() const { return *data_; }
    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }

    double value() const;  // scalar tensors only
    double at(int i) const { return (*data_)[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const { return (*data_)[static_cast<std::size_t>(i * shape_[1] + j)]; }

    bool tracked() const { return node_ >= 0; }
    int node() const { return node_; }
    Tape* tape() const { return tape_; }

    // Same storage, no tape participation.
    Tensor detached() const;
    // Same storage and node, reinterpreted shape (element count must match).
    Tensor reshaped(std::vector<int> new_shape) const;

    bool all_finite() const;

  private:
    friend class Tape;
    void bind(Tape* tape, int node) {
        tape_ = tape;
        node_ = node;
    }

    std::vector<int> shape_;
    std::shared_ptr<std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

std::string shape_str(const std::vector<int>& shape);

// Reverse-mode tape, built per forward pass and discarded afterwards.
// Nodes are recorded in creation order, which is a topological order by
// construction; backward walks it once in reverse.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, const std::vector<double>&)>;

    // Registers a tensor as a differentiable leaf (shares its storage).
    Tensor leaf(const Tensor& values);

    int record(std::vector<int> parents, int output_size, BackwardFn fn);
    void bind_output(Tensor& t, int node) { t.bind(this, node); }

    // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
    // reachable node. Throws if loss is not a scalar on this tape.
    void backward(const Tensor& loss);

    bool has_grad(const Tensor& t) const;
    // Gradient of the last backward() w.r.t. t; zeros if unreached.
    std::vector<double> grad_of(const Tensor& t) const;
    std::vector<double>& grad_buf(int node);

    int node_count() const { return static_cast<int>(nodes_.size()); }
    long backward_visits() const { return visits_; }
    bool topological_order_ok() const;

  private:
    struct Node {
        std::vector<int> parents;
        int size = 0;
        BackwardFn fn;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    long visits_ = 0;
};

// ---- elementwise and linear algebra ops (all autodiff-aware) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// m (R x C) + v (C) broadcast over rows
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// (nb*B x C) -> (nb x C), mean over each block of B consecutive rows
Tensor mean_blocks(const Tensor& m, int block_rows);
// cumulative sum of rows within each block of B consecutive rows
Tensor cumsum_blocks(const Tensor& m, int block_rows);
Tensor slice_rows(const Tensor& m, int r0, int r1);
Tensor slice_cols(const Tensor& m, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// softmax(q k^T / sqrt(d)) v
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// ---- losses (target tensors are treated as constants) ----

Tensor smooth_l1_mean(const Tensor& pred, const Tensor& target);
Tensor bce_logits_mean(const Tensor& logits, const Tensor& targets);
// logsumexp(z) - z[index]
Tensor cross_entropy_index(const Tensor& logits, int index);
Tensor mse_mean(const Tensor& pred, const Tensor& target);

// e[2i] = sin(t / 10000^(2i/dim)), e[2i+1] = cos(t / 10000^(2i/dim))
Tensor sinusoidal_embedding(long t, int dim);

// ---- AdamW with fully decoupled weight decay ----

struct AdamWHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
  public:
    explicit AdamW(AdamWHyper hp = {}) : hp_(hp) {}

    // Applies one update to every entry of params; missing grads count as
    // zero (decay still applies). Iteration order is the map's name order.
    void step(std::map<std::string, Tensor>& params,
              const std::map<std::string, std::vector<double>>& grads);

    long steps_done() const { return t_; }
    const AdamWHyper& hyper() const { return hp_; }

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamWHyper hp_;
    long t_ = 0;
    std::map<std::string, Moments> slots_;
};

}  // namespace wa
