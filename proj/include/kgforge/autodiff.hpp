#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kgforge/kernels.hpp"

namespace kgforge {

// Dense row-major tensor. Rank 1 and 2 cover everything the models need;
// scalars are shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<real> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<real> data_);

    static Tensor zeros(std::vector<int> shape);
    static Tensor scalar(real v);

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return rank() == 2 ? shape[1] : 1; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;

    real& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    real at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }
};

// Trainable value: gradients accumulate additively and are zeroed explicitly
// between steps.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string name_, Tensor value_);
    void zero_grad();
};

using NodeId = int;

struct GruParamRefs {
    NodeId w_r, u_r, b_r;
    NodeId w_z, u_z, b_z;
    NodeId w_h, u_h, b_h;
};

// Reverse-mode tape. One tape per training step, confined to one thread;
// backward visits nodes in exact reverse execution order and accumulates
// leaf adjoints into the bound Parameters' grad slots.
class Tape {
  public:
    Tape() = default;

    NodeId constant(Tensor v);
    NodeId leaf(Parameter& p);

    // c[m,n] = a[m,k] b[k,n]
    NodeId matmul(NodeId a, NodeId b);
    // rows of table selected by ids; backward scatter-adds into the table
    NodeId embedding_gather(NodeId table, std::vector<int> ids);
    // same shape, or a[r,c] + b[c] (row broadcast), or X + b[1] (scalar)
    NodeId add(NodeId a, NodeId b);
    // same shape, or either side a scalar {1}
    NodeId mul(NodeId a, NodeId b);
    NodeId sigmoid(NodeId x);
    NodeId tanh(NodeId x);
    NodeId relu(NodeId x);
    // last axis; both 2-D with equal row counts (or both 1-D)
    NodeId concat(NodeId a, NodeId b);
    // mean over the row axis: (n,d) -> {d}; 1-D (n) -> {1}
    NodeId mean_pool(NodeId x);
    // per-segment row means: (N,d) with lengths summing to N -> (S,d);
    // an empty segment pools to a zero row
    NodeId mean_pool_segments(NodeId x, std::vector<int> segment_lengths);
    // sum over masked rows of -log softmax(logits)[target]; returns {1}.
    // nll_out (optional) receives the per-row nats, 0 where masked out.
    NodeId softmax_cross_entropy(NodeId logits, std::vector<int> targets,
                                 std::vector<std::uint8_t> mask,
                                 std::vector<real>* nll_out = nullptr);
    // z = mu + exp(log_var / 2) * noise; gradient flows to mu and log_var
    NodeId reparameterize(NodeId mu, NodeId log_var, Tensor noise);
    // per-row 0.5 * sum_i (mu^2 + exp(lv) - 1 - lv) in nats: (B,d) -> {B}
    NodeId gaussian_kl(NodeId mu, NodeId log_var);

    // One recurrence step composed from the primitives above; x is (B,in),
    // h_prev (B,d), weights (in,d)/(d,d), biases {d}.
    NodeId gru_cell(NodeId x, NodeId h_prev, const GruParamRefs& p);

    const Tensor& value(NodeId id) const;
    const Tensor& grad(NodeId id) const;

    // root must be scalar {1}
    void backward(NodeId root);

    std::size_t node_count() const { return nodes_.size(); }

  private:
    enum class OpKind {
        kConstant,
        kLeaf,
        kMatmul,
        kGather,
        kAdd,
        kMul,
        kSigmoid,
        kTanh,
        kRelu,
        kConcat,
        kMeanPool,
        kMeanPoolSegments,
        kSce,
        kReparam,
        kGaussianKl,
    };

    struct Node {
        Tensor value;
        Tensor grad;
        OpKind kind;
        NodeId a = -1;
        NodeId b = -1;
        bool needs_grad = false;
        Parameter* param = nullptr;
        std::vector<int> ints;
        std::vector<std::uint8_t> mask;
        Tensor aux;  // op-specific saved state (softmax probs, noise)
    };

    NodeId push(Node n);
    void backward_node(Node& n);
    Tensor& grad_buffer(NodeId id);

    std::vector<Node> nodes_;
};

// Bias-corrected Adam over a fixed parameter list. Scans for non-finite
// gradients before touching anything and throws NonFiniteGradient with the
// offending name, leaving parameters and moments untouched.
class Adam {
  public:
    struct Config {
        real lr = static_cast<real>(1e-3);
        real beta1 = static_cast<real>(0.9);
        real beta2 = static_cast<real>(0.999);
        real eps = static_cast<real>(1e-8);
        real clip_norm = 0;      // 0 disables global gradient-norm clipping
        real weight_decay = 0;   // decoupled decay on matrices (rank-2), not biases
    };

    explicit Adam(Config cfg) : cfg_(cfg) {}

    void step(std::vector<Parameter*>& params);
    std::int64_t step_count() const { return t_; }
    const Config& config() const { return cfg_; }
    void set_lr(real lr) { cfg_.lr = lr; }

  private:
    Config cfg_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

struct GradCheckResult {
    bool passed = false;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    std::string worst_parameter;
    std::int64_t worst_index = -1;
};

// Compares reverse-mode gradients against central finite differences.
// loss(bool with_grad): rebuilds the forward pass from the current parameter
// values; when with_grad it must also run backward so grads accumulate.
GradCheckResult check_gradients(const std::function<real(bool)>& loss,
                                std::vector<Parameter*> params, double tolerance,
                                double fd_step = 1e-5);

}  // namespace kgforge
