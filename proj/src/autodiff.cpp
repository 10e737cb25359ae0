#include "kgforge/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kgforge/errors.hpp"

namespace kgforge {

Tensor::Tensor(std::vector<int> shape_, std::vector<real> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    if (n != size()) throw ShapeError("tensor data does not match shape " + shape_str());
}

Tensor Tensor::zeros(std::vector<int> shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<std::size_t>(n), 0);
    return t;
}

Tensor Tensor::scalar(real v) {
    Tensor t;
    t.shape = {1};
    t.data = {v};
    return t;
}

std::string Tensor::shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)) {
    grad = Tensor::zeros(value.shape);
}

void Parameter::zero_grad() {
    std::fill(grad.data.begin(), grad.data.end(), static_cast<real>(0));
}

NodeId Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::constant(Tensor v) {
    Node n;
    n.kind = OpKind::kConstant;
    n.value = std::move(v);
    n.needs_grad = false;
    return push(std::move(n));
}

NodeId Tape::leaf(Parameter& p) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) {
        throw ShapeError("matmul " + ta.shape_str() + " x " + tb.shape_str());
    }
    Node n;
    n.kind = OpKind::kMatmul;
    n.a = a;
    n.b = b;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.value = Tensor::zeros({ta.shape[0], tb.shape[1]});
    kernels::matmul_nn(ta.data.data(), tb.data.data(), n.value.data.data(), ta.shape[0],
                       ta.shape[1], tb.shape[1]);
    return push(std::move(n));
}

NodeId Tape::embedding_gather(NodeId table, std::vector<int> ids) {
    const Tensor& tt = nodes_[table].value;
    if (tt.rank() != 2) throw ShapeError("embedding_gather table " + tt.shape_str());
    const int d = tt.shape[1];
    for (int id : ids) {
        if (id < 0 || id >= tt.shape[0]) {
            throw ShapeError("embedding_gather id " + std::to_string(id) + " out of " +
                             std::to_string(tt.shape[0]) + " rows");
        }
    }
    Node n;
    n.kind = OpKind::kGather;
    n.a = table;
    n.needs_grad = nodes_[table].needs_grad;
    n.value = Tensor::zeros({static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const real* src = tt.data.data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, n.value.data.data() + i * static_cast<std::size_t>(d));
    }
    n.ints = std::move(ids);
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    Node n;
    n.kind = OpKind::kAdd;
    n.a = a;
    n.b = b;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    if (ta.same_shape(tb)) {
        n.value = ta;
        for (std::int64_t i = 0; i < ta.size(); ++i) n.value.data[static_cast<std::size_t>(i)] += tb.data[static_cast<std::size_t>(i)];
    } else if (tb.size() == 1) {
        n.value = ta;
        for (real& v : n.value.data) v += tb.data[0];
    } else if (ta.rank() == 2 && tb.rank() == 1 && tb.shape[0] == ta.shape[1]) {
        n.value = ta;
        const int r = ta.shape[0];
        const int c = ta.shape[1];
        for (int i = 0; i < r; ++i) {
            real* row = n.value.data.data() + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) row[j] += tb.data[static_cast<std::size_t>(j)];
        }
    } else {
        throw ShapeError("add " + ta.shape_str() + " + " + tb.shape_str());
    }
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    Node n;
    n.kind = OpKind::kMul;
    n.a = a;
    n.b = b;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    if (ta.same_shape(tb)) {
        n.value = ta;
        for (std::int64_t i = 0; i < ta.size(); ++i) n.value.data[static_cast<std::size_t>(i)] *= tb.data[static_cast<std::size_t>(i)];
    } else if (tb.size() == 1) {
        n.value = ta;
        for (real& v : n.value.data) v *= tb.data[0];
    } else if (ta.size() == 1) {
        n.value = tb;
        for (real& v : n.value.data) v *= ta.data[0];
    } else {
        throw ShapeError("mul " + ta.shape_str() + " * " + tb.shape_str());
    }
    return push(std::move(n));
}

namespace {

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
    Tensor y = x;
    for (real& v : y.data) v = f(v);
    return y;
}

}  // namespace

NodeId Tape::sigmoid(NodeId x) {
    Node n;
    n.kind = OpKind::kSigmoid;
    n.a = x;
    n.needs_grad = nodes_[x].needs_grad;
    n.value = map_unary(nodes_[x].value,
                        [](real v) { return static_cast<real>(1) / (static_cast<real>(1) + std::exp(-v)); });
    return push(std::move(n));
}

NodeId Tape::tanh(NodeId x) {
    Node n;
    n.kind = OpKind::kTanh;
    n.a = x;
    n.needs_grad = nodes_[x].needs_grad;
    n.value = map_unary(nodes_[x].value, [](real v) { return std::tanh(v); });
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n;
    n.kind = OpKind::kRelu;
    n.a = x;
    n.needs_grad = nodes_[x].needs_grad;
    n.value = map_unary(nodes_[x].value, [](real v) { return v > 0 ? v : static_cast<real>(0); });
    return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
    const Tensor& ta = nodes_[a].value;
    const Tensor& tb = nodes_[b].value;
    Node n;
    n.kind = OpKind::kConcat;
    n.a = a;
    n.b = b;
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    if (ta.rank() == 1 && tb.rank() == 1) {
        n.value = Tensor::zeros({ta.shape[0] + tb.shape[0]});
        std::copy(ta.data.begin(), ta.data.end(), n.value.data.begin());
        std::copy(tb.data.begin(), tb.data.end(), n.value.data.begin() + ta.size());
    } else if (ta.rank() == 2 && tb.rank() == 2 && ta.shape[0] == tb.shape[0]) {
        const int r = ta.shape[0];
        const int ca = ta.shape[1];
        const int cb = tb.shape[1];
        n.value = Tensor::zeros({r, ca + cb});
        for (int i = 0; i < r; ++i) {
            real* dst = n.value.data.data() + static_cast<std::size_t>(i) * (ca + cb);
            std::copy_n(ta.data.data() + static_cast<std::size_t>(i) * ca, ca, dst);
            std::copy_n(tb.data.data() + static_cast<std::size_t>(i) * cb, cb, dst + ca);
        }
    } else {
        throw ShapeError("concat " + ta.shape_str() + " ++ " + tb.shape_str());
    }
    return push(std::move(n));
}

NodeId Tape::mean_pool(NodeId x) {
    const Tensor& tx = nodes_[x].value;
    Node n;
    n.kind = OpKind::kMeanPool;
    n.a = x;
    n.needs_grad = nodes_[x].needs_grad;
    if (tx.rank() == 1) {
        real sum = std::accumulate(tx.data.begin(), tx.data.end(), static_cast<real>(0));
        n.value = Tensor::scalar(tx.size() > 0 ? sum / static_cast<real>(tx.size()) : 0);
    } else if (tx.rank() == 2) {
        const int r = tx.shape[0];
        const int c = tx.shape[1];
        if (r == 0) throw ShapeError("mean_pool of zero rows");
        n.value = Tensor::zeros({c});
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) n.value.data[static_cast<std::size_t>(j)] += tx.at(i, j);
        }
        for (real& v : n.value.data) v /= static_cast<real>(r);
    } else {
        throw ShapeError("mean_pool " + tx.shape_str());
    }
    return push(std::move(n));
}

NodeId Tape::mean_pool_segments(NodeId x, std::vector<int> segment_lengths) {
    const Tensor& tx = nodes_[x].value;
    if (tx.rank() != 2) throw ShapeError("mean_pool_segments " + tx.shape_str());
    const int total = std::accumulate(segment_lengths.begin(), segment_lengths.end(), 0);
    if (total != tx.shape[0]) {
        throw ShapeError("mean_pool_segments lengths sum " + std::to_string(total) + " vs " +
                         tx.shape_str());
    }
    const int c = tx.shape[1];
    Node n;
    n.kind = OpKind::kMeanPoolSegments;
    n.a = x;
    n.needs_grad = nodes_[x].needs_grad;
    n.value = Tensor::zeros({static_cast<int>(segment_lengths.size()), c});
    int row = 0;
    for (std::size_t s = 0; s < segment_lengths.size(); ++s) {
        const int len = segment_lengths[s];
        for (int i = 0; i < len; ++i, ++row) {
            for (int j = 0; j < c; ++j) n.value.at(static_cast<int>(s), j) += tx.at(row, j);
        }
        if (len > 0) {
            for (int j = 0; j < c; ++j) n.value.at(static_cast<int>(s), j) /= static_cast<real>(len);
        }
        // len == 0 pools to the zero row, the fixed convention for empty graphs
    }
    n.ints = std::move(segment_lengths);
    return push(std::move(n));
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::vector<int> targets,
                                   std::vector<std::uint8_t> mask, std::vector<real>* nll_out) {
    const Tensor& tl = nodes_[logits].value;
    if (tl.rank() != 2) throw ShapeError("softmax_cross_entropy logits " + tl.shape_str());
    const int r = tl.shape[0];
    const int c = tl.shape[1];
    if (static_cast<int>(targets.size()) != r || static_cast<int>(mask.size()) != r) {
        throw ShapeError("softmax_cross_entropy rows " + std::to_string(r) + " vs targets " +
                         std::to_string(targets.size()) + " / mask " + std::to_string(mask.size()));
    }
    Node n;
    n.kind = OpKind::kSce;
    n.a = logits;
    n.needs_grad = nodes_[logits].needs_grad;
    n.aux = Tensor::zeros({r, c});  // softmax probs, saved for backward
    if (nll_out != nullptr) nll_out->assign(static_cast<std::size_t>(r), 0);
    real total = 0;
    for (int i = 0; i < r; ++i) {
        const real* row = tl.data.data() + static_cast<std::size_t>(i) * c;
        real mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        real sum = 0;
        real* prow = n.aux.data.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        for (int j = 0; j < c; ++j) prow[j] /= sum;
        if (mask[static_cast<std::size_t>(i)] != 0) {
            const int t = targets[static_cast<std::size_t>(i)];
            if (t < 0 || t >= c) {
                throw ShapeError("softmax_cross_entropy target " + std::to_string(t) + " out of " +
                                 std::to_string(c));
            }
            const real nll = std::log(sum) + mx - row[t];
            total += nll;
            if (nll_out != nullptr) (*nll_out)[static_cast<std::size_t>(i)] = nll;
        }
    }
    n.value = Tensor::scalar(total);
    n.ints = std::move(targets);
    n.mask = std::move(mask);
    return push(std::move(n));
}

NodeId Tape::reparameterize(NodeId mu, NodeId log_var, Tensor noise) {
    const Tensor& tm = nodes_[mu].value;
    const Tensor& tv = nodes_[log_var].value;
    if (!tm.same_shape(tv) || !tm.same_shape(noise)) {
        throw ShapeError("reparameterize " + tm.shape_str() + " / " + tv.shape_str() + " / " +
                         noise.shape_str());
    }
    Node n;
    n.kind = OpKind::kReparam;
    n.a = mu;
    n.b = log_var;
    n.needs_grad = nodes_[mu].needs_grad || nodes_[log_var].needs_grad;
    n.value = tm;
    for (std::int64_t i = 0; i < tm.size(); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        n.value.data[idx] += std::exp(tv.data[idx] / 2) * noise.data[idx];
    }
    n.aux = std::move(noise);
    return push(std::move(n));
}

NodeId Tape::gaussian_kl(NodeId mu, NodeId log_var) {
    const Tensor& tm = nodes_[mu].value;
    const Tensor& tv = nodes_[log_var].value;
    if (!tm.same_shape(tv) || tm.rank() != 2) {
        throw ShapeError("gaussian_kl " + tm.shape_str() + " / " + tv.shape_str());
    }
    const int r = tm.shape[0];
    const int c = tm.shape[1];
    Node n;
    n.kind = OpKind::kGaussianKl;
    n.a = mu;
    n.b = log_var;
    n.needs_grad = nodes_[mu].needs_grad || nodes_[log_var].needs_grad;
    n.value = Tensor::zeros({r});
    for (int i = 0; i < r; ++i) {
        real acc = 0;
        for (int j = 0; j < c; ++j) {
            const real m = tm.at(i, j);
            const real lv = tv.at(i, j);
            acc += m * m + std::exp(lv) - 1 - lv;
        }
        n.value.data[static_cast<std::size_t>(i)] = acc / 2;
    }
    return push(std::move(n));
}

NodeId Tape::gru_cell(NodeId x, NodeId h_prev, const GruParamRefs& p) {
    const NodeId r = sigmoid(add(add(matmul(x, p.w_r), matmul(h_prev, p.u_r)), p.b_r));
    const NodeId z = sigmoid(add(add(matmul(x, p.w_z), matmul(h_prev, p.u_z)), p.b_z));
    const NodeId h_cand = tanh(add(add(matmul(x, p.w_h), matmul(mul(r, h_prev), p.u_h)), p.b_h));
    const NodeId neg_z = mul(z, constant(Tensor::scalar(-1)));
    const NodeId one_minus_z = add(neg_z, constant(Tensor::scalar(1)));
    return add(mul(one_minus_z, h_prev), mul(z, h_cand));
}

const Tensor& Tape::value(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
}

const Tensor& Tape::grad(NodeId id) const {
    return nodes_[static_cast<std::size_t>(id)].grad;
}

Tensor& Tape::grad_buffer(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.shape.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Tape::backward(NodeId root) {
    if (nodes_[static_cast<std::size_t>(root)].value.size() != 1) {
        throw ShapeError("backward root must be scalar, got " +
                         nodes_[static_cast<std::size_t>(root)].value.shape_str());
    }
    grad_buffer(root).data[0] = 1;
    for (NodeId id = root; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.shape.empty()) continue;
        backward_node(n);
        if (n.kind == OpKind::kLeaf && n.param != nullptr) {
            for (std::int64_t i = 0; i < n.grad.size(); ++i) {
                n.param->grad.data[static_cast<std::size_t>(i)] += n.grad.data[static_cast<std::size_t>(i)];
            }
        }
    }
}

void Tape::backward_node(Node& n) {
    const Tensor& g = n.grad;
    const auto needs = [&](NodeId id) {
        return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad;
    };
    switch (n.kind) {
        case OpKind::kConstant:
        case OpKind::kLeaf:
            break;
        case OpKind::kMatmul: {
            const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].value;
            const int m = a.shape[0];
            const int k = a.shape[1];
            const int c = b.shape[1];
            if (needs(n.a)) {
                kernels::matmul_nt_acc(g.data.data(), b.data.data(), grad_buffer(n.a).data.data(),
                                       m, c, k);
            }
            if (needs(n.b)) {
                kernels::matmul_tn_acc(a.data.data(), g.data.data(), grad_buffer(n.b).data.data(),
                                       m, k, c);
            }
            break;
        }
        case OpKind::kGather: {
            if (!needs(n.a)) break;
            Tensor& dt = grad_buffer(n.a);
            const int d = n.value.shape[1];
            for (std::size_t i = 0; i < n.ints.size(); ++i) {
                real* dst = dt.data.data() + static_cast<std::size_t>(n.ints[i]) * d;
                const real* src = g.data.data() + i * static_cast<std::size_t>(d);
                for (int j = 0; j < d; ++j) dst[j] += src[j];
            }
            break;
        }
        case OpKind::kAdd: {
            const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].value;
            if (needs(n.a)) {
                Tensor& da = grad_buffer(n.a);
                for (std::int64_t i = 0; i < g.size(); ++i) da.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(i)];
            }
            if (needs(n.b)) {
                Tensor& db = grad_buffer(n.b);
                if (a.same_shape(b)) {
                    for (std::int64_t i = 0; i < g.size(); ++i) db.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(i)];
                } else if (b.size() == 1) {
                    db.data[0] += std::accumulate(g.data.begin(), g.data.end(), static_cast<real>(0));
                } else {  // row-broadcast bias: sum over rows
                    const int r = a.shape[0];
                    const int c = a.shape[1];
                    for (int i = 0; i < r; ++i) {
                        for (int j = 0; j < c; ++j) db.data[static_cast<std::size_t>(j)] += g.at(i, j);
                    }
                }
            }
            break;
        }
        case OpKind::kMul: {
            const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].value;
            // d(one side) = g * other side, summed when that side is a
            // broadcast scalar.
            const auto side = [&](NodeId id, const Tensor& self, const Tensor& other) {
                if (!needs(id)) return;
                Tensor& dst = grad_buffer(id);
                if (self.size() == 1 && other.size() != 1) {
                    real acc = 0;
                    for (std::int64_t i = 0; i < g.size(); ++i) {
                        const auto idx = static_cast<std::size_t>(i);
                        acc += g.data[idx] * other.data[idx];
                    }
                    dst.data[0] += acc;
                } else {
                    for (std::int64_t i = 0; i < self.size(); ++i) {
                        const auto idx = static_cast<std::size_t>(i);
                        dst.data[idx] += g.data[idx] * (other.size() == 1 ? other.data[0] : other.data[idx]);
                    }
                }
            };
            side(n.a, a, b);
            side(n.b, b, a);
            break;
        }
        case OpKind::kSigmoid: {
            if (!needs(n.a)) break;
            Tensor& da = grad_buffer(n.a);
            for (std::int64_t i = 0; i < g.size(); ++i) {
                const auto idx = static_cast<std::size_t>(i);
                const real y = n.value.data[idx];
                da.data[idx] += g.data[idx] * y * (1 - y);
            }
            break;
        }
        case OpKind::kTanh: {
            if (!needs(n.a)) break;
            Tensor& da = grad_buffer(n.a);
            for (std::int64_t i = 0; i < g.size(); ++i) {
                const auto idx = static_cast<std::size_t>(i);
                const real y = n.value.data[idx];
                da.data[idx] += g.data[idx] * (1 - y * y);
            }
            break;
        }
        case OpKind::kRelu: {
            if (!needs(n.a)) break;
            Tensor& da = grad_buffer(n.a);
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            for (std::int64_t i = 0; i < g.size(); ++i) {
                const auto idx = static_cast<std::size_t>(i);
                if (x.data[idx] > 0) da.data[idx] += g.data[idx];
            }
            break;
        }
        case OpKind::kConcat: {
            const Tensor& a = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].value;
            if (a.rank() == 1) {
                if (needs(n.a)) {
                    Tensor& da = grad_buffer(n.a);
                    for (std::int64_t i = 0; i < a.size(); ++i) da.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(i)];
                }
                if (needs(n.b)) {
                    Tensor& db = grad_buffer(n.b);
                    for (std::int64_t i = 0; i < b.size(); ++i) {
                        db.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(i + a.size())];
                    }
                }
            } else {
                const int r = a.shape[0];
                const int ca = a.shape[1];
                const int cb = b.shape[1];
                if (needs(n.a)) {
                    Tensor& da = grad_buffer(n.a);
                    for (int i = 0; i < r; ++i) {
                        for (int j = 0; j < ca; ++j) da.at(i, j) += g.at(i, j);
                    }
                }
                if (needs(n.b)) {
                    Tensor& db = grad_buffer(n.b);
                    for (int i = 0; i < r; ++i) {
                        for (int j = 0; j < cb; ++j) db.at(i, j) += g.at(i, ca + j);
                    }
                }
            }
            break;
        }
        case OpKind::kMeanPool: {
            if (!needs(n.a)) break;
            Tensor& da = grad_buffer(n.a);
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            if (x.rank() == 1) {
                const real w = g.data[0] / static_cast<real>(x.size());
                for (real& v : da.data) v += w;
            } else {
                const int r = x.shape[0];
                const int c = x.shape[1];
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) da.at(i, j) += g.data[static_cast<std::size_t>(j)] / static_cast<real>(r);
                }
            }
            break;
        }
        case OpKind::kMeanPoolSegments: {
            if (!needs(n.a)) break;
            Tensor& da = grad_buffer(n.a);
            const int c = n.value.shape[1];
            int row = 0;
            for (std::size_t s = 0; s < n.ints.size(); ++s) {
                const int len = n.ints[s];
                for (int i = 0; i < len; ++i, ++row) {
                    for (int j = 0; j < c; ++j) {
                        da.at(row, j) += g.at(static_cast<int>(s), j) / static_cast<real>(len);
                    }
                }
            }
            break;
        }
        case OpKind::kSce: {
            if (!needs(n.a)) break;
            Tensor& da = grad_buffer(n.a);
            const int r = n.aux.shape[0];
            const int c = n.aux.shape[1];
            const real up = g.data[0];
            for (int i = 0; i < r; ++i) {
                if (n.mask[static_cast<std::size_t>(i)] == 0) continue;  // masked-out rows get exactly zero
                const real* prow = n.aux.data.data() + static_cast<std::size_t>(i) * c;
                real* drow = da.data.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) drow[j] += up * prow[j];
                drow[n.ints[static_cast<std::size_t>(i)]] -= up;
            }
            break;
        }
        case OpKind::kReparam: {
            const Tensor& lv = nodes_[static_cast<std::size_t>(n.b)].value;
            if (needs(n.a)) {
                Tensor& dm = grad_buffer(n.a);
                for (std::int64_t i = 0; i < g.size(); ++i) dm.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(i)];
            }
            if (needs(n.b)) {
                Tensor& dv = grad_buffer(n.b);
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    const auto idx = static_cast<std::size_t>(i);
                    dv.data[idx] += g.data[idx] * std::exp(lv.data[idx] / 2) * n.aux.data[idx] / 2;
                }
            }
            break;
        }
        case OpKind::kGaussianKl: {
            const Tensor& mu = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& lv = nodes_[static_cast<std::size_t>(n.b)].value;
            const int r = mu.shape[0];
            const int c = mu.shape[1];
            if (needs(n.a)) {
                Tensor& dm = grad_buffer(n.a);
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) dm.at(i, j) += g.data[static_cast<std::size_t>(i)] * mu.at(i, j);
                }
            }
            if (needs(n.b)) {
                Tensor& dv = grad_buffer(n.b);
                for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                        dv.at(i, j) += g.data[static_cast<std::size_t>(i)] * (std::exp(lv.at(i, j)) - 1) / 2;
                    }
                }
            }
            break;
        }
    }
}

void Adam::step(std::vector<Parameter*>& params) {
    if (m_.empty()) {
        for (Parameter* p : params) {
            m_.push_back(Tensor::zeros(p->value.shape));
            v_.push_back(Tensor::zeros(p->value.shape));
        }
    }
    if (m_.size() != params.size()) throw Error("adam: parameter list changed size");

    real sq_norm = 0;
    for (const Parameter* p : params) {
        for (real gi : p->grad.data) {
            if (!std::isfinite(gi)) throw NonFiniteGradient("parameter " + p->name);
            sq_norm += gi * gi;
        }
    }
    real scale = 1;
    if (cfg_.clip_norm > 0) {
        const real norm = std::sqrt(sq_norm);
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }

    ++t_;
    const real bc1 = 1 - std::pow(cfg_.beta1, static_cast<real>(t_));
    const real bc2 = 1 - std::pow(cfg_.beta2, static_cast<real>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const real gi = p.grad.data[i] * scale;
            m.data[i] = cfg_.beta1 * m.data[i] + (1 - cfg_.beta1) * gi;
            v.data[i] = cfg_.beta2 * v.data[i] + (1 - cfg_.beta2) * gi * gi;
            const real m_hat = m.data[i] / bc1;
            const real v_hat = v.data[i] / bc2;
            p.value.data[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
        if (cfg_.weight_decay > 0 && p.value.rank() == 2) {
            const real shrink = 1 - cfg_.lr * cfg_.weight_decay;
            for (real& w : p.value.data) w *= shrink;
        }
    }
}

GradCheckResult check_gradients(const std::function<real(bool)>& loss,
                                std::vector<Parameter*> params, double tolerance,
                                double fd_step) {
    GradCheckResult result;
    result.tolerance = tolerance;

    for (Parameter* p : params) p->zero_grad();
    loss(true);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const real saved = p.value.data[i];
            p.value.data[i] = saved + static_cast<real>(fd_step);
            const double lp = loss(false);
            p.value.data[i] = saved - static_cast<real>(fd_step);
            const double lm = loss(false);
            p.value.data[i] = saved;

            const double fd = (lp - lm) / (2 * fd_step);
            const double an = analytic[k].data[i];
            const double diff = std::abs(fd - an);
            // Differences under the 1e-8 absolute floor count as exact.
            const double rel = diff <= 1e-8 ? 0.0 : diff / std::max({std::abs(fd), std::abs(an), 1e-12});
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_parameter = p.name;
                result.worst_index = static_cast<std::int64_t>(i);
            }
        }
    }
    result.passed = result.max_rel_error <= tolerance;
    return result;
}

}  // namespace kgforge
