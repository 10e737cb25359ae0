#include "kgforge/models.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "kgforge/errors.hpp"
#include "kgforge/log.hpp"

namespace fs = std::filesystem;

namespace kgforge {

namespace {

// Substream tags so initialization, permutations, shuffles and noise never
// alias each other.
constexpr std::uint64_t kInitTag = 0x696e6974;     // "init"
constexpr std::uint64_t kPermTag = 0x7065726d;     // "perm"
constexpr std::uint64_t kShuffleTag = 0x73687566;  // "shuf"
constexpr std::uint64_t kNoiseTag = 0x6e6f6973;    // "nois"
constexpr std::uint64_t kValTag = 0x76616c;        // "val"

Tensor glorot_uniform(int fan_in, int fan_out, Rng& rng) {
    Tensor t = Tensor::zeros({fan_in, fan_out});
    const real bound = std::sqrt(static_cast<real>(6) / static_cast<real>(fan_in + fan_out));
    for (real& v : t.data) v = static_cast<real>((rng.next_double() * 2 - 1) * bound);
    return t;
}

// random rotation: modified Gram-Schmidt over a square Gaussian draw
Tensor orthogonal_square(int d, Rng& rng) {
    Tensor t = Tensor::zeros({d, d});
    for (real& v : t.data) v = static_cast<real>(rng.next_normal());
    for (int c = 0; c < d; ++c) {
        for (int prev = 0; prev < c; ++prev) {
            real dot = 0;
            for (int i = 0; i < d; ++i) dot += t.at(i, c) * t.at(i, prev);
            for (int i = 0; i < d; ++i) t.at(i, c) -= dot * t.at(i, prev);
        }
        real norm = 0;
        for (int i = 0; i < d; ++i) norm += t.at(i, c) * t.at(i, c);
        norm = std::sqrt(norm);
        for (int i = 0; i < d; ++i) t.at(i, c) /= norm;
    }
    return t;
}

Tensor embedding_init(int rows, int cols, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    for (real& v : t.data) v = static_cast<real>(rng.next_normal() * 0.02);
    return t;
}

GruLayer make_gru_layer(const std::string& prefix, int in_dim, int d, std::uint64_t seed,
                        std::uint64_t& counter, bool orthogonal_recurrent) {
    const auto mat = [&](const char* name, int fi, int fo) {
        Rng rng = Rng::stream(seed, {kInitTag, counter++});
        return Parameter(prefix + "." + name, glorot_uniform(fi, fo, rng));
    };
    const auto recur = [&](const char* name) {
        Rng rng = Rng::stream(seed, {kInitTag, counter++});
        return Parameter(prefix + "." + name, orthogonal_recurrent ? orthogonal_square(d, rng)
                                                                   : glorot_uniform(d, d, rng));
    };
    const auto bias = [&](const char* name, int dim) {
        ++counter;
        return Parameter(prefix + "." + name, Tensor::zeros({dim}));
    };
    GruLayer l{
        mat("w_r", in_dim, d), recur("u_r"), bias("b_r", d),
        mat("w_z", in_dim, d), recur("u_z"), bias("b_z", d),
        mat("w_h", in_dim, d), recur("u_h"), bias("b_h", d),
    };
    return l;
}

void collect(std::vector<Parameter*>& out, GruLayer& l) {
    for (Parameter* p : {&l.w_r, &l.u_r, &l.b_r, &l.w_z, &l.u_z, &l.b_z, &l.w_h, &l.u_h, &l.b_h}) {
        out.push_back(p);
    }
}

std::vector<int> batch_column(const Batch& batch, int col) {
    std::vector<int> ids(static_cast<std::size_t>(batch.rows));
    for (int r = 0; r < batch.rows; ++r) ids[static_cast<std::size_t>(r)] = batch.token_at(r, col);
    return ids;
}

std::vector<std::uint8_t> mask_column(const Batch& batch, int col) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(batch.rows));
    for (int r = 0; r < batch.rows; ++r) {
        m[static_cast<std::size_t>(r)] = batch.mask[static_cast<std::size_t>(r) * (batch.l_max - 1) + col];
    }
    return m;
}

// y += x * W for row-major W[in, out]
void affine_acc(const std::vector<real>& x, const Tensor& w, std::vector<real>& y) {
    const int in = w.shape[0];
    const int out = w.shape[1];
    for (int i = 0; i < in; ++i) {
        const real xi = x[static_cast<std::size_t>(i)];
        if (xi == 0) continue;
        const real* wrow = w.data.data() + static_cast<std::size_t>(i) * out;
        for (int j = 0; j < out; ++j) y[static_cast<std::size_t>(j)] += xi * wrow[j];
    }
}

void gru_step_raw(const std::vector<real>& x, std::vector<real>& h, const GruLayer& layer, int d) {
    std::vector<real> r(layer.b_r.value.data.begin(), layer.b_r.value.data.end());
    std::vector<real> z(layer.b_z.value.data.begin(), layer.b_z.value.data.end());
    std::vector<real> hc(layer.b_h.value.data.begin(), layer.b_h.value.data.end());
    affine_acc(x, layer.w_r.value, r);
    affine_acc(h, layer.u_r.value, r);
    affine_acc(x, layer.w_z.value, z);
    affine_acc(h, layer.u_z.value, z);
    for (int j = 0; j < d; ++j) {
        r[static_cast<std::size_t>(j)] = 1 / (1 + std::exp(-r[static_cast<std::size_t>(j)]));
        z[static_cast<std::size_t>(j)] = 1 / (1 + std::exp(-z[static_cast<std::size_t>(j)]));
    }
    std::vector<real> rh(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) rh[static_cast<std::size_t>(j)] = r[static_cast<std::size_t>(j)] * h[static_cast<std::size_t>(j)];
    affine_acc(x, layer.w_h.value, hc);
    affine_acc(rh, layer.u_h.value, hc);
    for (int j = 0; j < d; ++j) {
        const auto idx = static_cast<std::size_t>(j);
        hc[idx] = std::tanh(hc[idx]);
        h[idx] = (1 - z[idx]) * h[idx] + z[idx] * hc[idx];
    }
}

}  // namespace

double kl_bits(const LatentDistribution& dist) {
    double nats = 0;
    for (std::size_t i = 0; i < dist.mu.size(); ++i) {
        const double m = dist.mu[i];
        const double lv = dist.log_var[i];
        nats += m * m + std::exp(lv) - 1 - lv;
    }
    return nats / 2 * M_LOG2E;
}

std::vector<real> reparameterize(const LatentDistribution& dist, const std::vector<real>& noise) {
    std::vector<real> z(dist.mu.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = dist.mu[i] + std::exp(dist.log_var[i] / 2) * noise[i];
    }
    return z;
}

ArkModel::ArkModel(int vocab_size, int d_model, int n_layers, std::uint64_t init_seed,
                   bool orthogonal_recurrent)
    : vocab_size_(vocab_size), d_model_(d_model), n_layers_(n_layers) {
    std::uint64_t counter = 0;
    {
        Rng rng = Rng::stream(init_seed, {kInitTag, counter++});
        embed_ = Parameter("embed", embedding_init(vocab_size, d_model, rng));
    }
    for (int l = 0; l < n_layers; ++l) {
        layers_.push_back(make_gru_layer("gru" + std::to_string(l), d_model, d_model, init_seed,
                                         counter, orthogonal_recurrent));
    }
    {
        Rng rng = Rng::stream(init_seed, {kInitTag, counter++});
        out_w_ = Parameter("out.w", glorot_uniform(d_model, vocab_size, rng));
        out_b_ = Parameter("out.b", Tensor::zeros({vocab_size}));
    }
}

std::vector<Parameter*> ArkModel::parameters() {
    std::vector<Parameter*> out;
    out.push_back(&embed_);
    for (GruLayer& l : layers_) collect(out, l);
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
}

std::vector<const Parameter*> ArkModel::parameters() const {
    auto mut = const_cast<ArkModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<NodeId> ArkModel::forward(Tape& tape, const Batch& batch) const {
    auto* self = const_cast<ArkModel*>(this);
    for (int r = 0; r < batch.rows; ++r) {
        for (int c = 0; c < batch.l_max; ++c) {
            const int tok = batch.token_at(r, c);
            if (tok < 0 || tok >= vocab_size_) {
                throw VocabularyMiss("token id " + std::to_string(tok));
            }
        }
    }
    const NodeId embed = tape.leaf(self->embed_);
    const NodeId out_w = tape.leaf(self->out_w_);
    const NodeId out_b = tape.leaf(self->out_b_);
    std::vector<GruParamRefs> refs;
    for (GruLayer& l : self->layers_) {
        refs.push_back({tape.leaf(l.w_r), tape.leaf(l.u_r), tape.leaf(l.b_r), tape.leaf(l.w_z),
                        tape.leaf(l.u_z), tape.leaf(l.b_z), tape.leaf(l.w_h), tape.leaf(l.u_h),
                        tape.leaf(l.b_h)});
    }
    std::vector<NodeId> h(static_cast<std::size_t>(n_layers_),
                          tape.constant(Tensor::zeros({batch.rows, d_model_})));
    std::vector<NodeId> logits;
    logits.reserve(static_cast<std::size_t>(batch.l_max - 1));
    for (int t = 0; t < batch.l_max - 1; ++t) {
        NodeId x = tape.embedding_gather(embed, batch_column(batch, t));
        for (int l = 0; l < n_layers_; ++l) {
            h[static_cast<std::size_t>(l)] = tape.gru_cell(x, h[static_cast<std::size_t>(l)], refs[static_cast<std::size_t>(l)]);
            x = h[static_cast<std::size_t>(l)];
        }
        logits.push_back(tape.add(tape.matmul(x, out_w), out_b));
    }
    return logits;
}

ArkModel::LossResult ArkModel::loss(Tape& tape, const Batch& batch) const {
    std::int64_t mask_total = 0;
    for (std::uint8_t m : batch.mask) mask_total += m;
    if (mask_total == 0) throw EmptyMask();

    const std::vector<NodeId> logits = forward(tape, batch);
    LossResult result;
    result.mask_count = static_cast<double>(mask_total);
    result.graph_bits.assign(static_cast<std::size_t>(batch.rows), 0);

    NodeId total = -1;
    std::vector<real> nll;
    for (int t = 0; t < batch.l_max - 1; ++t) {
        const NodeId part = tape.softmax_cross_entropy(logits[static_cast<std::size_t>(t)],
                                                       batch_column(batch, t + 1),
                                                       mask_column(batch, t), &nll);
        for (int r = 0; r < batch.rows; ++r) {
            result.graph_bits[static_cast<std::size_t>(r)] += nll[static_cast<std::size_t>(r)] / M_LN2;
        }
        total = (total < 0) ? part : tape.add(total, part);
    }
    result.loss_node = tape.mul(total, tape.constant(Tensor::scalar(static_cast<real>(1.0 / result.mask_count))));
    result.loss_nats = tape.value(result.loss_node).data[0];
    return result;
}

DecodeState ArkModel::initial_state() const {
    DecodeState s;
    s.h.assign(static_cast<std::size_t>(n_layers_), std::vector<real>(static_cast<std::size_t>(d_model_), 0));
    return s;
}

void ArkModel::step(DecodeState& state, int token, std::vector<real>& logits) const {
    if (token < 0 || token >= vocab_size_) throw VocabularyMiss("token id " + std::to_string(token));
    std::vector<real> x(embed_.value.data.begin() + static_cast<std::size_t>(token) * d_model_,
                        embed_.value.data.begin() + static_cast<std::size_t>(token + 1) * d_model_);
    for (int l = 0; l < n_layers_; ++l) {
        gru_step_raw(x, state.h[static_cast<std::size_t>(l)], layers_[static_cast<std::size_t>(l)], d_model_);
        x = state.h[static_cast<std::size_t>(l)];
    }
    logits.assign(out_b_.value.data.begin(), out_b_.value.data.end());
    affine_acc(x, out_w_.value, logits);
}

SailModel::SailModel(int n_entities, int n_relations, int d_model, int n_layers, int d_z,
                     int broadcast_width, std::uint64_t init_seed, bool orthogonal_recurrent)
    : n_entities_(n_entities),
      n_relations_(n_relations),
      d_model_(d_model),
      n_layers_(n_layers),
      d_z_(d_z),
      broadcast_width_(broadcast_width) {
    std::uint64_t counter = 0;
    const auto stream = [&] { return Rng::stream(init_seed, {kInitTag, counter++}); };
    {
        Rng rng = stream();
        enc_embed_e_ = Parameter("enc.embed_e", embedding_init(n_entities, d_model, rng));
    }
    {
        Rng rng = stream();
        enc_embed_r_ = Parameter("enc.embed_r", embedding_init(n_relations, d_model, rng));
    }
    for (int l = 0; l < n_layers; ++l) {
        const int in_dim = l == 0 ? 3 * d_model : d_model;
        Rng rng = stream();
        enc_w_.emplace_back("enc.mlp" + std::to_string(l) + ".w", glorot_uniform(in_dim, d_model, rng));
        enc_b_.emplace_back("enc.mlp" + std::to_string(l) + ".b", Tensor::zeros({d_model}));
        ++counter;
    }
    {
        Rng rng = stream();
        mu_w_ = Parameter("enc.mu.w", glorot_uniform(d_model, d_z, rng));
        mu_b_ = Parameter("enc.mu.b", Tensor::zeros({d_z}));
        ++counter;
    }
    {
        Rng rng = stream();
        logvar_w_ = Parameter("enc.logvar.w", glorot_uniform(d_model, d_z, rng));
        logvar_b_ = Parameter("enc.logvar.b", Tensor::zeros({d_z}));
        ++counter;
    }
    {
        Rng rng = stream();
        dec_embed_ = Parameter("dec.embed", embedding_init(vocab_size(), d_model, rng));
    }
    {
        Rng rng = stream();
        init_w_ = Parameter("dec.init.w", glorot_uniform(d_z, d_model, rng));
        init_b_ = Parameter("dec.init.b", Tensor::zeros({d_model}));
        ++counter;
    }
    {
        Rng rng = stream();
        broadcast_w_ = Parameter("dec.broadcast.w", glorot_uniform(d_z, broadcast_width, rng));
    }
    for (int l = 0; l < n_layers; ++l) {
        const int in_dim = l == 0 ? d_model + broadcast_width : d_model;
        layers_.push_back(make_gru_layer("dec.gru" + std::to_string(l), in_dim, d_model, init_seed,
                                         counter, orthogonal_recurrent));
    }
    {
        Rng rng = stream();
        out_w_ = Parameter("out.w", glorot_uniform(d_model, vocab_size(), rng));
        out_b_ = Parameter("out.b", Tensor::zeros({vocab_size()}));
    }
}

std::vector<Parameter*> SailModel::parameters() {
    std::vector<Parameter*> out;
    out.push_back(&enc_embed_e_);
    out.push_back(&enc_embed_r_);
    for (std::size_t l = 0; l < enc_w_.size(); ++l) {
        out.push_back(&enc_w_[l]);
        out.push_back(&enc_b_[l]);
    }
    for (Parameter* p : {&mu_w_, &mu_b_, &logvar_w_, &logvar_b_, &dec_embed_, &init_w_, &init_b_,
                         &broadcast_w_}) {
        out.push_back(p);
    }
    for (GruLayer& l : layers_) collect(out, l);
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    return out;
}

std::vector<const Parameter*> SailModel::parameters() const {
    auto mut = const_cast<SailModel*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

namespace {

// Entity/relation table indices for every triple of every graph, in the
// graphs' canonical order; throws VocabularyMiss when a slot id is of the
// wrong kind.
struct TripleIds {
    std::vector<int> heads, rels, tails;
    std::vector<int> seg_lens;
};

TripleIds collect_triple_ids(const std::vector<KnowledgeGraph>& graphs, const Vocabulary& vocab) {
    TripleIds ids;
    for (const KnowledgeGraph& g : graphs) {
        ids.seg_lens.push_back(static_cast<int>(g.size()));
        for (const Triple& t : g.triples()) {
            if (!vocab.is_entity(t.head) || !vocab.is_relation(t.relation) || !vocab.is_entity(t.tail)) {
                throw VocabularyMiss("triple (" + std::to_string(t.head) + "," +
                                     std::to_string(t.relation) + "," + std::to_string(t.tail) +
                                     ") is not (entity, relation, entity)");
            }
            ids.heads.push_back(vocab.entity_index(t.head));
            ids.rels.push_back(vocab.relation_index(t.relation));
            ids.tails.push_back(vocab.entity_index(t.tail));
        }
    }
    return ids;
}

}  // namespace

SailModel::EncodeNodes SailModel::encode(Tape& tape, const std::vector<KnowledgeGraph>& graphs,
                                         const Vocabulary& vocab) const {
    auto* self = const_cast<SailModel*>(this);
    TripleIds ids = collect_triple_ids(graphs, vocab);

    const NodeId ee = tape.leaf(self->enc_embed_e_);
    const NodeId er = tape.leaf(self->enc_embed_r_);
    NodeId pooled;
    if (ids.heads.empty()) {
        // all graphs empty: pooled input is the zero vector convention
        pooled = tape.constant(Tensor::zeros({static_cast<int>(graphs.size()), 3 * d_model_}));
    } else {
        const NodeId gh = tape.embedding_gather(ee, ids.heads);
        const NodeId gr = tape.embedding_gather(er, ids.rels);
        const NodeId gt = tape.embedding_gather(ee, ids.tails);
        const NodeId trip = tape.concat(tape.concat(gh, gr), gt);
        pooled = tape.mean_pool_segments(trip, ids.seg_lens);
    }
    NodeId h = pooled;
    for (std::size_t l = 0; l < enc_w_.size(); ++l) {
        h = tape.relu(tape.add(tape.matmul(h, tape.leaf(self->enc_w_[l])), tape.leaf(self->enc_b_[l])));
    }
    EncodeNodes nodes;
    nodes.mu = tape.add(tape.matmul(h, tape.leaf(self->mu_w_)), tape.leaf(self->mu_b_));
    nodes.log_var = tape.add(tape.matmul(h, tape.leaf(self->logvar_w_)), tape.leaf(self->logvar_b_));
    return nodes;
}

LatentDistribution SailModel::encode(const KnowledgeGraph& graph, const Vocabulary& vocab) const {
    TripleIds ids = collect_triple_ids({graph}, vocab);
    std::vector<real> pooled(static_cast<std::size_t>(3 * d_model_), 0);
    const std::size_t n = ids.heads.size();
    for (std::size_t i = 0; i < n; ++i) {
        const real* he = enc_embed_e_.value.data.data() + static_cast<std::size_t>(ids.heads[i]) * d_model_;
        const real* re = enc_embed_r_.value.data.data() + static_cast<std::size_t>(ids.rels[i]) * d_model_;
        const real* te = enc_embed_e_.value.data.data() + static_cast<std::size_t>(ids.tails[i]) * d_model_;
        for (int j = 0; j < d_model_; ++j) {
            pooled[static_cast<std::size_t>(j)] += he[j];
            pooled[static_cast<std::size_t>(j) + d_model_] += re[j];
            pooled[static_cast<std::size_t>(j) + 2 * d_model_] += te[j];
        }
    }
    if (n > 0) {
        for (real& v : pooled) v /= static_cast<real>(n);
    }
    std::vector<real> h = std::move(pooled);
    for (std::size_t l = 0; l < enc_w_.size(); ++l) {
        std::vector<real> next(enc_b_[l].value.data.begin(), enc_b_[l].value.data.end());
        affine_acc(h, enc_w_[l].value, next);
        for (real& v : next) v = v > 0 ? v : 0;
        h = std::move(next);
    }
    LatentDistribution dist;
    dist.mu.assign(mu_b_.value.data.begin(), mu_b_.value.data.end());
    dist.log_var.assign(logvar_b_.value.data.begin(), logvar_b_.value.data.end());
    affine_acc(h, mu_w_.value, dist.mu);
    affine_acc(h, logvar_w_.value, dist.log_var);
    return dist;
}

std::vector<NodeId> SailModel::decode_forward(Tape& tape, const Batch& batch, NodeId z) const {
    auto* self = const_cast<SailModel*>(this);
    if (tape.value(z).rows() != batch.rows) {
        throw ShapeError("decode_forward z rows " + tape.value(z).shape_str() + " vs batch " +
                         std::to_string(batch.rows));
    }
    const NodeId embed = tape.leaf(self->dec_embed_);
    const NodeId out_w = tape.leaf(self->out_w_);
    const NodeId out_b = tape.leaf(self->out_b_);
    std::vector<GruParamRefs> refs;
    for (GruLayer& l : self->layers_) {
        refs.push_back({tape.leaf(l.w_r), tape.leaf(l.u_r), tape.leaf(l.b_r), tape.leaf(l.w_z),
                        tape.leaf(l.u_z), tape.leaf(l.b_z), tape.leaf(l.w_h), tape.leaf(l.u_h),
                        tape.leaf(l.b_h)});
    }
    // z initializes layer 0's hidden state; upper layers start at zero.
    std::vector<NodeId> h(static_cast<std::size_t>(n_layers_),
                          tape.constant(Tensor::zeros({batch.rows, d_model_})));
    h[0] = tape.tanh(tape.add(tape.matmul(z, tape.leaf(self->init_w_)), tape.leaf(self->init_b_)));
    const NodeId zb = tape.matmul(z, tape.leaf(self->broadcast_w_));

    std::vector<NodeId> logits;
    logits.reserve(static_cast<std::size_t>(batch.l_max - 1));
    for (int t = 0; t < batch.l_max - 1; ++t) {
        NodeId x = tape.concat(tape.embedding_gather(embed, batch_column(batch, t)), zb);
        for (int l = 0; l < n_layers_; ++l) {
            h[static_cast<std::size_t>(l)] = tape.gru_cell(x, h[static_cast<std::size_t>(l)], refs[static_cast<std::size_t>(l)]);
            x = h[static_cast<std::size_t>(l)];
        }
        logits.push_back(tape.add(tape.matmul(x, out_w), out_b));
    }
    return logits;
}

SailModel::ElboResult SailModel::elbo(Tape& tape, const std::vector<KnowledgeGraph>& graphs,
                                      const Batch& batch, double beta, const Tensor& noise,
                                      const Vocabulary& vocab) const {
    if (static_cast<int>(graphs.size()) != batch.rows) {
        throw ShapeError("elbo graphs " + std::to_string(graphs.size()) + " vs batch rows " +
                         std::to_string(batch.rows));
    }
    std::int64_t mask_total = 0;
    for (std::uint8_t m : batch.mask) mask_total += m;
    if (mask_total == 0) throw EmptyMask();

    const EncodeNodes enc = encode(tape, graphs, vocab);
    const NodeId z = tape.reparameterize(enc.mu, enc.log_var, noise);
    const NodeId kl_vec = tape.gaussian_kl(enc.mu, enc.log_var);
    const std::vector<NodeId> logits = decode_forward(tape, batch, z);

    ElboResult result;
    result.mask_count = static_cast<double>(mask_total);
    result.recon_bits.assign(static_cast<std::size_t>(batch.rows), 0);

    NodeId ce_total = -1;
    std::vector<real> nll;
    for (int t = 0; t < batch.l_max - 1; ++t) {
        const NodeId part = tape.softmax_cross_entropy(logits[static_cast<std::size_t>(t)],
                                                       batch_column(batch, t + 1),
                                                       mask_column(batch, t), &nll);
        for (int r = 0; r < batch.rows; ++r) {
            result.recon_bits[static_cast<std::size_t>(r)] += nll[static_cast<std::size_t>(r)] / M_LN2;
        }
        ce_total = (ce_total < 0) ? part : tape.add(ce_total, part);
    }

    const double inv_mask = 1.0 / result.mask_count;
    // loss = (sum CE + beta * sum KL) / mask_count; the KL path multiplies
    // the batch-mean KL back up by B.
    const NodeId recon_term = tape.mul(ce_total, tape.constant(Tensor::scalar(static_cast<real>(inv_mask))));
    const NodeId kl_mean = tape.mean_pool(kl_vec);
    const NodeId kl_term = tape.mul(
        kl_mean, tape.constant(Tensor::scalar(static_cast<real>(beta * batch.rows * inv_mask))));
    result.loss_node = tape.add(recon_term, kl_term);

    result.total = tape.value(result.loss_node).data[0];
    result.recon_nats = tape.value(ce_total).data[0] * inv_mask;
    double kl_sum = 0;
    for (real v : tape.value(kl_vec).data) kl_sum += v;
    result.kl_nats = kl_sum * inv_mask;

    result.kl_bits.resize(static_cast<std::size_t>(batch.rows));
    result.bound_bits.resize(static_cast<std::size_t>(batch.rows));
    for (int r = 0; r < batch.rows; ++r) {
        const auto idx = static_cast<std::size_t>(r);
        result.kl_bits[idx] = tape.value(kl_vec).data[idx] * M_LOG2E;
        result.bound_bits[idx] = result.recon_bits[idx] + result.kl_bits[idx];
    }
    return result;
}

DecodeState SailModel::initial_state(const std::vector<real>& z) const {
    if (static_cast<int>(z.size()) != d_z_) {
        throw ShapeError("latent size " + std::to_string(z.size()) + " vs d_z " + std::to_string(d_z_));
    }
    DecodeState s;
    s.h.assign(static_cast<std::size_t>(n_layers_), std::vector<real>(static_cast<std::size_t>(d_model_), 0));
    std::vector<real> h0(init_b_.value.data.begin(), init_b_.value.data.end());
    affine_acc(z, init_w_.value, h0);
    for (real& v : h0) v = std::tanh(v);
    s.h[0] = std::move(h0);
    s.z_broadcast.assign(static_cast<std::size_t>(broadcast_width_), 0);
    affine_acc(z, broadcast_w_.value, s.z_broadcast);
    return s;
}

void SailModel::step(DecodeState& state, int token, std::vector<real>& logits) const {
    if (token < 0 || token >= vocab_size()) {
        throw VocabularyMiss("token id " + std::to_string(token));
    }
    std::vector<real> x;
    x.reserve(static_cast<std::size_t>(d_model_ + broadcast_width_));
    x.assign(dec_embed_.value.data.begin() + static_cast<std::size_t>(token) * d_model_,
             dec_embed_.value.data.begin() + static_cast<std::size_t>(token + 1) * d_model_);
    x.insert(x.end(), state.z_broadcast.begin(), state.z_broadcast.end());
    for (int l = 0; l < n_layers_; ++l) {
        gru_step_raw(x, state.h[static_cast<std::size_t>(l)], layers_[static_cast<std::size_t>(l)], d_model_);
        x = state.h[static_cast<std::size_t>(l)];
    }
    logits.assign(out_b_.value.data.begin(), out_b_.value.data.end());
    affine_acc(x, out_w_.value, logits);
}

ArkModel make_ark(const RunConfig& cfg, const Vocabulary& vocab) {
    return ArkModel(vocab.size(), cfg.d_model, cfg.n_layers, cfg.seed,
                    cfg.recurrent_init == "orthogonal");
}

SailModel make_sail(const RunConfig& cfg, const Vocabulary& vocab) {
    return SailModel(vocab.entity_count(), vocab.relation_count(), cfg.d_model, cfg.n_layers,
                     cfg.d_z, cfg.broadcast_width(), cfg.seed,
                     cfg.recurrent_init == "orthogonal");
}

namespace {

struct EvalPassResult {
    double loss = 0;             // position-mean nats
    double bits_per_graph = 0;   // mean per-graph (bound) bits
};

EvalPassResult evaluation_pass(const RunConfig& cfg, const DatasetBundle& data, ArkModel* ark,
                               SailModel* sail, const std::vector<KnowledgeGraph>& split,
                               int max_len) {
    EvalPassResult out;
    double nats_sum = 0;
    double mask_sum = 0;
    double bits_sum = 0;
    const int bs = cfg.batch_size;
    for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(bs)) {
        const std::size_t end = std::min(split.size(), start + static_cast<std::size_t>(bs));
        std::vector<KnowledgeGraph> graphs(split.begin() + static_cast<std::ptrdiff_t>(start),
                                           split.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<TokenSequence> seqs;
        seqs.reserve(graphs.size());
        for (std::size_t i = 0; i < graphs.size(); ++i) {
            seqs.push_back(linearize(graphs[i], data.vocab,
                                     mix64(cfg.seed ^ mix64(kValTag ^ mix64(kPermTag ^ (start + i))))));
        }
        const Batch batch = pad_batch(seqs, max_len);
        Tape tape;
        if (ark != nullptr) {
            const auto res = ark->loss(tape, batch);
            nats_sum += res.loss_nats * res.mask_count;
            mask_sum += res.mask_count;
            for (double b : res.graph_bits) bits_sum += b;
        } else {
            Tensor noise = Tensor::zeros({batch.rows, sail->d_z()});
            Rng rng = Rng::stream(cfg.seed, {kValTag, kNoiseTag, start});
            for (real& v : noise.data) v = static_cast<real>(rng.next_normal());
            const auto res = sail->elbo(tape, graphs, batch, cfg.beta, noise, data.vocab);
            nats_sum += res.total * res.mask_count;
            mask_sum += res.mask_count;
            for (double b : res.bound_bits) bits_sum += b;
        }
    }
    out.loss = mask_sum > 0 ? nats_sum / mask_sum : 0;
    out.bits_per_graph = split.empty() ? 0 : bits_sum / static_cast<double>(split.size());
    return out;
}

}  // namespace

TrainResult train_model(const RunConfig& cfg, const DatasetBundle& data, ArkModel* ark,
                        SailModel* sail) {
    if ((ark == nullptr) == (sail == nullptr)) {
        throw Error("train_model: exactly one model expected");
    }
    const int max_len = cfg.max_len > 0 ? cfg.max_len : data.max_len;
    std::vector<Parameter*> params = ark != nullptr ? ark->parameters() : sail->parameters();

    Adam::Config acfg;
    acfg.lr = static_cast<real>(cfg.lr);
    acfg.clip_norm = static_cast<real>(cfg.grad_clip);
    acfg.weight_decay = static_cast<real>(cfg.weight_decay);
    acfg.beta2 = static_cast<real>(cfg.adam_beta2);
    Adam adam(acfg);

    TrainResult result;
    std::vector<Tensor> best_params;
    std::int64_t global_step = 0;

    // shadow average of the parameters; validation and the retained
    // checkpoint use it when enabled
    const bool use_ema = cfg.ema_decay > 0;
    std::vector<Tensor> ema;
    if (use_ema) {
        for (const Parameter* p : params) ema.push_back(p->value);
    }
    const auto swap_in_ema = [&](std::vector<Tensor>& stash) {
        stash.clear();
        for (std::size_t i = 0; i < params.size(); ++i) {
            stash.push_back(std::move(params[i]->value));
            params[i]->value = ema[i];
        }
    };
    const auto swap_back = [&](std::vector<Tensor>& stash) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = std::move(stash[i]);
    };

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.lr_schedule == "cosine") {
            const double t = cfg.epochs > 1 ? static_cast<double>(epoch - 1) / (cfg.epochs - 1) : 0.0;
            const double floor_lr = cfg.lr * 0.01;
            adam.set_lr(static_cast<real>(floor_lr + (cfg.lr - floor_lr) * 0.5 * (1 + std::cos(M_PI * t))));
        }
        Rng shuffle_rng = Rng::stream(cfg.seed, {kShuffleTag, static_cast<std::uint64_t>(epoch)});
        shuffle_rng.shuffle(order);

        double nats_sum = 0;
        double mask_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<KnowledgeGraph> graphs;
            std::vector<TokenSequence> seqs;
            graphs.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t gi = order[i];
                graphs.push_back(data.train[gi]);
                // fresh ordering per (seed, epoch, graph index)
                Rng perm = Rng::stream(cfg.seed, {kPermTag, static_cast<std::uint64_t>(epoch), gi});
                seqs.push_back(linearize(graphs.back(), data.vocab, perm.next_u64()));
            }
            const Batch batch = pad_batch(seqs, max_len);

            for (Parameter* p : params) p->zero_grad();
            Tape tape;
            double step_nats;
            double step_mask;
            if (ark != nullptr) {
                const auto res = ark->loss(tape, batch);
                tape.backward(res.loss_node);
                step_nats = res.loss_nats;
                step_mask = res.mask_count;
            } else {
                Tensor noise = Tensor::zeros({batch.rows, sail->d_z()});
                Rng nrng = Rng::stream(cfg.seed, {kNoiseTag, static_cast<std::uint64_t>(epoch), start});
                for (real& v : noise.data) v = static_cast<real>(nrng.next_normal());
                double beta = cfg.beta;
                if (cfg.kl_warmup_steps > 0) {
                    beta *= std::min(1.0, static_cast<double>(global_step) / cfg.kl_warmup_steps);
                }
                const auto res = sail->elbo(tape, graphs, batch, beta, noise, data.vocab);
                tape.backward(res.loss_node);
                step_nats = res.total;
                step_mask = res.mask_count;
            }
            try {
                adam.step(params);
            } catch (const NonFiniteGradient& e) {
                throw NonFiniteGradient("training step " + std::to_string(global_step) + " (" +
                                        e.what() + ")");
            }
            ++global_step;
            if (use_ema) {
                const real d = static_cast<real>(cfg.ema_decay);
                for (std::size_t k = 0; k < params.size(); ++k) {
                    const auto& src = params[k]->value.data;
                    auto& dst = ema[k].data;
                    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = d * dst[i] + (1 - d) * src[i];
                }
            }
            nats_sum += step_nats * step_mask;
            mask_sum += step_mask;
        }

        std::vector<Tensor> stash;
        if (use_ema) swap_in_ema(stash);
        const EvalPassResult val = evaluation_pass(cfg, data, ark, sail, data.valid, max_len);
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss_nats = mask_sum > 0 ? nats_sum / mask_sum : 0;
        m.valid_loss_nats = val.loss;
        m.valid_bits_per_graph = val.bits_per_graph;
        result.log.push_back(m);

        if (result.best_epoch < 0 || m.valid_loss_nats < result.best_valid_loss) {
            result.best_epoch = epoch;
            result.best_valid_loss = m.valid_loss_nats;
            best_params.clear();
            for (const Parameter* p : params) best_params.push_back(p->value);
        }
        if (use_ema) swap_back(stash);

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char line[256];
        std::snprintf(line, sizeof line,
                      "epoch %d train %.4f valid %.4f bits/graph %.2f (%.1fs)", epoch,
                      m.train_loss_nats, m.valid_loss_nats, m.valid_bits_per_graph, secs);
        log_info(line);
    }

    if (result.best_epoch >= 0) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
    }
    return result;
}

std::string format_metrics_log(const std::vector<EpochMetrics>& log) {
    std::string out = "epoch\ttrain_loss_nats\tvalid_loss_nats\tvalid_bits_per_graph\n";
    char buf[160];
    for (const EpochMetrics& m : log) {
        std::snprintf(buf, sizeof buf, "%d\t%.17g\t%.17g\t%.17g\n", m.epoch, m.train_loss_nats,
                      m.valid_loss_nats, m.valid_bits_per_graph);
        out += buf;
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'K', 'G', 'F', '1'};
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeF64 = 2;
constexpr std::uint8_t kDtypeNative = sizeof(real) == 4 ? kDtypeF32 : kDtypeF64;

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CorruptCheckpoint("unexpected end of weights.bin");
}

}  // namespace

void save_checkpoint(const std::string& dir, const RunConfig& cfg, const Vocabulary& vocab,
                     const std::vector<const Parameter*>& params) {
    fs::create_directories(fs::path(dir) / "vocab");
    {
        std::ofstream out(fs::path(dir) / "config.yaml", std::ios::binary);
        out << serialize_config(cfg);
    }
    const auto write_labels = [&](const char* name, const std::vector<std::string>& labels) {
        std::ofstream out(fs::path(dir) / "vocab" / name, std::ios::binary);
        for (const auto& l : labels) out << l << '\n';
    };
    write_labels("entities.txt", vocab.entity_labels());
    write_labels("relations.txt", vocab.relation_labels());

    std::ofstream out(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!out) throw Error("cannot write " + dir + "/weights.bin");
    out.write(kMagic, sizeof kMagic);
    write_pod(out, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        write_pod(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_pod(out, kDtypeNative);
        write_pod(out, static_cast<std::uint32_t>(p->value.shape.size()));
        for (int d : p->value.shape) write_pod(out, static_cast<std::int64_t>(d));
        out.write(reinterpret_cast<const char*>(p->value.data.data()),
                  static_cast<std::streamsize>(p->value.data.size() * sizeof(real)));
    }
}

Checkpoint load_checkpoint(const std::string& dir) {
    Checkpoint ckpt;
    ckpt.config = load_config_file((fs::path(dir) / "config.yaml").string());
    const auto read_labels = [&](const char* name) {
        std::ifstream in(fs::path(dir) / "vocab" / name, std::ios::binary);
        if (!in) throw CorruptCheckpoint("missing vocab/" + std::string(name));
        std::vector<std::string> labels;
        std::string line;
        while (std::getline(in, line)) labels.push_back(line);
        return labels;
    };
    ckpt.vocab = Vocabulary(read_labels("entities.txt"), read_labels("relations.txt"));

    if (ckpt.config.model == "ark") {
        ckpt.ark.emplace(make_ark(ckpt.config, ckpt.vocab));
    } else {
        ckpt.sail.emplace(make_sail(ckpt.config, ckpt.vocab));
    }

    std::ifstream in(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!in) throw CorruptCheckpoint("missing weights.bin");
    char magic[4];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw CheckpointVersionError("bad magic; expected KGF1");
    }
    std::uint32_t count = 0;
    read_pod(in, count);
    std::vector<Parameter*> params = ckpt.parameters();
    if (count != params.size()) {
        throw CheckpointVersionError("weights.bin has " + std::to_string(count) +
                                     " records, model expects " + std::to_string(params.size()));
    }
    for (Parameter* p : params) {
        std::uint32_t name_len = 0;
        read_pod(in, name_len);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw CorruptCheckpoint("unexpected end of weights.bin");
        std::uint8_t dtype = 0;
        read_pod(in, dtype);
        std::uint32_t rank = 0;
        read_pod(in, rank);
        std::vector<int> shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) {
            std::int64_t d = 0;
            read_pod(in, d);
            shape[i] = static_cast<int>(d);
        }
        if (name != p->name || dtype != kDtypeNative || shape != p->value.shape) {
            throw CheckpointVersionError("record '" + name + "' does not match parameter '" +
                                         p->name + "' " + p->value.shape_str());
        }
        in.read(reinterpret_cast<char*>(p->value.data.data()),
                static_cast<std::streamsize>(p->value.data.size() * sizeof(real)));
        if (!in) throw CorruptCheckpoint("unexpected end of weights.bin");
    }
    char extra;
    if (in.read(&extra, 1)) throw CheckpointVersionError("trailing bytes after last record");
    return ckpt;
}

}  // namespace kgforge
