#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kgforge/autodiff.hpp"
#include "kgforge/config.hpp"
#include "kgforge/datasets.hpp"
#include "kgforge/kg.hpp"

namespace kgforge {

// Diagonal Gaussian posterior parameters for one graph.
struct LatentDistribution {
    std::vector<real> mu;
    std::vector<real> log_var;
};

// 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2) * log2(e); non-negative.
double kl_bits(const LatentDistribution& dist);

// z = mu + exp(log_var / 2) * noise
std::vector<real> reparameterize(const LatentDistribution& dist, const std::vector<real>& noise);

// Incremental decode state shared by both models: one hidden vector per GRU
// layer plus, for the latent-conditioned decoder, the broadcast vector that
// is appended to every input embedding.
struct DecodeState {
    std::vector<std::vector<real>> h;
    std::vector<real> z_broadcast;
};

struct GruLayer {
    Parameter w_r, u_r, b_r;
    Parameter w_z, u_z, b_z;
    Parameter w_h, u_h, b_h;
};

// GRU language model over the unified vocabulary: embedding table, GRU
// stack, output projection.
class ArkModel {
  public:
    ArkModel(int vocab_size, int d_model, int n_layers, std::uint64_t init_seed,
             bool orthogonal_recurrent = false);

    int vocab_size() const { return vocab_size_; }
    int d_model() const { return d_model_; }
    int n_layers() const { return n_layers_; }

    // Fixed manifest order; checkpoints and Adam state follow it.
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    // Teacher-forced logits per target position (tape path). Returned vector
    // holds one (rows x |V|) node per position 0..l_max-2.
    std::vector<NodeId> forward(Tape& tape, const Batch& batch) const;

    struct LossResult {
        NodeId loss_node = -1;      // masked-mean nats, scalar
        double loss_nats = 0;
        double mask_count = 0;
        std::vector<double> graph_bits;  // per row: sum of masked -log2 p
    };
    // Throws EmptyMask when no position is masked in.
    LossResult loss(Tape& tape, const Batch& batch) const;

    // Step path for decoding and scoring (no tape).
    DecodeState initial_state() const;
    // Feeds one token, returns logits over the vocabulary for the next one.
    void step(DecodeState& state, int token, std::vector<real>& logits) const;

  private:
    int vocab_size_, d_model_, n_layers_;
    Parameter embed_;
    std::vector<GruLayer> layers_;
    Parameter out_w_, out_b_;

    friend class SailModel;
};

// Variational extension: triple-set MLP encoder -> diagonal Gaussian ->
// latent-conditioned GRU decoder (h0 init for layer 1, broadcast concat at
// every step).
class SailModel {
  public:
    SailModel(int n_entities, int n_relations, int d_model, int n_layers, int d_z,
              int broadcast_width, std::uint64_t init_seed, bool orthogonal_recurrent = false);

    int vocab_size() const { return Vocabulary::kNumSpecials + n_entities_ + n_relations_; }
    int d_model() const { return d_model_; }
    int n_layers() const { return n_layers_; }
    int d_z() const { return d_z_; }
    int broadcast_width() const { return broadcast_width_; }

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    // Order-invariant encoder (tape path): each triple embeds as
    // [E_e[h]; E_r[r]; E_e[t]], mean over triples, MLP with ReLU, linear
    // heads. Empty graphs pool to the zero vector.
    struct EncodeNodes {
        NodeId mu = -1;       // (B, d_z)
        NodeId log_var = -1;  // (B, d_z)
    };
    EncodeNodes encode(Tape& tape, const std::vector<KnowledgeGraph>& graphs,
                       const Vocabulary& vocab) const;

    // Eval-path encoder for a single graph.
    LatentDistribution encode(const KnowledgeGraph& graph, const Vocabulary& vocab) const;

    // Latent-conditioned teacher forcing; one z row per batch row.
    std::vector<NodeId> decode_forward(Tape& tape, const Batch& batch, NodeId z) const;

    struct ElboResult {
        NodeId loss_node = -1;  // (recon_sum + beta * kl_sum) / mask_count
        double total = 0;       // nats, loss_node value
        double recon_nats = 0;  // recon_sum / mask_count
        double kl_nats = 0;     // kl_sum / mask_count
        double mask_count = 0;
        std::vector<double> recon_bits;  // per graph
        std::vector<double> kl_bits;     // per graph
        std::vector<double> bound_bits;  // recon + kl, per graph
    };
    // graphs and batch rows must be aligned one-to-one.
    ElboResult elbo(Tape& tape, const std::vector<KnowledgeGraph>& graphs, const Batch& batch,
                    double beta, const Tensor& noise, const Vocabulary& vocab) const;

    // Step path with a fixed latent code.
    DecodeState initial_state(const std::vector<real>& z) const;
    void step(DecodeState& state, int token, std::vector<real>& logits) const;

  private:
    int n_entities_, n_relations_, d_model_, n_layers_, d_z_, broadcast_width_;
    Parameter enc_embed_e_, enc_embed_r_;
    std::vector<Parameter> enc_w_, enc_b_;  // MLP, depth == n_layers
    Parameter mu_w_, mu_b_, logvar_w_, logvar_b_;
    Parameter dec_embed_;
    Parameter init_w_, init_b_;
    Parameter broadcast_w_;
    std::vector<GruLayer> layers_;
    Parameter out_w_, out_b_;
};

// Line-delimited deterministic training record. Wall-clock timing is
// reported through the logger, not here, so identical seeded runs produce
// byte-identical files.
struct EpochMetrics {
    int epoch = 0;
    double train_loss_nats = 0;
    double valid_loss_nats = 0;
    double valid_bits_per_graph = 0;
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    int best_epoch = -1;
    double best_valid_loss = 0;
};

// Epoch loop with fresh per-epoch triple permutations, shuffled minibatches
// and Adam; retains the best-validation parameters in the model. Model kind
// comes from cfg.model; exactly one of ark/sail must be non-null.
TrainResult train_model(const RunConfig& cfg, const DatasetBundle& data, ArkModel* ark,
                        SailModel* sail);

std::string format_metrics_log(const std::vector<EpochMetrics>& log);

// Checkpoint directory: config.yaml, vocab/{entities,relations}.txt and
// weights.bin (little-endian, magic KGF1, (name, dtype, shape, values)
// records in manifest order).
void save_checkpoint(const std::string& dir, const RunConfig& cfg, const Vocabulary& vocab,
                     const std::vector<const Parameter*>& params);

struct Checkpoint {
    RunConfig config;
    Vocabulary vocab;
    std::optional<ArkModel> ark;
    std::optional<SailModel> sail;

    bool is_sail() const { return sail.has_value(); }
    std::vector<Parameter*> parameters() { return ark ? ark->parameters() : sail->parameters(); }
};

Checkpoint load_checkpoint(const std::string& dir);

// Fresh model of the configured shape; vocabulary sizes come from vocab.
ArkModel make_ark(const RunConfig& cfg, const Vocabulary& vocab);
SailModel make_sail(const RunConfig& cfg, const Vocabulary& vocab);

}  // namespace kgforge
