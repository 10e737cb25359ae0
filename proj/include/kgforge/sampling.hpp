#pragma once

#include <memory>
#include <vector>

#include "kgforge/kg.hpp"
#include "kgforge/models.hpp"
#include "kgforge/rng.hpp"

namespace kgforge {

struct GenerationConfig {
    double temperature = 1.0;
    int top_k = 0;  // 0 = all
    double top_p = 1.0;
    int max_len = 0;  // total sequence length cap including BOS
    int beam_width = 3;
    std::uint64_t seed = 0;
};

// Step-wise autoregressive scorer. Both models implement it, and the decoding
// tests drive it with tiny transition-table toys, so beam search and the
// samplers never depend on a concrete model.
class TokenScorer {
  public:
    struct State {
        DecodeState model;  // model scorers
        int pos = 0;        // toy scorers track position/last token here
        int last_token = 0;
    };

    virtual ~TokenScorer() = default;
    virtual int vocab_size() const = 0;
    virtual State initial_state() const = 0;
    // Feed one token; fill logits for the next position.
    virtual void advance(State& state, int token, std::vector<real>& logits) const = 0;
};

class ArkScorer final : public TokenScorer {
  public:
    explicit ArkScorer(const ArkModel& model) : model_(model) {}
    int vocab_size() const override { return model_.vocab_size(); }
    State initial_state() const override;
    void advance(State& state, int token, std::vector<real>& logits) const override;

  private:
    const ArkModel& model_;
};

class SailScorer final : public TokenScorer {
  public:
    SailScorer(const SailModel& model, std::vector<real> z) : model_(model), z_(std::move(z)) {}
    int vocab_size() const override { return model_.vocab_size(); }
    State initial_state() const override;
    void advance(State& state, int token, std::vector<real>& logits) const override;

  private:
    const SailModel& model_;
    std::vector<real> z_;
};

// temperature -> top-k -> smallest descending-probability prefix whose
// cumulative mass strictly exceeds top_p -> renormalize. BOS and PAD are
// never candidates; throws DegenerateDistribution when nothing survives.
std::vector<double> filter_logits(const std::vector<real>& logits, const GenerationConfig& cfg);

// Ancestral sampling from BOS until EOS or cfg.max_len tokens.
TokenSequence sample_sequence(const TokenScorer& scorer, const GenerationConfig& cfg, Rng& rng);

// Length-synchronous beam over token ids scored by summed model
// log-probabilities (full softmax; BOS/PAD banned as candidates but not
// renormalized away, so scores match teacher-forced scoring). Finished
// hypotheses freeze and compete by total score; ties break toward the
// lexicographically smaller token sequence, which also prefers the earlier
// finish. Deterministic.
TokenSequence beam_search(const TokenScorer& scorer, int width, int max_len);

// Total teacher-forced -log p of a sequence in nats (full softmax; BOS is
// never predicted, EOS is).
double sequence_nll_nats(const TokenScorer& scorer, const TokenSequence& seq);

struct SampleResult {
    KnowledgeGraph graph;
    TokenSequence sequence;
};

SampleResult sample_ark(const ArkModel& model, const Vocabulary& vocab,
                        const GenerationConfig& cfg, Rng& rng);

enum class DecodeMode { kBeam, kAncestral };

// z ~ N(0, I) drawn from rng, then beam (default) or ancestral decoding.
SampleResult sample_sail_unconditional(const SailModel& model, const Vocabulary& vocab,
                                       const GenerationConfig& cfg, Rng& rng, DecodeMode mode);

// Decode a fixed latent code with beam search.
SampleResult decode_latent(const SailModel& model, const Vocabulary& vocab,
                           const std::vector<real>& z, const GenerationConfig& cfg);

// Posterior-sample z from the partial graph, teacher-force its linearized
// triples as the prompt, then continue sampling freely. The output always
// contains every prefix triple.
SampleResult complete_conditional(const SailModel& model, const Vocabulary& vocab,
                                  const KnowledgeGraph& partial, const GenerationConfig& cfg,
                                  Rng& rng);

// Parallel batches with one RNG substream per sample index, so results are
// deterministic for any thread count.
std::vector<SampleResult> sample_many_ark(const ArkModel& model, const Vocabulary& vocab,
                                          const GenerationConfig& cfg, int n);
std::vector<SampleResult> sample_many_sail(const SailModel& model, const Vocabulary& vocab,
                                           const GenerationConfig& cfg, int n, DecodeMode mode);

// Token forced at a 1-based sequence position (position 0 is BOS).
struct Pin {
    int position;
    int token;
};

// Pinned positions emit their token with probability 1; everywhere else
// filter_logits sampling. Pins must be BOS/PAD-free and match slot parity
// (entity slots entity ids, relation slots relation ids, EOS only at a
// triple boundary).
SampleResult constrained_generate(const TokenScorer& scorer, const Vocabulary& vocab,
                                  const std::vector<Pin>& pins, const GenerationConfig& cfg,
                                  Rng& rng);

}  // namespace kgforge
