#include "kgforge/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kgforge/errors.hpp"

namespace kgforge {

TokenScorer::State ArkScorer::initial_state() const {
    State s;
    s.model = model_.initial_state();
    return s;
}

void ArkScorer::advance(State& state, int token, std::vector<real>& logits) const {
    model_.step(state.model, token, logits);
}

TokenScorer::State SailScorer::initial_state() const {
    State s;
    s.model = model_.initial_state(z_);
    return s;
}

void SailScorer::advance(State& state, int token, std::vector<real>& logits) const {
    model_.step(state.model, token, logits);
}

std::vector<double> filter_logits(const std::vector<real>& logits, const GenerationConfig& cfg) {
    const int v = static_cast<int>(logits.size());
    // candidates: everything except BOS and PAD
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(v));
    for (int i = 0; i < v; ++i) {
        if (i == Vocabulary::kBos || i == Vocabulary::kPad) continue;
        ids.push_back(i);
    }
    if (ids.empty()) throw DegenerateDistribution("no candidate tokens");

    std::vector<double> scaled(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        scaled[i] = static_cast<double>(logits[static_cast<std::size_t>(ids[i])]) / cfg.temperature;
    }

    // stable candidate order: descending value, then ascending id
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scaled[a] != scaled[b]) return scaled[a] > scaled[b];
        return ids[a] < ids[b];
    });

    std::size_t kept = order.size();
    if (cfg.top_k > 0 && static_cast<std::size_t>(cfg.top_k) < kept) {
        kept = static_cast<std::size_t>(cfg.top_k);
    }

    // softmax over the kept set
    const double mx = scaled[order[0]];
    std::vector<double> probs(kept);
    double sum = 0;
    for (std::size_t i = 0; i < kept; ++i) {
        probs[i] = std::exp(scaled[order[i]] - mx);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;

    // smallest prefix whose cumulative mass strictly exceeds top_p
    std::size_t nucleus = kept;
    double cum = 0;
    for (std::size_t i = 0; i < kept; ++i) {
        cum += probs[i];
        if (cum > cfg.top_p) {
            nucleus = i + 1;
            break;
        }
    }

    double nucleus_mass = 0;
    for (std::size_t i = 0; i < nucleus; ++i) nucleus_mass += probs[i];
    if (nucleus_mass <= 0) throw DegenerateDistribution("zero probability mass after filtering");

    std::vector<double> out(static_cast<std::size_t>(v), 0.0);
    for (std::size_t i = 0; i < nucleus; ++i) {
        out[static_cast<std::size_t>(ids[order[i]])] = probs[i] / nucleus_mass;
    }
    return out;
}

namespace {

int draw_from(const std::vector<double>& probs, Rng& rng) {
    double r = rng.next_double();
    int last = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0) continue;
        last = static_cast<int>(i);
        r -= probs[i];
        if (r < 0) return last;
    }
    return last;  // guard against accumulated rounding
}

void log_softmax(const std::vector<real>& logits, std::vector<double>& out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (real v : logits) mx = std::max(mx, static_cast<double>(v));
    double sum = 0;
    for (real v : logits) sum += std::exp(static_cast<double>(v) - mx);
    const double lse = std::log(sum) + mx;
    out.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
}

}  // namespace

TokenSequence sample_sequence(const TokenScorer& scorer, const GenerationConfig& cfg, Rng& rng) {
    TokenSequence seq;
    seq.tokens.push_back(Vocabulary::kBos);
    TokenScorer::State state = scorer.initial_state();
    std::vector<real> logits;
    scorer.advance(state, Vocabulary::kBos, logits);
    while (seq.length() < cfg.max_len) {
        const std::vector<double> probs = filter_logits(logits, cfg);
        const int tok = draw_from(probs, rng);
        seq.tokens.push_back(tok);
        if (tok == Vocabulary::kEos || seq.length() >= cfg.max_len) break;
        scorer.advance(state, tok, logits);
    }
    return seq;
}

double sequence_nll_nats(const TokenScorer& scorer, const TokenSequence& seq) {
    TokenScorer::State state = scorer.initial_state();
    std::vector<real> logits;
    std::vector<double> logp;
    double nll = 0;
    for (int t = 0; t + 1 < seq.length(); ++t) {
        scorer.advance(state, seq.tokens[static_cast<std::size_t>(t)], logits);
        log_softmax(logits, logp);
        nll -= logp[static_cast<std::size_t>(seq.tokens[static_cast<std::size_t>(t) + 1])];
    }
    return nll;
}

TokenSequence beam_search(const TokenScorer& scorer, int width, int max_len) {
    struct Hypothesis {
        std::vector<int> tokens;  // includes BOS
        double score = 0;
        TokenScorer::State state;
        std::vector<real> logits;
    };

    const auto better = [](const std::pair<double, std::vector<int>>& a,
                           const std::pair<double, std::vector<int>>& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;  // lex smaller wins; a prefix beats its extension
    };

    Hypothesis root;
    root.tokens = {Vocabulary::kBos};
    root.state = scorer.initial_state();
    scorer.advance(root.state, Vocabulary::kBos, root.logits);

    std::vector<Hypothesis> alive{std::move(root)};
    std::pair<double, std::vector<int>> best{-std::numeric_limits<double>::infinity(), {}};
    bool has_result = false;

    std::vector<double> logp;
    while (!alive.empty() && static_cast<int>(alive.front().tokens.size()) < max_len) {
        struct Candidate {
            double score;
            int token;
            std::size_t parent;
        };
        std::vector<Candidate> cands;
        for (std::size_t b = 0; b < alive.size(); ++b) {
            log_softmax(alive[b].logits, logp);
            for (int tok = 0; tok < scorer.vocab_size(); ++tok) {
                if (tok == Vocabulary::kBos || tok == Vocabulary::kPad) continue;
                cands.push_back({alive[b].score + logp[static_cast<std::size_t>(tok)], tok, b});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.token != b.token) return a.token < b.token;
            return a.parent < b.parent;
        });
        if (static_cast<int>(cands.size()) > width) cands.resize(static_cast<std::size_t>(width));

        std::vector<Hypothesis> next;
        for (const Candidate& c : cands) {
            Hypothesis h;
            h.tokens = alive[c.parent].tokens;
            h.tokens.push_back(c.token);
            h.score = c.score;
            if (c.token == Vocabulary::kEos) {
                std::pair<double, std::vector<int>> fin{h.score, h.tokens};
                if (!has_result || better(fin, best)) {
                    best = std::move(fin);
                    has_result = true;
                }
                continue;
            }
            h.state = alive[c.parent].state;
            scorer.advance(h.state, c.token, h.logits);
            next.push_back(std::move(h));
        }
        alive = std::move(next);
    }
    // beams cut off at max_len compete without an EOS
    for (Hypothesis& h : alive) {
        std::pair<double, std::vector<int>> fin{h.score, std::move(h.tokens)};
        if (!has_result || better(fin, best)) {
            best = std::move(fin);
            has_result = true;
        }
    }
    TokenSequence seq;
    seq.tokens = std::move(best.second);
    return seq;
}

SampleResult sample_ark(const ArkModel& model, const Vocabulary& vocab, const GenerationConfig& cfg,
                        Rng& rng) {
    ArkScorer scorer(model);
    SampleResult res;
    res.sequence = sample_sequence(scorer, cfg, rng);
    res.graph = parse_sequence(res.sequence, vocab);
    return res;
}

SampleResult sample_sail_unconditional(const SailModel& model, const Vocabulary& vocab,
                                       const GenerationConfig& cfg, Rng& rng, DecodeMode mode) {
    std::vector<real> z(static_cast<std::size_t>(model.d_z()));
    for (real& v : z) v = static_cast<real>(rng.next_normal());
    SailScorer scorer(model, std::move(z));
    SampleResult res;
    if (mode == DecodeMode::kBeam) {
        res.sequence = beam_search(scorer, cfg.beam_width, cfg.max_len);
    } else {
        res.sequence = sample_sequence(scorer, cfg, rng);
    }
    res.graph = parse_sequence(res.sequence, vocab);
    return res;
}

SampleResult decode_latent(const SailModel& model, const Vocabulary& vocab,
                           const std::vector<real>& z, const GenerationConfig& cfg) {
    SailScorer scorer(model, z);
    SampleResult res;
    res.sequence = beam_search(scorer, cfg.beam_width, cfg.max_len);
    res.graph = parse_sequence(res.sequence, vocab);
    return res;
}

SampleResult complete_conditional(const SailModel& model, const Vocabulary& vocab,
                                  const KnowledgeGraph& partial, const GenerationConfig& cfg,
                                  Rng& rng) {
    if (partial.empty()) throw Error("complete_conditional: partial graph must be non-empty");
    const LatentDistribution dist = model.encode(partial, vocab);
    std::vector<real> noise(static_cast<std::size_t>(model.d_z()));
    for (real& v : noise) v = static_cast<real>(rng.next_normal());
    SailScorer scorer(model, reparameterize(dist, noise));

    const TokenSequence prefix = linearize(partial, vocab, rng.next_u64());
    SampleResult res;
    res.sequence.tokens.assign(prefix.tokens.begin(), prefix.tokens.end() - 1);  // drop EOS

    TokenScorer::State state = scorer.initial_state();
    std::vector<real> logits;
    for (int tok : res.sequence.tokens) scorer.advance(state, tok, logits);
    while (res.sequence.length() < cfg.max_len) {
        const std::vector<double> probs = filter_logits(logits, cfg);
        const int tok = draw_from(probs, rng);
        res.sequence.tokens.push_back(tok);
        if (tok == Vocabulary::kEos || res.sequence.length() >= cfg.max_len) break;
        scorer.advance(state, tok, logits);
    }
    res.graph = parse_sequence(res.sequence, vocab);
    return res;
}

namespace {
constexpr std::uint64_t kSampleTag = 0x73616d70;  // "samp"
}

std::vector<SampleResult> sample_many_ark(const ArkModel& model, const Vocabulary& vocab,
                                          const GenerationConfig& cfg, int n) {
    std::vector<SampleResult> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 64)
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::stream(cfg.seed, {kSampleTag, static_cast<std::uint64_t>(i)});
        out[static_cast<std::size_t>(i)] = sample_ark(model, vocab, cfg, rng);
    }
    return out;
}

std::vector<SampleResult> sample_many_sail(const SailModel& model, const Vocabulary& vocab,
                                           const GenerationConfig& cfg, int n, DecodeMode mode) {
    std::vector<SampleResult> out(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic, 16)
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::stream(cfg.seed, {kSampleTag, static_cast<std::uint64_t>(i)});
        out[static_cast<std::size_t>(i)] = sample_sail_unconditional(model, vocab, cfg, rng, mode);
    }
    return out;
}

SampleResult constrained_generate(const TokenScorer& scorer, const Vocabulary& vocab,
                                  const std::vector<Pin>& pins, const GenerationConfig& cfg,
                                  Rng& rng) {
    std::vector<int> pinned(static_cast<std::size_t>(cfg.max_len), -1);
    for (const Pin& pin : pins) {
        if (pin.position < 1 || pin.position >= cfg.max_len) {
            throw InvalidPin("position " + std::to_string(pin.position) + " outside 1.." +
                             std::to_string(cfg.max_len - 1));
        }
        if (pin.token == Vocabulary::kBos || pin.token == Vocabulary::kPad) {
            throw InvalidPin("BOS/PAD cannot be pinned");
        }
        if (pinned[static_cast<std::size_t>(pin.position)] != -1) {
            throw InvalidPin("position " + std::to_string(pin.position) + " pinned twice");
        }
        // body slot parity: h r t | h r t | ...; EOS only at a triple boundary
        const int slot = (pin.position - 1) % 3;
        if (pin.token == Vocabulary::kEos) {
            if (slot != 0) throw InvalidPin("EOS pinned mid-triple at position " + std::to_string(pin.position));
        } else if (slot == 1) {
            if (!vocab.is_relation(pin.token)) {
                throw InvalidPin("position " + std::to_string(pin.position) + " is a relation slot");
            }
        } else {
            if (!vocab.is_entity(pin.token)) {
                throw InvalidPin("position " + std::to_string(pin.position) + " is an entity slot");
            }
        }
        pinned[static_cast<std::size_t>(pin.position)] = pin.token;
    }

    SampleResult res;
    res.sequence.tokens.push_back(Vocabulary::kBos);
    TokenScorer::State state = scorer.initial_state();
    std::vector<real> logits;
    scorer.advance(state, Vocabulary::kBos, logits);
    while (res.sequence.length() < cfg.max_len) {
        const int pos = res.sequence.length();
        int tok = pinned[static_cast<std::size_t>(pos)];
        if (tok == -1) {
            const std::vector<double> probs = filter_logits(logits, cfg);
            tok = draw_from(probs, rng);
        }
        res.sequence.tokens.push_back(tok);
        if (tok == Vocabulary::kEos || res.sequence.length() >= cfg.max_len) break;
        scorer.advance(state, tok, logits);
    }
    res.graph = parse_sequence(res.sequence, vocab);
    return res;
}

}  // namespace kgforge
