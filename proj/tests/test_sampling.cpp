#include <doctest.h>

#include <cmath>
#include <set>

#include "kgforge/datasets.hpp"
#include "kgforge/errors.hpp"
#include "kgforge/sampling.hpp"
#include "support/oracles.hpp"

using namespace kgforge;
using kgforge::testing::TableScorer;
using kgforge::testing::exhaustive_best_sequence;
using kgforge::testing::reference_filter;

namespace {

GenerationConfig plain_cfg(int max_len = 11) {
    GenerationConfig cfg;
    cfg.max_len = max_len;
    return cfg;
}

std::vector<real> random_logits(int v, Rng& rng, double scale = 2.0) {
    std::vector<real> l(static_cast<std::size_t>(v));
    for (real& x : l) x = static_cast<real>(rng.next_normal() * scale);
    return l;
}

}  // namespace

TEST_CASE("nucleus keeps the smallest prefix strictly above p and renormalizes") {
    // candidates at ids 2,3,4 with softmax probs 0.5 / 0.3 / 0.2
    std::vector<real> logits(5, 0);
    logits[0] = -100;  // BOS, masked anyway
    logits[1] = -100;  // PAD
    logits[2] = static_cast<real>(std::log(0.5));
    logits[3] = static_cast<real>(std::log(0.3));
    logits[4] = static_cast<real>(std::log(0.2));
    GenerationConfig cfg = plain_cfg();
    cfg.top_p = 0.6;
    const auto probs = filter_logits(logits, cfg);
    CHECK(probs[2] == doctest::Approx(0.625).epsilon(1e-9));
    CHECK(probs[3] == doctest::Approx(0.375).epsilon(1e-9));
    CHECK(probs[4] == 0.0);
    CHECK(probs[0] == 0.0);
    CHECK(probs[1] == 0.0);
}

TEST_CASE("identity configuration is a plain softmax over the candidates") {
    std::vector<real> logits{0, 0, 1, 2, 3};
    const auto probs = filter_logits(logits, plain_cfg());
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(probs[2] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
    CHECK(probs[3] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
    CHECK(probs[4] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));
}

TEST_CASE("top-k keeps the k largest logits") {
    std::vector<real> logits{0, 0, 2, 1, 0};
    GenerationConfig cfg = plain_cfg();
    cfg.top_k = 2;
    const auto probs = filter_logits(logits, cfg);
    const double z = std::exp(2.0) + std::exp(1.0);
    CHECK(probs[2] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-9));
    CHECK(probs[3] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-9));
    CHECK(probs[4] == 0.0);
    CHECK(probs[2] == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("filter output is a probability vector with BOS/PAD mass zero") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
        const int v = 3 + static_cast<int>(rng.next_below(60));
        auto logits = random_logits(v, rng);
        GenerationConfig cfg = plain_cfg();
        cfg.temperature = 0.25 + rng.next_double() * 3;
        cfg.top_k = rng.next_below(2) == 0 ? 0 : 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(v)));
        cfg.top_p = 0.05 + rng.next_double() * 0.95;
        const auto probs = filter_logits(logits, cfg);
        double sum = 0;
        int support = 0;
        for (double p : probs) {
            CHECK(p >= 0);
            sum += p;
            support += p > 0;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(probs[0] == 0.0);
        CHECK(probs[1] == 0.0);
        if (cfg.top_k > 0) CHECK(support <= cfg.top_k);
    }
}

TEST_CASE("nucleus support grows monotonically with p") {
    Rng rng(43);
    for (int trial = 0; trial < 200; ++trial) {
        const auto logits = random_logits(12, rng);
        GenerationConfig lo = plain_cfg(), hi = plain_cfg();
        lo.top_p = rng.next_double();
        hi.top_p = lo.top_p + (1 - lo.top_p) * rng.next_double();
        if (lo.top_p <= 0) continue;
        const auto p_lo = filter_logits(logits, lo);
        const auto p_hi = filter_logits(logits, hi);
        for (std::size_t i = 0; i < p_lo.size(); ++i) {
            if (p_lo[i] > 0) CHECK(p_hi[i] > 0);
        }
    }
}

TEST_CASE("temperature near zero is argmax decoding") {
    Rng rng(44);
    for (int trial = 0; trial < 50; ++trial) {
        const auto logits = random_logits(20, rng);
        GenerationConfig cfg = plain_cfg();
        cfg.temperature = 1e-4;
        const auto probs = filter_logits(logits, cfg);
        int argmax = 2;
        for (int i = 3; i < 20; ++i) {
            if (logits[static_cast<std::size_t>(i)] > logits[static_cast<std::size_t>(argmax)]) argmax = i;
        }
        CHECK(probs[static_cast<std::size_t>(argmax)] == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("filter matches the brute-force reference on 1000 random vectors") {
    Rng rng(45);
    for (int trial = 0; trial < 1000; ++trial) {
        const int v = 3 + static_cast<int>(rng.next_below(30));
        const auto logits = random_logits(v, rng, 3.0);
        GenerationConfig cfg = plain_cfg();
        cfg.temperature = 0.2 + rng.next_double() * 2.8;
        cfg.top_k = rng.next_below(3) == 0 ? 0 : 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(v)));
        cfg.top_p = 0.02 + rng.next_double() * 0.98;

        const auto got = filter_logits(logits, cfg);
        std::vector<double> logits_d(logits.begin(), logits.end());
        const auto want = reference_filter(logits_d, cfg.temperature, cfg.top_k, cfg.top_p);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("degenerate distribution throws when no candidates exist") {
    GenerationConfig cfg = plain_cfg();
    std::vector<real> logits{0, 0};  // BOS and PAD only
    CHECK_THROWS_AS((void)filter_logits(logits, cfg), DegenerateDistribution);
}

namespace {

// vocab {BOS, PAD, EOS, a, b}: greedy takes a (0.6) but a leads to a flat
// continuation, while b (0.4) continues into a near-certain EOS
TableScorer greedy_trap() {
    const real lo = -30;
    std::vector<std::vector<real>> rows(5, std::vector<real>(5, lo));
    rows[0] = {lo, lo, lo, static_cast<real>(std::log(0.6)), static_cast<real>(std::log(0.4))};
    rows[3] = {lo, lo, 0, 0, 0};                       // after a: EOS/a/b equally likely
    rows[4] = {lo, lo, 9, 0, 0};                       // after b: EOS almost certain
    return TableScorer(rows);
}

}  // namespace

TEST_CASE("beam width 1 equals greedy decoding") {
    const TableScorer scorer = greedy_trap();
    const TokenSequence beam1 = beam_search(scorer, 1, 3);

    // greedy by hand
    std::vector<int> greedy{0};
    TokenScorer::State st = scorer.initial_state();
    std::vector<real> logits;
    scorer.advance(st, 0, logits);
    while (static_cast<int>(greedy.size()) < 3) {
        int best = 2;
        for (int t = 3; t < 5; ++t) {
            if (logits[static_cast<std::size_t>(t)] > logits[static_cast<std::size_t>(best)]) best = t;
        }
        greedy.push_back(best);
        if (best == 2) break;
        scorer.advance(st, best, logits);
    }
    CHECK(beam1.tokens == greedy);
    CHECK(beam1.tokens[1] == 3);  // greedy falls into the trap
}

TEST_CASE("beam width 2 escapes the greedy trap and matches exhaustive search") {
    const TableScorer scorer = greedy_trap();
    const TokenSequence beam2 = beam_search(scorer, 2, 3);
    CHECK(beam2.tokens[1] == 4);  // takes b
    const auto best = exhaustive_best_sequence(scorer, 3);
    CHECK(beam2.tokens == best.tokens);
}

TEST_CASE("wide beam equals exhaustive argmax on random toy models") {
    Rng rng(46);
    for (int trial = 0; trial < 100; ++trial) {
        const int v = 3 + static_cast<int>(rng.next_below(3));       // 3..5
        const int max_len = 3 + static_cast<int>(rng.next_below(3)); // 3..5
        std::vector<std::vector<real>> rows(static_cast<std::size_t>(v));
        for (auto& r : rows) r = random_logits(v, rng, 1.5);
        const TableScorer scorer(rows);

        int width = 1;
        for (int i = 0; i < max_len; ++i) width *= v;  // enough to be exhaustive
        const TokenSequence beam = beam_search(scorer, width, max_len);
        const auto best = exhaustive_best_sequence(scorer, max_len);
        CHECK(beam.tokens == best.tokens);

        // the returned score is the plain sum of teacher-forced log probs
        const double nll = sequence_nll_nats(scorer, beam);
        CHECK(-nll == doctest::Approx(best.score).epsilon(1e-9));
    }
}

TEST_CASE("ancestral sampling is deterministic under a fixed seed and respects max_len") {
    const Vocabulary vocab = synthetic_vocabulary(DatasetId::kSynPaths);
    ArkModel model(vocab.size(), 16, 1, 7);
    GenerationConfig cfg = plain_cfg(11);
    cfg.seed = 99;

    Rng r1(cfg.seed), r2(cfg.seed);
    ArkScorer scorer(model);
    const TokenSequence s1 = sample_sequence(scorer, cfg, r1);
    const TokenSequence s2 = sample_sequence(scorer, cfg, r2);
    CHECK(s1.tokens == s2.tokens);
    CHECK(s1.length() <= 11);

    GenerationConfig short_cfg = plain_cfg(2);
    Rng r3(5);
    const TokenSequence s3 = sample_sequence(scorer, short_cfg, r3);
    CHECK(s3.length() == 2);
    CHECK(s3.tokens[0] == Vocabulary::kBos);
}

TEST_CASE("sample_many_ark is reproducible and indexes independent streams") {
    const Vocabulary vocab = synthetic_vocabulary(DatasetId::kSynPaths);
    ArkModel model(vocab.size(), 8, 1, 3);
    GenerationConfig cfg = plain_cfg(11);
    cfg.seed = 17;
    const auto a = sample_many_ark(model, vocab, cfg, 20);
    const auto b = sample_many_ark(model, vocab, cfg, 20);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].sequence.tokens == b[i].sequence.tokens);
}

TEST_CASE("beam decoding of one latent code is deterministic") {
    const Vocabulary vocab = synthetic_vocabulary(DatasetId::kSynPaths);
    SailModel model(vocab.entity_count(), vocab.relation_count(), 12, 1, 4, 8, 9);
    GenerationConfig cfg = plain_cfg(11);
    const std::vector<real> z(4, 0);
    const auto r1 = decode_latent(model, vocab, z, cfg);
    const auto r2 = decode_latent(model, vocab, z, cfg);
    CHECK(r1.sequence.tokens == r2.sequence.tokens);
}

TEST_CASE("conditional completion always keeps the prefix triples") {
    const Vocabulary vocab = synthetic_vocabulary(DatasetId::kSynPaths);
    SailModel model(vocab.entity_count(), vocab.relation_count(), 12, 1, 4, 8, 31);
    const auto graphs = generate_syn_paths(10, 21);
    GenerationConfig cfg = plain_cfg(11);

    std::set<std::string> keys;
    for (int trial = 0; trial < 50; ++trial) {
        KnowledgeGraph partial;
        partial.insert(graphs[static_cast<std::size_t>(trial) % graphs.size()].triples()[0]);
        Rng rng(static_cast<std::uint64_t>(trial));
        const SampleResult res = complete_conditional(model, vocab, partial, cfg, rng);
        CHECK(res.graph.contains_all(partial));
        keys.insert(res.graph.canonical_key());
    }
    CHECK(keys.size() > 1);  // different seeds give diverse completions

    Rng empty_rng(0);
    CHECK_THROWS_AS((void)complete_conditional(model, vocab, KnowledgeGraph{}, cfg, empty_rng),
                    Error);
}

TEST_CASE("pinning every position reproduces the template exactly") {
    const Vocabulary vocab = synthetic_vocabulary(DatasetId::kSynPaths);
    ArkModel model(vocab.size(), 8, 1, 13);
    ArkScorer scorer(model);
    GenerationConfig cfg = plain_cfg(11);
    cfg.seed = 5;

    const auto g = generate_syn_paths(1, 77)[0];
    const TokenSequence target = linearize(g, vocab, 4);
    std::vector<Pin> pins;
    for (int pos = 1; pos < target.length(); ++pos) {
        pins.push_back({pos, target.tokens[static_cast<std::size_t>(pos)]});
    }
    Rng rng(cfg.seed);
    const SampleResult res = constrained_generate(scorer, vocab, pins, cfg, rng);
    CHECK(res.sequence.tokens == target.tokens);
    CHECK(res.graph == g);
}

TEST_CASE("no pins reproduces plain ancestral sampling stream for stream") {
    const Vocabulary vocab = synthetic_vocabulary(DatasetId::kSynPaths);
    ArkModel model(vocab.size(), 8, 1, 13);
    ArkScorer scorer(model);
    GenerationConfig cfg = plain_cfg(11);

    Rng r1(9), r2(9);
    const SampleResult pinned = constrained_generate(scorer, vocab, {}, cfg, r1);
    const TokenSequence free_run = sample_sequence(scorer, cfg, r2);
    CHECK(pinned.sequence.tokens == free_run.tokens);
}

TEST_CASE("invalid pins are rejected") {
    const Vocabulary vocab = synthetic_vocabulary(DatasetId::kSynPaths);
    ArkModel model(vocab.size(), 8, 1, 13);
    ArkScorer scorer(model);
    GenerationConfig cfg = plain_cfg(11);
    Rng rng(1);

    const int entity = vocab.entity_id(0);
    const int relation = vocab.relation_id(0);
    CHECK_THROWS_AS((void)constrained_generate(scorer, vocab, {{1, Vocabulary::kBos}}, cfg, rng),
                    InvalidPin);
    CHECK_THROWS_AS((void)constrained_generate(scorer, vocab, {{1, Vocabulary::kPad}}, cfg, rng),
                    InvalidPin);
    CHECK_THROWS_AS((void)constrained_generate(scorer, vocab, {{0, entity}}, cfg, rng), InvalidPin);
    CHECK_THROWS_AS((void)constrained_generate(scorer, vocab, {{11, entity}}, cfg, rng), InvalidPin);
    // relation id in an entity slot and vice versa
    CHECK_THROWS_AS((void)constrained_generate(scorer, vocab, {{1, relation}}, cfg, rng), InvalidPin);
    CHECK_THROWS_AS((void)constrained_generate(scorer, vocab, {{2, entity}}, cfg, rng), InvalidPin);
    // EOS mid-triple
    CHECK_THROWS_AS((void)constrained_generate(scorer, vocab, {{2, Vocabulary::kEos}}, cfg, rng),
                    InvalidPin);
    // duplicate position
    CHECK_THROWS_AS(
        (void)constrained_generate(scorer, vocab, {{1, entity}, {1, entity}}, cfg, rng), InvalidPin);
}
