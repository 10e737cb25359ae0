#include <doctest.h>

#include "kgforge/datasets.hpp"
#include "kgforge/errors.hpp"
#include "kgforge/kg.hpp"

using namespace kgforge;

TEST_CASE("vocabulary id layout: specials, entities, relations in order") {
    const Vocabulary v = build_vocabulary({"A", "B"}, {"r"});
    CHECK(v.size() == 6);
    CHECK(v.id("A") == 3);
    CHECK(v.id("B") == 4);
    CHECK(v.id("r") == 5);
    CHECK(Vocabulary::kBos == 0);
    CHECK(Vocabulary::kPad == 1);
    CHECK(Vocabulary::kEos == 2);
    CHECK(v.label(3) == "A");
    CHECK(v.is_entity(4));
    CHECK(v.is_relation(5));
}

TEST_CASE("empty vocabulary has only specials and misses every entity") {
    const Vocabulary v = build_vocabulary({}, {});
    CHECK(v.size() == 3);
    CHECK_THROWS_AS((void)v.id("anything"), VocabularyMiss);
    CHECK_THROWS_AS((void)v.label(3), VocabularyMiss);
}

TEST_CASE("syn-paths vocabulary is 49 entities + 3 relations = 55 ids") {
    const Vocabulary v = synthetic_vocabulary(DatasetId::kSynPaths);
    CHECK(v.entity_count() == 49);
    CHECK(v.relation_count() == 3);
    CHECK(v.size() == 55);
}

TEST_CASE("duplicate labels are rejected by name") {
    CHECK_THROWS_WITH_AS((void)build_vocabulary({"A", "A"}, {"r"}), "duplicate label: A",
                         DuplicateLabel);
    CHECK_THROWS_AS((void)build_vocabulary({"x"}, {"x"}), DuplicateLabel);
}

TEST_CASE("vocabulary bijectivity: id -> label -> id is the identity") {
    const Vocabulary v = synthetic_vocabulary(DatasetId::kSynTipr);
    for (int id = 0; id < v.size(); ++id) {
        CHECK(v.id(v.label(id)) == id);
    }
}

TEST_CASE("linearize emits BOS, permuted triples, EOS") {
    const Vocabulary v = build_vocabulary({"A", "B", "C"}, {"r1", "r2"});
    KnowledgeGraph g;
    g.insert({v.id("A"), v.id("r1"), v.id("B")});
    g.insert({v.id("B"), v.id("r2"), v.id("C")});

    // find a seed whose permutation of two triples is the identity
    std::uint64_t id_seed = 0;
    for (std::uint64_t s = 0; s < 64; ++s) {
        const TokenSequence seq = linearize(g, v, s);
        if (seq.tokens[1] == v.id("A")) {
            id_seed = s;
            break;
        }
    }
    const TokenSequence seq = linearize(g, v, id_seed);
    CHECK(seq.tokens == std::vector<int>{0, v.id("A"), v.id("r1"), v.id("B"), v.id("B"), v.id("r2"),
                                         v.id("C"), 2});
    CHECK(seq.length() == 8);

    // same seed, same permutation
    CHECK(linearize(g, v, 17).tokens == linearize(g, v, 17).tokens);
}

TEST_CASE("empty graph linearizes to [BOS, EOS]") {
    const Vocabulary v = build_vocabulary({"A"}, {"r"});
    const TokenSequence seq = linearize(KnowledgeGraph{}, v, 5);
    CHECK(seq.tokens == std::vector<int>{0, 2});
}

TEST_CASE("linearize rejects out-of-vocabulary ids") {
    const Vocabulary v = build_vocabulary({"A"}, {"r"});
    KnowledgeGraph g;
    g.insert({3, 4, 99});
    CHECK_THROWS_AS((void)linearize(g, v, 0), VocabularyMiss);
}

TEST_CASE("round trip: parse(linearize(g, s)) == g for all seeds") {
    const Vocabulary v = synthetic_vocabulary(DatasetId::kSynPaths);
    const auto graphs = generate_syn_paths(30, 99);
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        for (std::uint64_t s = 0; s < 5; ++s) {
            const KnowledgeGraph parsed = parse_sequence(linearize(graphs[i], v, s * 31 + i), v);
            CHECK(parsed == graphs[i]);
        }
    }
}

TEST_CASE("parse drops a trailing incomplete triple") {
    const Vocabulary v = build_vocabulary({"h1", "t1", "h2"}, {"r1", "r2"});
    TokenSequence seq;
    seq.tokens = {0, v.id("h1"), v.id("r1"), v.id("t1"), v.id("h2"), v.id("r2"), 2};
    const KnowledgeGraph g = parse_sequence(seq, v);
    CHECK(g.size() == 1);
    CHECK(g.contains({v.id("h1"), v.id("r1"), v.id("t1")}));
}

TEST_CASE("parse of [BOS, EOS] is the empty graph") {
    const Vocabulary v = build_vocabulary({"A"}, {"r"});
    TokenSequence seq;
    seq.tokens = {0, 2};
    CHECK(parse_sequence(seq, v).empty());
}

TEST_CASE("parse collapses duplicate triples") {
    const Vocabulary v = build_vocabulary({"h", "t"}, {"r"});
    TokenSequence seq;
    seq.tokens = {0, 3, 5, 4, 3, 5, 4, 2};
    CHECK(parse_sequence(seq, v).size() == 1);
}

TEST_CASE("parse without EOS reads to the end and reports it") {
    const Vocabulary v = build_vocabulary({"h", "t"}, {"r"});
    TokenSequence seq;
    seq.tokens = {0, 3, 5, 4};
    bool missing = false;
    const KnowledgeGraph g = parse_sequence(seq, v, &missing);
    CHECK(missing);
    CHECK(g.size() == 1);

    seq.tokens = {0, 3, 5, 4, 2};
    (void)parse_sequence(seq, v, &missing);
    CHECK_FALSE(missing);
}

TEST_CASE("canonical keys are order-independent and direction-sensitive") {
    KnowledgeGraph g1;
    g1.insert({3, 9, 4});
    g1.insert({5, 9, 6});
    KnowledgeGraph g2;
    g2.insert({5, 9, 6});
    g2.insert({3, 9, 4});
    CHECK(g1.canonical_key() == g2.canonical_key());

    KnowledgeGraph fwd, rev;
    fwd.insert({3, 9, 4});
    rev.insert({4, 9, 3});
    CHECK(fwd.canonical_key() != rev.canonical_key());

    CHECK(KnowledgeGraph{}.canonical_key() == "");
}

TEST_CASE("pad_batch pads after EOS and masks exactly the target positions") {
    TokenSequence seq;
    seq.tokens = {0, 3, 5, 4, 2};  // BOS A r B EOS
    const Batch b = pad_batch({seq}, 8);
    CHECK(b.rows == 1);
    CHECK(b.l_max == 8);
    CHECK(b.tokens == std::vector<int>{0, 3, 5, 4, 2, 1, 1, 1});  // 3 trailing PADs
    int mask_sum = 0;
    for (auto m : b.mask) mask_sum += m;
    CHECK(mask_sum == 4);  // targets A r B EOS
    // mask popcount == length - 1
    CHECK(mask_sum == seq.length() - 1);
}

TEST_CASE("sequence of exactly l_max gets zero pads") {
    TokenSequence seq;
    seq.tokens = {0, 3, 5, 4, 2};
    const Batch b = pad_batch({seq}, 5);
    for (int tok : b.tokens) CHECK(tok != Vocabulary::kPad);
}

TEST_CASE("empty batch is not an error") {
    const Batch b = pad_batch({}, 8);
    CHECK(b.rows == 0);
    CHECK(b.tokens.empty());
}

TEST_CASE("overlong sequences are rejected naming the row") {
    TokenSequence seq;
    seq.tokens = {0, 3, 5, 4, 2};
    CHECK_THROWS_AS((void)pad_batch({seq}, 4), SequenceTooLong);
}

TEST_CASE("mask popcount equals length - 1 for every row of a mixed batch") {
    const Vocabulary v = synthetic_vocabulary(DatasetId::kSynPaths);
    const auto graphs = generate_syn_paths(10, 5);
    std::vector<TokenSequence> seqs;
    for (std::size_t i = 0; i < graphs.size(); ++i) seqs.push_back(linearize(graphs[i], v, i));
    TokenSequence empty;
    empty.tokens = {0, 2};
    seqs.push_back(empty);
    const Batch b = pad_batch(seqs, 14);
    for (int r = 0; r < b.rows; ++r) {
        int sum = 0;
        for (int j = 0; j < b.l_max - 1; ++j) sum += b.mask[static_cast<std::size_t>(r) * (b.l_max - 1) + j];
        CHECK(sum == b.lengths[static_cast<std::size_t>(r)] - 1);
    }
}

TEST_CASE("derive_max_len is 2 + 3 * max triples") {
    const auto graphs = generate_syn_paths(5, 1);
    CHECK(derive_max_len(graphs) == 11);
    CHECK(derive_max_len({}) == 2);
}
