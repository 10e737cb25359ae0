#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgforge/rng.hpp"

namespace kgforge {

// One (head, relation, tail) fact over unified token ids. Parsed model
// output may carry ids of the wrong kind in a slot; validators reject those,
// the type itself stores raw ids.
struct Triple {
    int head = 0;
    int relation = 0;
    int tail = 0;

    auto operator<=>(const Triple&) const = default;
};

// A set of triples. Stored sorted and deduplicated so iteration order is
// canonical and equality is set equality.
class KnowledgeGraph {
  public:
    KnowledgeGraph() = default;
    explicit KnowledgeGraph(std::vector<Triple> triples);

    void insert(const Triple& t);
    bool contains(const Triple& t) const;
    bool contains_all(const KnowledgeGraph& other) const;

    const std::vector<Triple>& triples() const { return triples_; }
    bool empty() const { return triples_.empty(); }
    std::size_t size() const { return triples_.size(); }

    // Equal keys iff equal triple sets; the empty graph maps to the empty
    // string sentinel.
    std::string canonical_key() const;

    bool operator==(const KnowledgeGraph&) const = default;

  private:
    std::vector<Triple> triples_;
};

// Unified id space: specials 0-2, then entities, then relations, each in
// input order.
class Vocabulary {
  public:
    static constexpr int kBos = 0;
    static constexpr int kPad = 1;
    static constexpr int kEos = 2;
    static constexpr int kNumSpecials = 3;

    Vocabulary() = default;
    // Throws DuplicateLabel when a label repeats within or across the lists.
    Vocabulary(std::vector<std::string> entity_labels, std::vector<std::string> relation_labels);

    int size() const { return kNumSpecials + entity_count() + relation_count(); }
    int entity_count() const { return static_cast<int>(entities_.size()); }
    int relation_count() const { return static_cast<int>(relations_.size()); }
    int entity_offset() const { return kNumSpecials; }
    int relation_offset() const { return kNumSpecials + entity_count(); }

    bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
    bool is_entity(int id) const {
        return id >= entity_offset() && id < entity_offset() + entity_count();
    }
    bool is_relation(int id) const {
        return id >= relation_offset() && id < relation_offset() + relation_count();
    }

    // Label <-> id, throwing VocabularyMiss on unknown input.
    int id(const std::string& label) const;
    const std::string& label(int id) const;

    // 0-based index within entity/relation tables.
    int entity_index(int id) const { return id - entity_offset(); }
    int relation_index(int id) const { return id - relation_offset(); }
    int entity_id(int index) const { return index + entity_offset(); }
    int relation_id(int index) const { return index + relation_offset(); }

    const std::vector<std::string>& entity_labels() const { return entities_; }
    const std::vector<std::string>& relation_labels() const { return relations_; }

  private:
    std::vector<std::string> entities_;
    std::vector<std::string> relations_;
    std::vector<std::string> specials_{"[BOS]", "[PAD]", "[EOS]"};
    // label -> id over all three segments
    std::vector<std::pair<std::string, int>> index_;  // sorted by label
    void build_index();
};

// [BOS, h1, r1, t1, ..., EOS] without padding; length counts BOS and EOS.
struct TokenSequence {
    std::vector<int> tokens;

    int length() const { return static_cast<int>(tokens.size()); }
};

// Padded batch with shifted-target loss mask. tokens is row-major
// (rows x l_max); mask is row-major (rows x (l_max-1)) and marks target
// positions 0..length-2, i.e. every real next-token prediction including
// EOS and excluding PAD.
struct Batch {
    int rows = 0;
    int l_max = 0;
    std::vector<int> tokens;
    std::vector<int> lengths;
    std::vector<std::uint8_t> mask;

    int token_at(int row, int col) const { return tokens[static_cast<std::size_t>(row) * l_max + col]; }
};

// Deterministic id assignment: specials, then entities, then relations, in
// list order.
Vocabulary build_vocabulary(std::vector<std::string> entity_labels,
                            std::vector<std::string> relation_labels);

// Triples in a seeded uniform-random permutation between BOS and EOS. The
// permutation is drawn from the canonical (sorted) order, so equal graphs
// and equal seeds always give equal sequences.
TokenSequence linearize(const KnowledgeGraph& graph, const Vocabulary& vocab,
                        std::uint64_t order_seed);

// Reads (h, r, t) groups between BOS and the first EOS; a trailing group of
// 1 or 2 tokens is dropped; duplicates collapse. Tolerates malformed input.
// If the sequence has no EOS it is read to the end and *missing_eos (when
// given) is set.
KnowledgeGraph parse_sequence(const TokenSequence& seq, const Vocabulary& vocab,
                              bool* missing_eos = nullptr);

// Pads to (sequences.size() x l_max). Throws SequenceTooLong naming the
// offending row when a sequence exceeds l_max.
Batch pad_batch(const std::vector<TokenSequence>& sequences, int l_max);

// 2 + 3 * (max triples over the given graphs); the fixed decode length for a
// dataset is this value computed over its training split.
int derive_max_len(const std::vector<KnowledgeGraph>& graphs);

}  // namespace kgforge
