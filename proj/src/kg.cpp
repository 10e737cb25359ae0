#include "kgforge/kg.hpp"

#include <algorithm>
#include <cstdio>

#include "kgforge/errors.hpp"

namespace kgforge {

KnowledgeGraph::KnowledgeGraph(std::vector<Triple> triples) : triples_(std::move(triples)) {
    std::sort(triples_.begin(), triples_.end());
    triples_.erase(std::unique(triples_.begin(), triples_.end()), triples_.end());
}

void KnowledgeGraph::insert(const Triple& t) {
    auto it = std::lower_bound(triples_.begin(), triples_.end(), t);
    if (it == triples_.end() || *it != t) triples_.insert(it, t);
}

bool KnowledgeGraph::contains(const Triple& t) const {
    return std::binary_search(triples_.begin(), triples_.end(), t);
}

bool KnowledgeGraph::contains_all(const KnowledgeGraph& other) const {
    return std::includes(triples_.begin(), triples_.end(), other.triples_.begin(),
                         other.triples_.end());
}

std::string KnowledgeGraph::canonical_key() const {
    std::string key;
    key.reserve(triples_.size() * 24);
    char buf[64];
    for (const Triple& t : triples_) {
        std::snprintf(buf, sizeof buf, "%d,%d,%d;", t.head, t.relation, t.tail);
        key += buf;
    }
    return key;
}

Vocabulary::Vocabulary(std::vector<std::string> entity_labels,
                       std::vector<std::string> relation_labels)
    : entities_(std::move(entity_labels)), relations_(std::move(relation_labels)) {
    build_index();
}

void Vocabulary::build_index() {
    index_.clear();
    index_.reserve(static_cast<std::size_t>(size()));
    for (int i = 0; i < kNumSpecials; ++i) index_.emplace_back(specials_[i], i);
    for (int i = 0; i < entity_count(); ++i) index_.emplace_back(entities_[i], entity_id(i));
    for (int i = 0; i < relation_count(); ++i) index_.emplace_back(relations_[i], relation_id(i));
    std::sort(index_.begin(), index_.end());
    for (std::size_t i = 1; i < index_.size(); ++i) {
        if (index_[i].first == index_[i - 1].first) throw DuplicateLabel(index_[i].first);
    }
}

int Vocabulary::id(const std::string& label) const {
    auto it = std::lower_bound(index_.begin(), index_.end(), label,
                               [](const auto& p, const std::string& l) { return p.first < l; });
    if (it == index_.end() || it->first != label) throw VocabularyMiss("label '" + label + "'");
    return it->second;
}

const std::string& Vocabulary::label(int id) const {
    if (is_special(id)) return specials_[static_cast<std::size_t>(id)];
    if (is_entity(id)) return entities_[static_cast<std::size_t>(entity_index(id))];
    if (is_relation(id)) return relations_[static_cast<std::size_t>(relation_index(id))];
    throw VocabularyMiss("id " + std::to_string(id));
}

Vocabulary build_vocabulary(std::vector<std::string> entity_labels,
                            std::vector<std::string> relation_labels) {
    return Vocabulary(std::move(entity_labels), std::move(relation_labels));
}

TokenSequence linearize(const KnowledgeGraph& graph, const Vocabulary& vocab,
                        std::uint64_t order_seed) {
    for (const Triple& t : graph.triples()) {
        for (int id : {t.head, t.relation, t.tail}) {
            if (id < 0 || id >= vocab.size()) throw VocabularyMiss("id " + std::to_string(id));
        }
    }
    std::vector<std::size_t> order(graph.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(order_seed);
    rng.shuffle(order);

    TokenSequence seq;
    seq.tokens.reserve(graph.size() * 3 + 2);
    seq.tokens.push_back(Vocabulary::kBos);
    for (std::size_t i : order) {
        const Triple& t = graph.triples()[i];
        seq.tokens.push_back(t.head);
        seq.tokens.push_back(t.relation);
        seq.tokens.push_back(t.tail);
    }
    seq.tokens.push_back(Vocabulary::kEos);
    return seq;
}

KnowledgeGraph parse_sequence(const TokenSequence& seq, const Vocabulary& vocab,
                              bool* missing_eos) {
    (void)vocab;
    if (missing_eos != nullptr) *missing_eos = true;
    std::size_t begin = 0;
    if (!seq.tokens.empty() && seq.tokens[0] == Vocabulary::kBos) begin = 1;

    KnowledgeGraph graph;
    int slot[3];
    int filled = 0;
    for (std::size_t i = begin; i < seq.tokens.size(); ++i) {
        const int tok = seq.tokens[i];
        if (tok == Vocabulary::kEos) {
            if (missing_eos != nullptr) *missing_eos = false;
            break;
        }
        slot[filled++] = tok;
        if (filled == 3) {
            graph.insert({slot[0], slot[1], slot[2]});
            filled = 0;
        }
    }
    // A trailing group of 1 or 2 tokens is an incomplete triple; drop it.
    return graph;
}

Batch pad_batch(const std::vector<TokenSequence>& sequences, int l_max) {
    Batch batch;
    batch.rows = static_cast<int>(sequences.size());
    batch.l_max = l_max;
    batch.tokens.assign(static_cast<std::size_t>(batch.rows) * l_max, Vocabulary::kPad);
    batch.mask.assign(static_cast<std::size_t>(batch.rows) * (l_max > 0 ? l_max - 1 : 0), 0);
    batch.lengths.resize(static_cast<std::size_t>(batch.rows));

    for (int r = 0; r < batch.rows; ++r) {
        const TokenSequence& seq = sequences[static_cast<std::size_t>(r)];
        if (seq.length() > l_max) {
            throw SequenceTooLong("row " + std::to_string(r) + " has length " +
                                  std::to_string(seq.length()) + " > " + std::to_string(l_max));
        }
        batch.lengths[static_cast<std::size_t>(r)] = seq.length();
        for (int c = 0; c < seq.length(); ++c) {
            batch.tokens[static_cast<std::size_t>(r) * l_max + c] = seq.tokens[static_cast<std::size_t>(c)];
        }
        // Target position j predicts tokens[j+1]; real targets run through EOS.
        for (int j = 0; j + 1 < seq.length(); ++j) {
            batch.mask[static_cast<std::size_t>(r) * (l_max - 1) + j] = 1;
        }
    }
    return batch;
}

int derive_max_len(const std::vector<KnowledgeGraph>& graphs) {
    std::size_t max_triples = 0;
    for (const auto& g : graphs) max_triples = std::max(max_triples, g.size());
    return static_cast<int>(2 + 3 * max_triples);
}

}  // namespace kgforge
