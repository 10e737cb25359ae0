#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kgforge/kg.hpp"

namespace kgforge {

enum class DatasetId { kSynPaths, kSynTypes, kSynTipr, kWdMovies, kWdArticles };

DatasetId dataset_from_string(const std::string& id);  // throws UnknownDataset
const char* dataset_name(DatasetId id);
bool is_synthetic(DatasetId id);

// Benchmark table row: split sizes, vocabulary sizes, triples per graph.
struct DatasetSpec {
    DatasetId id;
    int train_size;
    int valid_size;
    int test_size;
    int entity_count;
    int relation_count;
    int min_triples;
    int max_triples;
};

const DatasetSpec& dataset_spec(DatasetId id);

// Fixed schemas for the synthetic generators. Validators evaluate the same
// structures, so the two sides cannot drift; save_dataset emits them as a
// schema.json sidecar.
struct SynPathsSchema {
    int entities = 49;
    int relations = 3;
    int path_edges = 3;  // 4 distinct nodes
};

struct SynTypesSchema {
    int types = 3;
    int entities_per_type = 10;
    int triples = 3;
    // relation i maps domain type i to range type (i + 1) % types
    int domain_of(int relation) const { return relation; }
    int range_of(int relation) const { return (relation + 1) % types; }
    int type_of_entity(int entity_index) const { return entity_index / entities_per_type; }
};

// Entity pool layout for the time-indexed person role template, as index
// ranges [begin, end). Years are totally ordered by index.
struct SynTiprSchema {
    int persons = 40;
    int roles = 30;
    int names = 10;
    int intervals = 20;
    int years = 30;

    int person_begin() const { return 0; }
    int role_begin() const { return persons; }
    int name_begin() const { return persons + roles; }
    int interval_begin() const { return persons + roles + names; }
    int year_begin() const { return persons + roles + names + intervals; }
    int total() const { return persons + roles + names + intervals + years; }

    bool is_person(int e) const { return e >= person_begin() && e < role_begin(); }
    bool is_role(int e) const { return e >= role_begin() && e < name_begin(); }
    bool is_name(int e) const { return e >= name_begin() && e < interval_begin(); }
    bool is_interval(int e) const { return e >= interval_begin() && e < year_begin(); }
    bool is_year(int e) const { return e >= year_begin() && e < total(); }
};

// Relation ids (vocabulary order) for syn-tipr.
enum TiprRelation { kHasRole = 0, kHasName = 1, kHasTime = 2, kStartYear = 3, kEndYear = 4 };

std::string schema_json_text(DatasetId id);

// Vocabulary with the fixed label scheme of a synthetic dataset.
Vocabulary synthetic_vocabulary(DatasetId id);

struct ValidityViolation {
    std::string rule_id;
    std::string detail;
};

struct ValidityReport {
    bool valid = false;
    std::vector<ValidityViolation> violations;

    bool has_rule(const std::string& rule_id) const;
};

// Per relation id: entities observed as subject and as object in the
// training split. Closed-world type system for the wd-* validators.
class SlotTypeMap {
  public:
    void add(const Triple& t);
    bool subject_seen(int relation, int entity) const;
    bool object_seen(int relation, int entity) const;
    bool has_relation(int relation) const;

  private:
    std::unordered_map<int, std::unordered_set<int>> subjects_;
    std::unordered_map<int, std::unordered_set<int>> objects_;
};

SlotTypeMap infer_slot_types(const std::vector<KnowledgeGraph>& train);

// Dataset-specific semantic rules; aux is required iff the dataset is wd-*.
// The empty graph is invalid with rule `empty` for every dataset.
ValidityReport validate(DatasetId id, const KnowledgeGraph& graph, const Vocabulary& vocab,
                        const SlotTypeMap* aux = nullptr);
ValidityReport validate(const std::string& dataset_id, const KnowledgeGraph& graph,
                        const Vocabulary& vocab, const SlotTypeMap* aux = nullptr);

// Synthetic generators; graph i is drawn from the substream (seed, i), so a
// list is deterministic under (n, seed) and individual graphs can be
// regenerated independently.
std::vector<KnowledgeGraph> generate_syn_paths(int n, std::uint64_t seed);
std::vector<KnowledgeGraph> generate_syn_types(int n, std::uint64_t seed);
std::vector<KnowledgeGraph> generate_syn_tipr(int n, std::uint64_t seed);
std::vector<KnowledgeGraph> generate_synthetic(DatasetId id, int n, std::uint64_t seed);

struct SplitSizes {
    int train = 0;
    int valid = 0;
    int test = 0;
};

struct DatasetBundle {
    DatasetId id;
    Vocabulary vocab;
    std::vector<KnowledgeGraph> train;
    std::vector<KnowledgeGraph> valid;
    std::vector<KnowledgeGraph> test;
    int max_len = 0;  // 2 + 3 * max triples in train
};

// Generates all three splits. With dedup set, canonical keys are pairwise
// disjoint across splits (rejected candidates are skipped deterministically).
DatasetBundle generate_splits(DatasetId id, const SplitSizes& sizes, std::uint64_t seed,
                              bool dedup_splits);

// Directory layout: entities.txt / relations.txt (one label per line),
// train.tsv / valid.tsv / test.tsv (head<TAB>relation<TAB>tail label rows,
// graphs separated by exactly one blank line, no trailing blank line),
// schema.json for synthetic datasets.
void save_dataset(const std::string& dir, const DatasetBundle& bundle);
DatasetBundle load_dataset(const std::string& dir, DatasetId id);

// Blank-line separated triple blocks, same format as the split files.
// An empty graph round-trips as a `# empty` marker line.
std::vector<KnowledgeGraph> read_graph_file(const std::string& path, const Vocabulary& vocab);
void write_graph_file(const std::string& path, const std::vector<KnowledgeGraph>& graphs,
                      const Vocabulary& vocab);

}  // namespace kgforge
