#include "kgforge/datasets.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kgforge/errors.hpp"
#include "kgforge/log.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace kgforge {

namespace {

constexpr DatasetSpec kSpecs[] = {
    {DatasetId::kSynPaths, 60000, 20000, 20000, 49, 3, 3, 3},
    {DatasetId::kSynTypes, 60000, 20000, 20000, 30, 3, 3, 3},
    {DatasetId::kSynTipr, 50000, 10000, 10000, 130, 5, 5, 5},
    {DatasetId::kWdMovies, 38267, 15698, 15796, 24093, 3, 2, 23},
    {DatasetId::kWdArticles, 54163, 22922, 22915, 60932, 6, 4, 212},
};

std::string two_digits(int i) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "%02d", i);
    return buf;
}

}  // namespace

DatasetId dataset_from_string(const std::string& id) {
    if (id == "syn-paths") return DatasetId::kSynPaths;
    if (id == "syn-types") return DatasetId::kSynTypes;
    if (id == "syn-tipr") return DatasetId::kSynTipr;
    if (id == "wd-movies") return DatasetId::kWdMovies;
    if (id == "wd-articles") return DatasetId::kWdArticles;
    throw UnknownDataset(id);
}

const char* dataset_name(DatasetId id) {
    switch (id) {
        case DatasetId::kSynPaths: return "syn-paths";
        case DatasetId::kSynTypes: return "syn-types";
        case DatasetId::kSynTipr: return "syn-tipr";
        case DatasetId::kWdMovies: return "wd-movies";
        case DatasetId::kWdArticles: return "wd-articles";
    }
    return "?";
}

bool is_synthetic(DatasetId id) {
    return id == DatasetId::kSynPaths || id == DatasetId::kSynTypes || id == DatasetId::kSynTipr;
}

const DatasetSpec& dataset_spec(DatasetId id) {
    for (const auto& s : kSpecs) {
        if (s.id == id) return s;
    }
    throw UnknownDataset(dataset_name(id));
}

Vocabulary synthetic_vocabulary(DatasetId id) {
    std::vector<std::string> entities;
    std::vector<std::string> relations;
    switch (id) {
        case DatasetId::kSynPaths: {
            for (int i = 0; i < SynPathsSchema{}.entities; ++i) entities.push_back("v" + two_digits(i));
            relations = {"r0", "r1", "r2"};
            break;
        }
        case DatasetId::kSynTypes: {
            const SynTypesSchema s;
            for (int i = 0; i < s.types * s.entities_per_type; ++i) entities.push_back("e" + two_digits(i));
            relations = {"r0", "r1", "r2"};
            break;
        }
        case DatasetId::kSynTipr: {
            const SynTiprSchema s;
            for (int i = 0; i < s.persons; ++i) entities.push_back("person_" + two_digits(i));
            for (int i = 0; i < s.roles; ++i) entities.push_back("role_" + two_digits(i));
            for (int i = 0; i < s.names; ++i) entities.push_back("name_" + two_digits(i));
            for (int i = 0; i < s.intervals; ++i) entities.push_back("interval_" + two_digits(i));
            for (int i = 0; i < s.years; ++i) entities.push_back("year_" + std::to_string(1990 + i));
            relations = {"has_role", "has_name", "has_time", "start_year", "end_year"};
            break;
        }
        default:
            throw UnknownDataset(std::string(dataset_name(id)) + " has no synthetic vocabulary");
    }
    return Vocabulary(std::move(entities), std::move(relations));
}

std::string schema_json_text(DatasetId id) {
    json j;
    j["dataset"] = dataset_name(id);
    switch (id) {
        case DatasetId::kSynPaths: {
            const SynPathsSchema s;
            j["entities"] = s.entities;
            j["relations"] = s.relations;
            j["structure"] = "directed simple path";
            j["path_edges"] = s.path_edges;
            break;
        }
        case DatasetId::kSynTypes: {
            const SynTypesSchema s;
            j["types"] = s.types;
            j["entities_per_type"] = s.entities_per_type;
            j["triples_per_graph"] = s.triples;
            json sigs = json::array();
            for (int r = 0; r < s.types; ++r) {
                sigs.push_back({{"relation", "r" + std::to_string(r)},
                                {"domain_type", s.domain_of(r)},
                                {"range_type", s.range_of(r)}});
            }
            j["signatures"] = sigs;
            break;
        }
        case DatasetId::kSynTipr: {
            const SynTiprSchema s;
            j["partitions"] = {{"persons", {s.person_begin(), s.role_begin()}},
                               {"roles", {s.role_begin(), s.name_begin()}},
                               {"names", {s.name_begin(), s.interval_begin()}},
                               {"intervals", {s.interval_begin(), s.year_begin()}},
                               {"years", {s.year_begin(), s.total()}}};
            j["template"] = {"(person, has_role, role)", "(role, has_name, name)",
                             "(role, has_time, interval)", "(interval, start_year, year)",
                             "(interval, end_year, year)"};
            j["temporal_rule"] = "start_year <= end_year by year index";
            break;
        }
        default:
            throw UnknownDataset(std::string(dataset_name(id)) + " has no schema sidecar");
    }
    return j.dump(2) + "\n";
}

bool ValidityReport::has_rule(const std::string& rule_id) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const ValidityViolation& v) { return v.rule_id == rule_id; });
}

void SlotTypeMap::add(const Triple& t) {
    subjects_[t.relation].insert(t.head);
    objects_[t.relation].insert(t.tail);
}

bool SlotTypeMap::subject_seen(int relation, int entity) const {
    auto it = subjects_.find(relation);
    return it != subjects_.end() && it->second.count(entity) > 0;
}

bool SlotTypeMap::object_seen(int relation, int entity) const {
    auto it = objects_.find(relation);
    return it != objects_.end() && it->second.count(entity) > 0;
}

bool SlotTypeMap::has_relation(int relation) const {
    return subjects_.count(relation) > 0;
}

SlotTypeMap infer_slot_types(const std::vector<KnowledgeGraph>& train) {
    SlotTypeMap map;
    for (const auto& g : train) {
        for (const Triple& t : g.triples()) map.add(t);
    }
    return map;
}

namespace {

void add_violation(ValidityReport& r, const std::string& rule, const std::string& detail) {
    r.violations.push_back({rule, detail});
}

// head/tail must be entity ids and relation a relation id; a model is free
// to emit any vocabulary token into any slot, so this is checked everywhere.
bool check_slot_types(ValidityReport& r, const KnowledgeGraph& g, const Vocabulary& vocab) {
    bool ok = true;
    for (const Triple& t : g.triples()) {
        if (!vocab.is_entity(t.head) || !vocab.is_entity(t.tail) || !vocab.is_relation(t.relation)) {
            add_violation(r, "slot-type",
                          "triple (" + std::to_string(t.head) + "," + std::to_string(t.relation) +
                              "," + std::to_string(t.tail) + ") has ids of the wrong kind");
            ok = false;
        }
    }
    return ok;
}

void validate_syn_paths(ValidityReport& r, const KnowledgeGraph& g, const Vocabulary& vocab) {
    const SynPathsSchema schema;
    if (g.size() != static_cast<std::size_t>(schema.path_edges)) {
        add_violation(r, "triple-count",
                      "expected " + std::to_string(schema.path_edges) + " triples, got " +
                          std::to_string(g.size()));
        return;
    }
    if (!check_slot_types(r, g, vocab)) return;

    std::map<int, std::vector<int>> undirected;
    std::map<int, int> out_edge;  // head -> tail
    std::map<int, int> in_deg;
    std::map<int, int> out_deg;
    std::unordered_set<int> nodes;
    for (const Triple& t : g.triples()) {
        nodes.insert(t.head);
        nodes.insert(t.tail);
        undirected[t.head].push_back(t.tail);
        undirected[t.tail].push_back(t.head);
        ++out_deg[t.head];
        ++in_deg[t.tail];
        out_edge[t.head] = t.tail;
    }

    // connectivity first: the skeleton must be one component
    std::unordered_set<int> seen;
    std::vector<int> stack{*nodes.begin()};
    while (!stack.empty()) {
        const int n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        for (int m : undirected[n]) stack.push_back(m);
    }
    if (seen.size() != nodes.size()) {
        add_violation(r, "disconnected", "edges split into multiple components");
        return;
    }
    if (nodes.size() != static_cast<std::size_t>(schema.path_edges) + 1) {
        add_violation(r, "entity-count",
                      "expected 4 distinct entities, got " + std::to_string(nodes.size()));
        return;
    }
    // one simple directed chain: unique start, every hop unique
    int start = -1;
    for (int n : nodes) {
        if (out_deg[n] > 1 || in_deg[n] > 1) {
            add_violation(r, "disconnected", "a node repeats as head or tail; not a simple path");
            return;
        }
        if (out_deg[n] == 1 && in_deg[n] == 0) start = n;
    }
    if (start == -1) {
        add_violation(r, "disconnected", "no start node; edges do not form a path");
        return;
    }
    int cur = start;
    int hops = 0;
    while (out_edge.count(cur) > 0) {
        cur = out_edge[cur];
        ++hops;
    }
    if (hops != schema.path_edges) {
        add_violation(r, "disconnected", "edges do not chain into a single path");
    }
}

void validate_syn_types(ValidityReport& r, const KnowledgeGraph& g, const Vocabulary& vocab) {
    const SynTypesSchema schema;
    if (!check_slot_types(r, g, vocab)) return;
    for (const Triple& t : g.triples()) {
        const int rel = vocab.relation_index(t.relation);
        const int head_type = schema.type_of_entity(vocab.entity_index(t.head));
        const int tail_type = schema.type_of_entity(vocab.entity_index(t.tail));
        if (head_type != schema.domain_of(rel)) {
            add_violation(r, "type-domain",
                          vocab.label(t.head) + " is not in the domain of " + vocab.label(t.relation));
        }
        if (tail_type != schema.range_of(rel)) {
            add_violation(r, "type-range",
                          vocab.label(t.tail) + " is not in the range of " + vocab.label(t.relation));
        }
    }
}

void validate_syn_tipr(ValidityReport& r, const KnowledgeGraph& g, const Vocabulary& vocab) {
    const SynTiprSchema schema;
    if (g.size() != 5) {
        add_violation(r, "triple-count", "expected 5 triples, got " + std::to_string(g.size()));
        return;
    }
    if (!check_slot_types(r, g, vocab)) return;

    const Triple* by_rel[5] = {};
    for (const Triple& t : g.triples()) {
        const int rel = vocab.relation_index(t.relation);
        if (by_rel[rel] != nullptr) {
            add_violation(r, "template", vocab.label(t.relation) + " appears more than once");
            return;
        }
        by_rel[rel] = &t;
    }
    for (int rel = 0; rel < 5; ++rel) {
        if (by_rel[rel] == nullptr) {
            add_violation(r, "template", std::string(vocab.relation_labels()[rel]) + " is missing");
            return;
        }
    }
    const Triple& role_t = *by_rel[kHasRole];
    const Triple& name_t = *by_rel[kHasName];
    const Triple& time_t = *by_rel[kHasTime];
    const Triple& start_t = *by_rel[kStartYear];
    const Triple& end_t = *by_rel[kEndYear];

    const auto eidx = [&](int id) { return vocab.entity_index(id); };
    bool shape_ok = schema.is_person(eidx(role_t.head)) && schema.is_role(eidx(role_t.tail)) &&
                    schema.is_role(eidx(name_t.head)) && schema.is_name(eidx(name_t.tail)) &&
                    schema.is_role(eidx(time_t.head)) && schema.is_interval(eidx(time_t.tail)) &&
                    schema.is_interval(eidx(start_t.head)) && schema.is_year(eidx(start_t.tail)) &&
                    schema.is_interval(eidx(end_t.head)) && schema.is_year(eidx(end_t.tail));
    shape_ok = shape_ok && name_t.head == role_t.tail && time_t.head == role_t.tail &&
               start_t.head == time_t.tail && end_t.head == time_t.tail;
    if (!shape_ok) {
        add_violation(r, "template", "triples do not instantiate the person-role template");
        return;
    }
    if (eidx(start_t.tail) > eidx(end_t.tail)) {
        add_violation(r, "temporal",
                      vocab.label(start_t.tail) + " is after " + vocab.label(end_t.tail));
    }
}

void validate_wd_star(ValidityReport& r, const KnowledgeGraph& g, const Vocabulary& vocab,
                      const SlotTypeMap& aux) {
    if (!check_slot_types(r, g, vocab)) return;
    const int hub = g.triples().front().head;
    for (const Triple& t : g.triples()) {
        if (t.head != hub) {
            add_violation(r, "hub", "more than one subject entity; graph is not a star");
            return;
        }
    }
    for (const Triple& t : g.triples()) {
        if (!aux.object_seen(t.relation, t.tail)) {
            add_violation(r, "slot-object",
                          vocab.label(t.tail) + " never appears as an object of " +
                              vocab.label(t.relation) + " in training");
        }
    }
}

}  // namespace

ValidityReport validate(DatasetId id, const KnowledgeGraph& graph, const Vocabulary& vocab,
                        const SlotTypeMap* aux) {
    ValidityReport report;
    if (graph.empty()) {
        add_violation(report, "empty", "graph has no triples");
        report.valid = false;
        return report;
    }
    switch (id) {
        case DatasetId::kSynPaths: validate_syn_paths(report, graph, vocab); break;
        case DatasetId::kSynTypes: validate_syn_types(report, graph, vocab); break;
        case DatasetId::kSynTipr: validate_syn_tipr(report, graph, vocab); break;
        case DatasetId::kWdMovies:
        case DatasetId::kWdArticles:
            if (aux == nullptr) throw Error("wd-* validation requires a slot type map");
            validate_wd_star(report, graph, vocab, *aux);
            break;
    }
    report.valid = report.violations.empty();
    return report;
}

ValidityReport validate(const std::string& dataset_id, const KnowledgeGraph& graph,
                        const Vocabulary& vocab, const SlotTypeMap* aux) {
    return validate(dataset_from_string(dataset_id), graph, vocab, aux);
}

namespace {

KnowledgeGraph one_syn_paths(Rng& rng) {
    const SynPathsSchema schema;
    const int ent_off = Vocabulary::kNumSpecials;
    const int rel_off = ent_off + schema.entities;
    const std::vector<int> nodes = rng.sample_without_replacement(schema.entities, schema.path_edges + 1);
    KnowledgeGraph g;
    for (int e = 0; e < schema.path_edges; ++e) {
        const int rel = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(schema.relations)));
        g.insert({ent_off + nodes[static_cast<std::size_t>(e)], rel_off + rel,
                  ent_off + nodes[static_cast<std::size_t>(e) + 1]});
    }
    return g;
}

KnowledgeGraph one_syn_types(Rng& rng) {
    const SynTypesSchema schema;
    const int ent_off = Vocabulary::kNumSpecials;
    const int rel_off = ent_off + schema.types * schema.entities_per_type;
    KnowledgeGraph g;
    while (g.size() < static_cast<std::size_t>(schema.triples)) {
        const int rel = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(schema.types)));
        const int s = schema.domain_of(rel) * schema.entities_per_type +
                      static_cast<int>(rng.next_below(static_cast<std::uint64_t>(schema.entities_per_type)));
        const int o = schema.range_of(rel) * schema.entities_per_type +
                      static_cast<int>(rng.next_below(static_cast<std::uint64_t>(schema.entities_per_type)));
        g.insert({ent_off + s, rel_off + rel, ent_off + o});
    }
    return g;
}

KnowledgeGraph one_syn_tipr(Rng& rng) {
    const SynTiprSchema schema;
    const int ent_off = Vocabulary::kNumSpecials;
    const int rel_off = ent_off + schema.total();
    const auto pick = [&](int begin, int count) {
        return ent_off + begin + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(count)));
    };
    const int person = pick(schema.person_begin(), schema.persons);
    const int role = pick(schema.role_begin(), schema.roles);
    const int name = pick(schema.name_begin(), schema.names);
    const int interval = pick(schema.interval_begin(), schema.intervals);
    int y1 = pick(schema.year_begin(), schema.years);
    int y2 = pick(schema.year_begin(), schema.years);
    if (y1 > y2) std::swap(y1, y2);
    KnowledgeGraph g;
    g.insert({person, rel_off + kHasRole, role});
    g.insert({role, rel_off + kHasName, name});
    g.insert({role, rel_off + kHasTime, interval});
    g.insert({interval, rel_off + kStartYear, y1});
    g.insert({interval, rel_off + kEndYear, y2});
    return g;
}

KnowledgeGraph one_synthetic(DatasetId id, Rng& rng) {
    switch (id) {
        case DatasetId::kSynPaths: return one_syn_paths(rng);
        case DatasetId::kSynTypes: return one_syn_types(rng);
        case DatasetId::kSynTipr: return one_syn_tipr(rng);
        default: throw UnknownDataset(std::string(dataset_name(id)) + " has no generator");
    }
}

}  // namespace

std::vector<KnowledgeGraph> generate_synthetic(DatasetId id, int n, std::uint64_t seed) {
    std::vector<KnowledgeGraph> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::stream(seed, {static_cast<std::uint64_t>(i)});
        out.push_back(one_synthetic(id, rng));
    }
    return out;
}

std::vector<KnowledgeGraph> generate_syn_paths(int n, std::uint64_t seed) {
    return generate_synthetic(DatasetId::kSynPaths, n, seed);
}

std::vector<KnowledgeGraph> generate_syn_types(int n, std::uint64_t seed) {
    return generate_synthetic(DatasetId::kSynTypes, n, seed);
}

std::vector<KnowledgeGraph> generate_syn_tipr(int n, std::uint64_t seed) {
    return generate_synthetic(DatasetId::kSynTipr, n, seed);
}

DatasetBundle generate_splits(DatasetId id, const SplitSizes& sizes, std::uint64_t seed,
                              bool dedup_splits) {
    DatasetBundle bundle;
    bundle.id = id;
    bundle.vocab = synthetic_vocabulary(id);

    std::unordered_set<std::string> earlier_keys;
    std::uint64_t counter = 0;
    const auto fill = [&](std::vector<KnowledgeGraph>& split, int target) {
        std::unordered_set<std::string> own_keys;
        while (static_cast<int>(split.size()) < target) {
            Rng rng = Rng::stream(seed, {counter++});
            KnowledgeGraph g = one_synthetic(id, rng);
            if (dedup_splits && earlier_keys.count(g.canonical_key()) > 0) continue;
            if (dedup_splits) own_keys.insert(g.canonical_key());
            split.push_back(std::move(g));
        }
        earlier_keys.merge(own_keys);
    };
    fill(bundle.train, sizes.train);
    fill(bundle.valid, sizes.valid);
    fill(bundle.test, sizes.test);
    bundle.max_len = derive_max_len(bundle.train);
    return bundle;
}

namespace {

void write_labels(const fs::path& path, const std::vector<std::string>& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& l : labels) out << l << '\n';
}

void write_split(const fs::path& path, const std::vector<KnowledgeGraph>& graphs,
                 const Vocabulary& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    bool first = true;
    for (const auto& g : graphs) {
        if (!first) out << '\n';
        first = false;
        if (g.empty()) {
            // An empty block cannot be expressed with blank-line separators
            // alone; the marker keeps empty sample graphs round-trippable.
            out << "# empty\n";
            continue;
        }
        for (const Triple& t : g.triples()) {
            out << vocab.label(t.head) << '\t' << vocab.label(t.relation) << '\t'
                << vocab.label(t.tail) << '\n';
        }
    }
}

std::vector<std::string> read_labels(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line)) labels.push_back(line);
    return labels;
}

}  // namespace

void write_graph_file(const std::string& path, const std::vector<KnowledgeGraph>& graphs,
                      const Vocabulary& vocab) {
    write_split(path, graphs, vocab);
}

std::vector<KnowledgeGraph> read_graph_file(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    std::vector<KnowledgeGraph> graphs;
    KnowledgeGraph current;
    bool block_open = false;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            if (!block_open) throw ParseError(path, lineno, "empty graph block");
            graphs.push_back(std::move(current));
            current = KnowledgeGraph();
            block_open = false;
            continue;
        }
        if (line[0] == '#') {
            block_open = true;
            continue;
        }
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        const auto tab3 = tab2 == std::string::npos ? std::string::npos : line.find('\t', tab2 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos || tab3 != std::string::npos) {
            throw ParseError(path, lineno, "expected head<TAB>relation<TAB>tail");
        }
        const std::string head = line.substr(0, tab1);
        const std::string rel = line.substr(tab1 + 1, tab2 - tab1 - 1);
        const std::string tail = line.substr(tab2 + 1);
        current.insert({vocab.id(head), vocab.id(rel), vocab.id(tail)});
        block_open = true;
    }
    if (block_open) graphs.push_back(std::move(current));
    return graphs;
}

void save_dataset(const std::string& dir, const DatasetBundle& bundle) {
    fs::create_directories(dir);
    const fs::path root(dir);
    write_labels(root / "entities.txt", bundle.vocab.entity_labels());
    write_labels(root / "relations.txt", bundle.vocab.relation_labels());
    write_split(root / "train.tsv", bundle.train, bundle.vocab);
    write_split(root / "valid.tsv", bundle.valid, bundle.vocab);
    write_split(root / "test.tsv", bundle.test, bundle.vocab);
    if (is_synthetic(bundle.id)) {
        std::ofstream out(root / "schema.json", std::ios::binary);
        out << schema_json_text(bundle.id);
    }
}

DatasetBundle load_dataset(const std::string& dir, DatasetId id) {
    const fs::path root(dir);
    DatasetBundle bundle;
    bundle.id = id;
    bundle.vocab = Vocabulary(read_labels(root / "entities.txt"), read_labels(root / "relations.txt"));
    bundle.train = read_graph_file((root / "train.tsv").string(), bundle.vocab);
    bundle.valid = read_graph_file((root / "valid.tsv").string(), bundle.vocab);
    bundle.test = read_graph_file((root / "test.tsv").string(), bundle.vocab);
    bundle.max_len = derive_max_len(bundle.train);

    const DatasetSpec& spec = dataset_spec(id);
    const auto check = [&](const char* name, std::size_t got, int want) {
        if (static_cast<int>(got) != want) {
            log_info(std::string("warning: ") + dataset_name(id) + " " + name + " split has " +
                     std::to_string(got) + " graphs, benchmark lists " + std::to_string(want));
        }
    };
    check("train", bundle.train.size(), spec.train_size);
    check("valid", bundle.valid.size(), spec.valid_size);
    check("test", bundle.test.size(), spec.test_size);
    return bundle;
}

}  // namespace kgforge
