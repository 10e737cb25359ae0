#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "kgforge/datasets.hpp"
#include "kgforge/errors.hpp"

using namespace kgforge;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
    const fs::path p = fs::temp_directory_path() / "kgforge_test" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("every generated graph is valid under its own validator") {
    for (DatasetId id : {DatasetId::kSynPaths, DatasetId::kSynTypes, DatasetId::kSynTipr}) {
        const Vocabulary vocab = synthetic_vocabulary(id);
        const auto graphs = generate_synthetic(id, 2000, 42);
        int valid = 0;
        for (const auto& g : graphs) valid += validate(id, g, vocab).valid;
        CHECK(valid == 2000);
    }
}

TEST_CASE("syn-paths graphs are 3 triples over 4 distinct sampled entities") {
    const auto graphs = generate_syn_paths(200, 7);
    CHECK(graphs.size() == 200);
    for (const auto& g : graphs) CHECK(g.size() == 3);
    CHECK(generate_syn_paths(0, 7).empty());
}

TEST_CASE("syn-types signature violations carry type-domain / type-range rules") {
    const Vocabulary v = synthetic_vocabulary(DatasetId::kSynTypes);
    const SynTypesSchema schema;
    // r0 maps type 0 -> type 1; subject from type 2 violates the domain
    KnowledgeGraph g;
    g.insert({v.entity_id(2 * schema.entities_per_type), v.relation_id(0), v.entity_id(10)});
    const auto report = validate(DatasetId::kSynTypes, g, v);
    CHECK_FALSE(report.valid);
    CHECK(report.has_rule("type-domain"));

    KnowledgeGraph g2;
    g2.insert({v.entity_id(0), v.relation_id(0), v.entity_id(25)});
    CHECK(validate(DatasetId::kSynTypes, g2, v).has_rule("type-range"));

    CHECK(generate_syn_types(1, 3).size() == 1);
    CHECK(generate_syn_types(1, 3)[0].size() == 3);
}

namespace {

KnowledgeGraph tipr_graph(const Vocabulary& v, int person, int role, int name, int interval,
                          int y1, int y2) {
    const SynTiprSchema s;
    KnowledgeGraph g;
    g.insert({v.entity_id(person), v.relation_id(kHasRole), v.entity_id(s.role_begin() + role)});
    g.insert({v.entity_id(s.role_begin() + role), v.relation_id(kHasName), v.entity_id(s.name_begin() + name)});
    g.insert({v.entity_id(s.role_begin() + role), v.relation_id(kHasTime), v.entity_id(s.interval_begin() + interval)});
    g.insert({v.entity_id(s.interval_begin() + interval), v.relation_id(kStartYear), v.entity_id(s.year_begin() + y1)});
    g.insert({v.entity_id(s.interval_begin() + interval), v.relation_id(kEndYear), v.entity_id(s.year_begin() + y2)});
    return g;
}

}  // namespace

TEST_CASE("syn-tipr template accepts y1 == y2 and rejects y1 > y2 as temporal") {
    const Vocabulary v = synthetic_vocabulary(DatasetId::kSynTipr);
    CHECK(validate(DatasetId::kSynTipr, tipr_graph(v, 0, 1, 2, 3, 5, 5), v).valid);
    const auto report = validate(DatasetId::kSynTipr, tipr_graph(v, 0, 1, 2, 3, 9, 4), v);
    CHECK_FALSE(report.valid);
    CHECK(report.has_rule("temporal"));

    // broken template: has_name hangs off the wrong role node
    KnowledgeGraph g = tipr_graph(v, 0, 1, 2, 3, 4, 6);
    KnowledgeGraph bad;
    const SynTiprSchema s;
    for (const Triple& t : g.triples()) {
        if (t.relation == v.relation_id(kHasName)) {
            bad.insert({v.entity_id(s.role_begin() + 7), t.relation, t.tail});
        } else {
            bad.insert(t);
        }
    }
    CHECK(validate(DatasetId::kSynTipr, bad, v).has_rule("template"));
}

TEST_CASE("syn-paths validator rejects disconnected edge sets") {
    const Vocabulary v = synthetic_vocabulary(DatasetId::kSynPaths);
    KnowledgeGraph g;
    g.insert({v.entity_id(0), v.relation_id(0), v.entity_id(1)});
    g.insert({v.entity_id(2), v.relation_id(0), v.entity_id(3)});
    g.insert({v.entity_id(4), v.relation_id(0), v.entity_id(5)});
    const auto report = validate(DatasetId::kSynPaths, g, v);
    CHECK_FALSE(report.valid);
    CHECK(report.has_rule("disconnected"));

    // a directed 3-cycle is connected but has 3 entities, not 4
    KnowledgeGraph cycle;
    cycle.insert({v.entity_id(0), v.relation_id(0), v.entity_id(1)});
    cycle.insert({v.entity_id(1), v.relation_id(0), v.entity_id(2)});
    cycle.insert({v.entity_id(2), v.relation_id(0), v.entity_id(0)});
    CHECK(validate(DatasetId::kSynPaths, cycle, v).has_rule("entity-count"));

    // branching star: connected, 4 entities, but not a chain
    KnowledgeGraph star;
    star.insert({v.entity_id(0), v.relation_id(0), v.entity_id(1)});
    star.insert({v.entity_id(0), v.relation_id(1), v.entity_id(2)});
    star.insert({v.entity_id(0), v.relation_id(2), v.entity_id(3)});
    CHECK(validate(DatasetId::kSynPaths, star, v).has_rule("disconnected"));

    // right entity count, still not one path
    KnowledgeGraph g2;
    g2.insert({v.entity_id(0), v.relation_id(0), v.entity_id(1)});
    g2.insert({v.entity_id(1), v.relation_id(0), v.entity_id(0)});
    g2.insert({v.entity_id(2), v.relation_id(0), v.entity_id(3)});
    const auto r2 = validate(DatasetId::kSynPaths, g2, v);
    CHECK_FALSE(r2.valid);
    CHECK(r2.has_rule("disconnected"));

    KnowledgeGraph path;
    path.insert({v.entity_id(4), v.relation_id(1), v.entity_id(9)});
    path.insert({v.entity_id(9), v.relation_id(0), v.entity_id(2)});
    path.insert({v.entity_id(2), v.relation_id(2), v.entity_id(30)});
    CHECK(validate(DatasetId::kSynPaths, path, v).valid);
}

TEST_CASE("empty graphs are invalid with rule `empty` for every dataset") {
    const SlotTypeMap empty_map;
    for (const char* id : {"syn-paths", "syn-types", "syn-tipr", "wd-movies", "wd-articles"}) {
        const DatasetId did = dataset_from_string(id);
        const Vocabulary v = is_synthetic(did) ? synthetic_vocabulary(did)
                                               : build_vocabulary({"m"}, {"has_genre"});
        const auto report = validate(id, KnowledgeGraph{}, v, &empty_map);
        CHECK_FALSE(report.valid);
        CHECK(report.has_rule("empty"));
    }
    CHECK_THROWS_AS((void)dataset_from_string("no-such"), UnknownDataset);
}

TEST_CASE("wd-movies star rules: hub, slot membership, training-closed objects") {
    const Vocabulary v =
        build_vocabulary({"m1", "m2", "director1", "actor1", "Western", "Unseen"},
                         {"has_director", "has_actor", "has_genre"});
    std::vector<KnowledgeGraph> train(1);
    train[0].insert({v.id("m1"), v.id("has_director"), v.id("director1")});
    train[0].insert({v.id("m1"), v.id("has_actor"), v.id("actor1")});
    train[0].insert({v.id("m1"), v.id("has_genre"), v.id("Western")});
    const SlotTypeMap slots = infer_slot_types(train);

    CHECK(slots.object_seen(v.id("has_genre"), v.id("Western")));
    CHECK_FALSE(slots.object_seen(v.id("has_genre"), v.id("Unseen")));

    KnowledgeGraph good;
    good.insert({v.id("m2"), v.id("has_director"), v.id("director1")});
    good.insert({v.id("m2"), v.id("has_genre"), v.id("Western")});
    CHECK(validate(DatasetId::kWdMovies, good, v, &slots).valid);

    KnowledgeGraph unseen_genre;
    unseen_genre.insert({v.id("m2"), v.id("has_genre"), v.id("Unseen")});
    CHECK(validate(DatasetId::kWdMovies, unseen_genre, v, &slots).has_rule("slot-object"));

    KnowledgeGraph two_hubs = good;
    two_hubs.insert({v.id("m1"), v.id("has_actor"), v.id("actor1")});
    CHECK(validate(DatasetId::kWdMovies, two_hubs, v, &slots).has_rule("hub"));

    KnowledgeGraph bad_slot;
    bad_slot.insert({v.id("m2"), v.id("director1"), v.id("Western")});
    CHECK(validate(DatasetId::kWdMovies, bad_slot, v, &slots).has_rule("slot-type"));

    CHECK_THROWS_AS((void)validate(DatasetId::kWdMovies, good, v, nullptr), Error);
}

TEST_CASE("generation is deterministic and serialization is byte-identical") {
    const SplitSizes sizes{50, 20, 20};
    const DatasetBundle b1 = generate_splits(DatasetId::kSynTipr, sizes, 11, false);
    const DatasetBundle b2 = generate_splits(DatasetId::kSynTipr, sizes, 11, false);
    REQUIRE(b1.train.size() == b2.train.size());
    for (std::size_t i = 0; i < b1.train.size(); ++i) {
        CHECK(b1.train[i].canonical_key() == b2.train[i].canonical_key());
    }

    const auto d1 = temp_dir("ser1");
    const auto d2 = temp_dir("ser2");
    save_dataset(d1.string(), b1);
    save_dataset(d2.string(), b2);
    for (const char* f : {"entities.txt", "relations.txt", "train.tsv", "valid.tsv", "test.tsv",
                          "schema.json"}) {
        CHECK(slurp(d1 / f) == slurp(d2 / f));
    }
}

TEST_CASE("dataset save/load round-trips canonical keys") {
    const DatasetBundle bundle = generate_splits(DatasetId::kSynPaths, {40, 10, 10}, 23, false);
    const auto dir = temp_dir("roundtrip");
    save_dataset(dir.string(), bundle);
    const DatasetBundle loaded = load_dataset(dir.string(), DatasetId::kSynPaths);
    REQUIRE(loaded.train.size() == bundle.train.size());
    for (std::size_t i = 0; i < bundle.train.size(); ++i) {
        CHECK(loaded.train[i].canonical_key() == bundle.train[i].canonical_key());
    }
    CHECK(loaded.max_len == 11);
    CHECK(loaded.vocab.size() == 55);
}

TEST_CASE("two-field lines and unknown labels fail with position info") {
    const auto dir = temp_dir("badfiles");
    {
        std::ofstream(dir / "entities.txt") << "A\nB\n";
        std::ofstream(dir / "relations.txt") << "r\n";
        std::ofstream(dir / "train.tsv") << "A\tr\tB\nA\tr\n";
        std::ofstream(dir / "valid.tsv") << "A\tr\tB\n";
        std::ofstream(dir / "test.tsv") << "A\tr\tB\n";
    }
    CHECK_THROWS_WITH_AS((void)load_dataset(dir.string(), DatasetId::kSynPaths),
                         doctest::Contains("train.tsv:2"), ParseError);

    std::ofstream(dir / "train.tsv") << "A\tr\tZZZ\n";
    CHECK_THROWS_AS((void)load_dataset(dir.string(), DatasetId::kSynPaths), VocabularyMiss);
}

TEST_CASE("empty sample graphs round-trip through the marker line") {
    const Vocabulary v = build_vocabulary({"A", "B"}, {"r"});
    std::vector<KnowledgeGraph> graphs(3);
    graphs[0].insert({3, 5, 4});
    // graphs[1] stays empty
    graphs[2].insert({4, 5, 3});
    const auto dir = temp_dir("markers");
    write_graph_file((dir / "samples.tsv").string(), graphs, v);
    const auto loaded = read_graph_file((dir / "samples.tsv").string(), v);
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0] == graphs[0]);
    CHECK(loaded[1].empty());
    CHECK(loaded[2] == graphs[2]);
}

TEST_CASE("dedup-splits keeps canonical keys disjoint across splits") {
    const DatasetBundle bundle = generate_splits(DatasetId::kSynPaths, {300, 100, 100}, 5, true);
    std::unordered_set<std::string> train_keys, valid_keys;
    for (const auto& g : bundle.train) train_keys.insert(g.canonical_key());
    for (const auto& g : bundle.valid) {
        CHECK(train_keys.count(g.canonical_key()) == 0);
        valid_keys.insert(g.canonical_key());
    }
    for (const auto& g : bundle.test) {
        CHECK(train_keys.count(g.canonical_key()) == 0);
        CHECK(valid_keys.count(g.canonical_key()) == 0);
    }
}

TEST_CASE("validator runtime grows linearly with triple count") {
    // star graphs at 3 vs 300 triples; a quadratic validator would blow the
    // generous ratio bound
    std::vector<std::string> entities{"hub"};
    for (int i = 0; i < 300; ++i) entities.push_back("e" + std::to_string(i));
    const Vocabulary v = build_vocabulary(entities, {"has_genre"});
    const auto star = [&](int n) {
        KnowledgeGraph g;
        for (int i = 0; i < n; ++i) g.insert({v.id("hub"), v.id("has_genre"), v.entity_id(1 + i)});
        return g;
    };
    std::vector<KnowledgeGraph> train{star(300)};
    const SlotTypeMap slots = infer_slot_types(train);
    const KnowledgeGraph small = star(3), big = star(300);

    const auto time_of = [&](const KnowledgeGraph& g) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int i = 0; i < 3000; ++i) {
            (void)validate(DatasetId::kWdMovies, g, v, &slots);
        }
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    (void)time_of(small);  // warm up
    const double t_small = time_of(small);
    const double t_big = time_of(big);
    CHECK(t_big / t_small < 2000);  // 100x work; quadratic would be ~10000x
}

TEST_CASE("slot type map is built from train only") {
    const Vocabulary v = build_vocabulary({"m", "g1", "g2"}, {"has_genre"});
    std::vector<KnowledgeGraph> train(1);
    train[0].insert({v.id("m"), v.id("has_genre"), v.id("g1")});
    const SlotTypeMap slots = infer_slot_types(train);
    // validating a graph with g2 cannot extend the map
    KnowledgeGraph probe;
    probe.insert({v.id("m"), v.id("has_genre"), v.id("g2")});
    CHECK_FALSE(validate(DatasetId::kWdMovies, probe, v, &slots).valid);
    CHECK_FALSE(slots.object_seen(v.id("has_genre"), v.id("g2")));
    CHECK(slots.subject_seen(v.id("has_genre"), v.id("m")));
}
