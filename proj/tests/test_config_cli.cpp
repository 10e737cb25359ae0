#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kgforge/cli.hpp"
#include "kgforge/config.hpp"
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

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("minimal config gets full defaults") {
    const RunConfig cfg = validate_config("dataset: syn-paths\nmodel: ark\n");
    RunConfig expect;
    expect.dataset = "syn-paths";
    expect.model = "ark";
    CHECK(cfg == expect);
    CHECK(cfg.d_model == 64);
    CHECK(cfg.n_layers == 1);
    CHECK(cfg.beta == 1.0);
    CHECK(cfg.top_k == 0);
}

TEST_CASE("zero temperature is rejected with the exact message") {
    CHECK_THROWS_WITH_AS(
        (void)validate_config("dataset: syn-paths\nmodel: ark\ntemperature: 0\n"),
        doctest::Contains("temperature must be > 0"), ConfigError);
}

TEST_CASE("top_p outside (0, 1] is a range error") {
    CHECK_THROWS_WITH_AS((void)validate_config("dataset: syn-paths\nmodel: ark\ntop_p: 1.2\n"),
                         doctest::Contains("top_p"), ConfigError);
}

TEST_CASE("unknown keys are rejected and all violations are reported at once") {
    try {
        (void)validate_config("dataset: nope\nmodel: what\nbogus_key: 1\ntop_p: 7\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("unknown key 'bogus_key'") != std::string::npos);
        CHECK(msg.find("dataset") != std::string::npos);
        CHECK(msg.find("model") != std::string::npos);
        CHECK(msg.find("top_p") != std::string::npos);
    }
}

TEST_CASE("lr_schedule accepts constant and cosine only") {
    CHECK(validate_config("dataset: syn-paths\nmodel: ark\nlr_schedule: cosine\n").lr_schedule ==
          "cosine");
    CHECK_THROWS_WITH_AS(
        (void)validate_config("dataset: syn-paths\nmodel: ark\nlr_schedule: linear\n"),
        doctest::Contains("lr_schedule"), ConfigError);
}

TEST_CASE("config round trip: parse -> serialize -> parse is the identity") {
    RunConfig cfg = validate_config(
        "dataset: syn-tipr\nmodel: sail\nd_model: 48\nd_z: 12\nbeta: 0.75\nlr: 0.0005\n"
        "lr_schedule: cosine\n"
        "batch_size: 17\nepochs: 9\nseed: 123456789\ntemperature: 0.9\ntop_k: 40\ntop_p: 0.95\n"
        "beam_width: 5\nmax_len: 17\nout_dir: /tmp/x\n");
    const RunConfig again = validate_config(serialize_config(cfg));
    CHECK(again == cfg);
    CHECK(serialize_config(again) == serialize_config(cfg));

    // 'all' form of top_k round-trips through the same spelling
    cfg.top_k = 0;
    CHECK(serialize_config(cfg).find("top_k: all\n") != std::string::npos);
    CHECK(validate_config(serialize_config(cfg)).top_k == 0);
}

TEST_CASE("comments and blank lines are ignored") {
    const RunConfig cfg =
        validate_config("# a comment\n\ndataset: syn-paths\n  \nmodel: ark\n# trailing\n");
    CHECK(cfg.dataset == "syn-paths");
}

TEST_CASE("cli: missing required flags and unknown subcommands exit 1") {
    CHECK(cli::run({"train"}) == 1);
    CHECK(cli::run({"no-such-command"}) == 1);
    CHECK(cli::run({}) == 1);
    CHECK(cli::run({"--help"}) == 0);
    CHECK(cli::run({"generate-data", "--dataset", "wd-movies", "--out", "/tmp/x"}) == 1);
    CHECK(cli::run({"train", "--config", "/nonexistent/cfg.yaml"}) == 1);
}

TEST_CASE("cli: full pipeline and byte-identical reruns under one seed") {
    const fs::path root = temp_dir("cli_pipeline");
    const std::string data_dir = (root / "data").string();
    REQUIRE(cli::run({"generate-data", "--dataset", "syn-paths", "--out", data_dir, "--seed", "5",
                      "--sizes", "200,50,50"}) == 0);
    CHECK(fs::exists(fs::path(data_dir) / "schema.json"));

    spit(root / "cfg.yaml",
         "dataset: syn-paths\ndataset_dir: " + data_dir +
             "\nmodel: ark\nd_model: 16\nepochs: 2\nbatch_size: 32\nseed: 7\nout_dir: " +
             (root / "run1").string() + "\n");
    REQUIRE(cli::run({"train", "--config", (root / "cfg.yaml").string()}) == 0);
    REQUIRE(cli::run({"train", "--config", (root / "cfg.yaml").string(), "--out",
                      (root / "run2").string()}) == 0);

    CHECK(slurp(root / "run1" / "metrics.log") == slurp(root / "run2" / "metrics.log"));
    CHECK(slurp(root / "run1" / "weights.bin") == slurp(root / "run2" / "weights.bin"));

    REQUIRE(cli::run({"sample", "--checkpoint", (root / "run1").string(), "--n", "40", "--seed",
                      "3", "--out", (root / "s1.tsv").string()}) == 0);
    REQUIRE(cli::run({"sample", "--checkpoint", (root / "run2").string(), "--n", "40", "--seed",
                      "3", "--out", (root / "s2.tsv").string()}) == 0);
    CHECK(slurp(root / "s1.tsv") == slurp(root / "s2.tsv"));

    REQUIRE(cli::run({"evaluate", "--checkpoint", (root / "run1").string(), "--dataset", data_dir,
                      "--samples", (root / "s1.tsv").string(), "--report",
                      (root / "r1.json").string()}) == 0);
    REQUIRE(cli::run({"evaluate", "--checkpoint", (root / "run2").string(), "--dataset", data_dir,
                      "--samples", (root / "s2.tsv").string(), "--report",
                      (root / "r2.json").string()}) == 0);
    const std::string report = slurp(root / "r1.json");
    CHECK(report == slurp(root / "r2.json"));
    CHECK(report.find("\"pct_valid\"") != std::string::npos);
    CHECK(report.find("\"mean_bits\"") != std::string::npos);
    CHECK(report.find("kl_bits") == std::string::npos);  // ark report has no KL key
}

TEST_CASE("cli: sail pipeline exposes kl_bits and the latent tools run") {
    const fs::path root = temp_dir("cli_sail");
    const std::string data_dir = (root / "data").string();
    REQUIRE(cli::run({"generate-data", "--dataset", "syn-paths", "--out", data_dir, "--seed", "9",
                      "--sizes", "120,30,30"}) == 0);
    spit(root / "cfg.yaml",
         "dataset: syn-paths\ndataset_dir: " + data_dir +
             "\nmodel: sail\nd_model: 12\nd_z: 4\nepochs: 1\nbatch_size: 32\nseed: 2\nout_dir: " +
             (root / "run").string() + "\n");
    REQUIRE(cli::run({"train", "--config", (root / "cfg.yaml").string()}) == 0);

    REQUIRE(cli::run({"sample", "--checkpoint", (root / "run").string(), "--n", "5", "--mode",
                      "beam", "--seed", "1", "--out", (root / "s.tsv").string()}) == 0);
    REQUIRE(cli::run({"evaluate", "--checkpoint", (root / "run").string(), "--dataset", data_dir,
                      "--samples", (root / "s.tsv").string(), "--report",
                      (root / "r.json").string()}) == 0);
    CHECK(slurp(root / "r.json").find("\"kl_bits\"") != std::string::npos);

    REQUIRE(cli::run({"interpolate", "--checkpoint", (root / "run").string(), "--from-graph", "0",
                      "--to-graph", "1", "--points", "3", "--out",
                      (root / "trace.tsv").string()}) == 0);
    CHECK(slurp(root / "trace.tsv").find("# alpha") != std::string::npos);

    REQUIRE(cli::run({"smoothness", "--checkpoint", (root / "run").string(), "--epsilon", "0.1",
                      "--steps", "5", "--anchors", "4", "--seed", "11", "--report",
                      (root / "sm.json").string()}) == 0);
    CHECK(slurp(root / "sm.json").find("flip_rate") != std::string::npos);

    REQUIRE(cli::run({"export-latents", "--checkpoint", (root / "run").string(), "--split", "test",
                      "--out", (root / "latents.csv").string()}) == 0);
    CHECK(slurp(root / "latents.csv").find("mu0") != std::string::npos);
}

TEST_CASE("cli: sweep writes one row per value") {
    const fs::path root = temp_dir("cli_sweep");
    const std::string data_dir = (root / "data").string();
    REQUIRE(cli::run({"generate-data", "--dataset", "syn-paths", "--out", data_dir, "--seed", "3",
                      "--sizes", "100,20,20"}) == 0);
    spit(root / "cfg.yaml",
         "dataset: syn-paths\ndataset_dir: " + data_dir +
             "\nmodel: ark\nd_model: 8\nepochs: 1\nbatch_size: 32\nseed: 4\nout_dir: " +
             (root / "runs").string() + "\n");
    REQUIRE(cli::run({"sweep", "--axis", "d_model", "--values", "4,8", "--config",
                      (root / "cfg.yaml").string(), "--sample-n", "20", "--out",
                      (root / "sweep.csv").string()}) == 0);
    const std::string csv = slurp(root / "sweep.csv");
    CHECK(csv.find("d_model,pct_valid_and_novel\n") == 0);
    CHECK(csv.find("\n4,") != std::string::npos);
    CHECK(csv.find("\n8,") != std::string::npos);
}
