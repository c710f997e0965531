// End-to-end exercise of the tablediff binary (path in TD_CLI_BIN) on a
// miniature configuration: tiny dataset, short trainings, few sampling steps.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "data": { "count": 10, "heldout": 6, "image_size": 64, "rows": [2, 3], "cols": [2, 3] },
  "vae": { "steps": 25, "batch": 4, "lr": 0.001 },
  "dit": { "preset": "desk-64", "conditional": true, "depth": 2, "dim": 64 },
  "train": { "iterations": 6, "batch": 4 },
  "sample": { "steps": 6, "count": 2 },
  "eval": { "extractor": "pix16" }
})";

struct CliRunner {
    fs::path bin;
    fs::path dir;
    fs::path config;

    CliRunner() {
        const char* env = std::getenv("TD_CLI_BIN");
        REQUIRE_MESSAGE(env != nullptr, "TD_CLI_BIN must point at the tablediff binary");
        bin = env;
        dir = fs::temp_directory_path() / "td-test-cli";
        fs::remove_all(dir);
        fs::create_directories(dir);
        config = dir / "config.json";
        std::ofstream(config) << kTinyConfig;
    }

    // Returns {exit code, combined output}.
    std::pair<int, std::string> run(const std::string& args) const {
        fs::path out_file = dir / "cmd_output.txt";
        std::string cmd = bin.string() + " --config " + config.string() + " --run-dir " +
                          (dir / "run").string() + " " + args + " > " + out_file.string() +
                          " 2>&1";
        int rc = std::system(cmd.c_str());
        std::ifstream in(out_file);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return {WEXITSTATUS(rc), text};
    }
};

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

size_t count_files(const fs::path& dir, const std::string& ext) {
    size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ext) ++n;
    return n;
}

fs::path find_artifact(const fs::path& run_dir, const std::string& prefix) {
    for (const auto& e : fs::directory_iterator(run_dir))
        if (e.path().filename().string().rfind(prefix, 0) == 0) return e.path();
    return {};
}

}  // namespace

TEST_CASE("cli pipeline end to end on a miniature run") {
    CliRunner cli;

    SUBCASE("") {}  // single ordered flow below

    // seed is mandatory for the stochastic stages
    auto [rc_noseed, out_noseed] = cli.run("gen-data");
    CHECK(rc_noseed != 0);
    CHECK(out_noseed.find("TD-ERROR") != std::string::npos);

    // missing prerequisite gives a machine-parsable pointer to the producer
    auto [rc_missing, out_missing] = cli.run("train-dit --seed 1");
    CHECK(rc_missing != 0);
    CHECK(out_missing.find("TD-ERROR") != std::string::npos);
    CHECK(out_missing.find("cache-latents") != std::string::npos);

    auto [rc_data, out_data] = cli.run("gen-data --seed 7");
    REQUIRE_MESSAGE(rc_data == 0, out_data);
    fs::path data_dir = find_artifact(cli.dir / "run", "data-");
    REQUIRE(!data_dir.empty());
    CHECK(count_files(data_dir / "images", ".png") == 10);
    CHECK(count_files(data_dir / "masks", ".png") == 10);
    CHECK(count_files(data_dir / "annotations", ".xml") == 10);
    CHECK(count_files(data_dir / "heldout" / "images", ".png") == 6);
    CHECK(fs::exists(cli.dir / "run" / "resolved_config.json"));
    CHECK(fs::exists(cli.dir / "run" / "manifest.json"));

    // idempotent re-run with --force reproduces byte-identical outputs
    std::string png_before = read_bytes(data_dir / "images" / "000003.png");
    auto [rc_exists, out_exists] = cli.run("gen-data --seed 7");
    CHECK(rc_exists != 0);  // refuses without --force
    CHECK(out_exists.find("--force") != std::string::npos);
    auto [rc_force, out_force] = cli.run("gen-data --seed 7 --force");
    REQUIRE_MESSAGE(rc_force == 0, out_force);
    CHECK(read_bytes(data_dir / "images" / "000003.png") == png_before);

    auto [rc_masks, out_masks] = cli.run("render-masks");
    REQUIRE_MESSAGE(rc_masks == 0, out_masks);
    fs::path masks_dir = find_artifact(cli.dir / "run", "masks-");
    REQUIRE(!masks_dir.empty());
    CHECK(count_files(masks_dir, ".png") == 10);
    // rendered mask equals the one gen-data wrote for the same annotation
    CHECK(read_bytes(masks_dir / "000002.png") == read_bytes(data_dir / "masks" / "000002.png"));

    auto [rc_vae, out_vae] = cli.run("train-vae --seed 11");
    REQUIRE_MESSAGE(rc_vae == 0, out_vae);
    CHECK(!find_artifact(cli.dir / "run", "vae-").empty());

    auto [rc_cache, out_cache] = cli.run("cache-latents");
    REQUIRE_MESSAGE(rc_cache == 0, out_cache);
    auto [rc_ucache, out_ucache] = cli.run("cache-latents --unconditional");
    REQUIRE_MESSAGE(rc_ucache == 0, out_ucache);

    auto [rc_dit, out_dit] = cli.run("train-dit --seed 13");
    REQUIRE_MESSAGE(rc_dit == 0, out_dit);
    fs::path dit_dir = find_artifact(cli.dir / "run", "dit-");
    REQUIRE(!dit_dir.empty());
    CHECK(fs::exists(dit_dir / "metrics.csv"));
    CHECK(fs::exists(dit_dir / "ckpt_000006.tdw"));

    // multi-seed sampling from one mask, overlay composites included
    fs::path one_mask = data_dir / "masks" / "000000.png";
    auto [rc_s1, out_s1] =
        cli.run("sample --seed 17 --mask " + one_mask.string() + " --seeds 1,2,3 --overlay");
    REQUIRE_MESSAGE(rc_s1 == 0, out_s1);
    fs::path s1_dir = find_artifact(cli.dir / "run", "samples-");
    REQUIRE(!s1_dir.empty());
    CHECK(count_files(s1_dir, ".png") == 6);  // 3 samples + 3 overlays
    CHECK(fs::exists(s1_dir / "samples.jsonl"));

    // heldout-mask sampling (annotations travel with the samples manifest)
    auto [rc_s2, out_s2] = cli.run("sample --seed 19 --count 2 --out " +
                                   (cli.dir / "run" / "eval-samples").string());
    REQUIRE_MESSAGE(rc_s2 == 0, out_s2);
    CHECK(count_files(cli.dir / "run" / "eval-samples", ".png") == 2);

    auto [rc_eval, out_eval] = cli.run("evaluate");
    REQUIRE_MESSAGE(rc_eval == 0, out_eval);
    fs::path report;
    for (const auto& e : fs::directory_iterator(cli.dir / "run"))
        if (e.path().filename().string().rfind("eval-", 0) == 0 &&
            e.path().extension() == ".json")
            report = e.path();
    REQUIRE(!report.empty());
    std::string report_text = read_bytes(report);
    CHECK(report_text.find("frechet") != std::string::npos);
    CHECK(report_text.find("adherence") != std::string::npos);

    auto [rc_export, out_export] = cli.run("export --source data --count 5");
    REQUIRE_MESSAGE(rc_export == 0, out_export);
    CHECK(count_files(cli.dir / "run" / "export" / "images", ".png") == 5);
    CHECK(count_files(cli.dir / "run" / "export" / "annotations", ".xml") == 5);
}
