#include <filesystem>

#include "doctest.h"
#include "td/config.hpp"

using namespace td;
namespace fs = std::filesystem;

TEST_CASE("defaults resolve and the echo re-parses to the same document") {
    RunConfig cfg;
    cfg.validate();
    std::string echoed = RunConfig::from_json_text(cfg.to_json()).to_json();
    CHECK(echoed == cfg.to_json());
}

TEST_CASE("unknown keys are rejected at the root and inside sections") {
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"dta": {}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"data": {"countt": 5}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"train": {"learning_rate": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("not json"), ConfigError);
}

TEST_CASE("partial configs keep defaults elsewhere") {
    RunConfig cfg = RunConfig::from_json_text(R"({"train": {"iterations": 123}})");
    CHECK(cfg.train_iterations == 123);
    CHECK(cfg.train_batch == 32);
    CHECK(cfg.schedule_steps == 1000);
    CHECK(cfg.train_lr == doctest::Approx(1e-4));
}

TEST_CASE("presets set the resolution and the DiT architecture together") {
    RunConfig cfg;
    cfg.apply_preset("paper-256");
    CHECK(cfg.structure.image_width == 256);
    DiTConfig d = cfg.dit_config();
    CHECK(d.depth == 12);
    CHECK(d.dim == 768);
    CHECK(d.latent_h == 32);

    cfg.apply_preset("desk-64");
    d = cfg.dit_config();
    CHECK(d.depth == 4);
    CHECK(d.dim == 128);
    CHECK(d.latent_h == 8);

    CHECK_THROWS_AS(cfg.apply_preset("desk-128"), ConfigError);
}

TEST_CASE("explicit dit overrides take precedence over the preset") {
    RunConfig cfg = RunConfig::from_json_text(R"({"dit": {"preset": "desk-64", "depth": 2, "dim": 64, "heads": 2}})");
    DiTConfig d = cfg.dit_config();
    CHECK(d.depth == 2);
    CHECK(d.dim == 64);
    CHECK(d.heads == 2);
    CHECK(d.patch == 2);  // preset value kept
}

TEST_CASE("config validation catches contract violations") {
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"data": {"image_size": 60}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"sample": {"steps": 2000}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"eval": {"extractor": "vgg"}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"schedule": {"kind": "cosine"}})"), ConfigError);
}

TEST_CASE("shipped example configs parse and validate") {
    fs::path dir = fs::path(TD_SOURCE_DIR) / "configs";
    size_t count = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() != ".json") continue;
        RunConfig cfg = RunConfig::from_json_file(e.path());
        cfg.validate();
        ++count;
    }
    CHECK(count >= 5);
}

TEST_CASE("fnv1a hashing is stable") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a") != fnv1a("b"));
    CHECK(hash_hex(fnv1a("x")).size() == 8);
}
