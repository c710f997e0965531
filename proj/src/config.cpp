#include "td/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

namespace td {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section,
                const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in config section '" + section + "'");
}

std::pair<int, int> int_pair(const json& j, const std::string& what) {
    if (!j.is_array() || j.size() != 2)
        throw ConfigError("config '" + what + "' must be a [min, max] pair");
    return {j[0].get<int>(), j[1].get<int>()};
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "(root)", {"data", "vae", "schedule", "dit", "train", "sample", "eval"});

    RunConfig c;
    if (j.contains("data")) {
        const json& d = j["data"];
        check_keys(d, "data",
                   {"count", "heldout", "image_size", "rows", "cols", "margin", "min_gap",
                    "thickness"});
        c.data_count = d.value("count", c.data_count);
        c.data_heldout = d.value("heldout", c.data_heldout);
        if (d.contains("image_size")) {
            c.structure.image_width = d["image_size"].get<int>();
            c.structure.image_height = c.structure.image_width;
        }
        if (d.contains("rows")) std::tie(c.structure.rows_min, c.structure.rows_max) = int_pair(d["rows"], "data.rows");
        if (d.contains("cols")) std::tie(c.structure.cols_min, c.structure.cols_max) = int_pair(d["cols"], "data.cols");
        c.structure.margin = d.value("margin", c.structure.margin);
        c.structure.min_gap = d.value("min_gap", c.structure.min_gap);
        if (d.contains("thickness"))
            std::tie(c.structure.thickness_min, c.structure.thickness_max) =
                int_pair(d["thickness"], "data.thickness");
    }
    if (j.contains("vae")) {
        const json& v = j["vae"];
        check_keys(v, "vae", {"base_channels", "kl_weight", "steps", "batch", "lr", "include_masks"});
        c.vae.base_channels = v.value("base_channels", c.vae.base_channels);
        c.vae_kl_weight = v.value("kl_weight", c.vae_kl_weight);
        c.vae_train.steps = v.value("steps", c.vae_train.steps);
        c.vae_train.batch = v.value("batch", c.vae_train.batch);
        c.vae_train.lr = v.value("lr", c.vae_train.lr);
        c.vae_include_masks = v.value("include_masks", c.vae_include_masks);
    }
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        check_keys(s, "schedule", {"steps", "beta_start", "beta_end", "kind"});
        c.schedule_steps = s.value("steps", c.schedule_steps);
        c.beta_start = s.value("beta_start", c.beta_start);
        c.beta_end = s.value("beta_end", c.beta_end);
        c.schedule_kind = s.value("kind", c.schedule_kind);
    }
    if (j.contains("dit")) {
        const json& d = j["dit"];
        check_keys(d, "dit", {"preset", "conditional", "depth", "dim", "heads", "patch"});
        if (d.contains("preset")) c.apply_preset(d["preset"].get<std::string>());
        c.conditional = d.value("conditional", c.conditional);
        c.dit_depth = d.value("depth", c.dit_depth);
        c.dit_dim = d.value("dim", c.dit_dim);
        c.dit_heads = d.value("heads", c.dit_heads);
        c.dit_patch = d.value("patch", c.dit_patch);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        check_keys(t, "train", {"iterations", "batch", "lr", "checkpoint_every", "samples"});
        c.train_iterations = t.value("iterations", c.train_iterations);
        c.train_batch = t.value("batch", c.train_batch);
        c.train_lr = t.value("lr", c.train_lr);
        c.checkpoint_every = t.value("checkpoint_every", c.checkpoint_every);
        c.data_samples = t.value("samples", c.data_samples);
    }
    if (j.contains("sample")) {
        const json& s = j["sample"];
        check_keys(s, "sample", {"steps", "count"});
        c.sample_steps = s.value("steps", c.sample_steps);
        c.sample_count = s.value("count", c.sample_count);
    }
    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, "eval", {"extractor", "tau_dark", "min_run"});
        c.eval_extractor = e.value("extractor", c.eval_extractor);
        c.eval_tau_dark = e.value("tau_dark", c.eval_tau_dark);
        c.eval_min_run = e.value("min_run", c.eval_min_run);
    }
    c.validate();
    return c;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

std::string RunConfig::to_json() const {
    json j;
    j["data"] = {{"count", data_count},
                 {"heldout", data_heldout},
                 {"image_size", structure.image_width},
                 {"rows", {structure.rows_min, structure.rows_max}},
                 {"cols", {structure.cols_min, structure.cols_max}},
                 {"margin", structure.margin},
                 {"min_gap", structure.min_gap},
                 {"thickness", {structure.thickness_min, structure.thickness_max}}};
    j["vae"] = {{"base_channels", vae.base_channels}, {"kl_weight", vae_kl_weight},
                {"steps", vae_train.steps},           {"batch", vae_train.batch},
                {"lr", vae_train.lr},                 {"include_masks", vae_include_masks}};
    j["schedule"] = {{"steps", schedule_steps},
                     {"beta_start", beta_start},
                     {"beta_end", beta_end},
                     {"kind", schedule_kind}};
    j["dit"] = {{"preset", preset},   {"conditional", conditional}, {"depth", dit_depth},
                {"dim", dit_dim},     {"heads", dit_heads},         {"patch", dit_patch}};
    j["train"] = {{"iterations", train_iterations},
                  {"batch", train_batch},
                  {"lr", train_lr},
                  {"checkpoint_every", checkpoint_every},
                  {"samples", data_samples}};
    j["sample"] = {{"steps", sample_steps}, {"count", sample_count}};
    j["eval"] = {{"extractor", eval_extractor}, {"tau_dark", eval_tau_dark}, {"min_run", eval_min_run}};
    return j.dump(2) + "\n";
}

void RunConfig::apply_preset(const std::string& name) {
    if (name == "desk-64") {
        structure.image_width = structure.image_height = 64;
    } else if (name == "paper-256") {
        structure.image_width = structure.image_height = 256;
    } else if (name == "paper-512") {
        structure.image_width = structure.image_height = 512;
    } else {
        throw ConfigError("unknown preset '" + name + "' (expected desk-64, paper-256 or paper-512)");
    }
    preset = name;
}

DiTConfig RunConfig::dit_config() const {
    DiTConfig d = dit_preset(preset, conditional);
    if (dit_depth > 0) d.depth = dit_depth;
    if (dit_dim > 0) d.dim = dit_dim;
    if (dit_heads > 0) d.heads = dit_heads;
    if (dit_patch > 0) d.patch = dit_patch;
    d.latent_h = structure.image_height / 8;
    d.latent_w = structure.image_width / 8;
    d.max_t = schedule_steps;
    d.validate();
    return d;
}

TrainConfig RunConfig::train_config(uint64_t seed) const {
    TrainConfig t;
    t.preset = preset;
    t.conditional = conditional;
    t.iterations = train_iterations;
    t.batch = train_batch;
    t.lr = train_lr;
    t.schedule_steps = schedule_steps;
    t.beta_start = beta_start;
    t.beta_end = beta_end;
    t.seed = seed;
    t.checkpoint_every = checkpoint_every;
    t.dit = dit_config();
    return t;
}

void RunConfig::validate() const {
    if (data_count < 1) throw ConfigError("data.count must be positive");
    if (data_heldout < 0) throw ConfigError("data.heldout must be non-negative");
    if (structure.image_width % 8 != 0)
        throw ConfigError("data.image_size must be divisible by 8 (latent contract)");
    if (schedule_kind != "linear") throw ConfigError("schedule.kind must be 'linear'");
    if (sample_steps < 1 || sample_steps > schedule_steps)
        throw ConfigError("sample.steps must lie in [1, schedule.steps]");
    if (eval_extractor != "conv64" && eval_extractor != "pix16")
        throw ConfigError("eval.extractor must be conv64 or pix16");
    dit_config();  // validates the derived DiT shape
}

uint64_t fnv1a(std::string_view text) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(8, '0');
    for (int i = 0; i < 8; ++i) out[i] = digits[(h >> (60 - 8 * i)) & 0xf];
    return out;
}

}  // namespace td
