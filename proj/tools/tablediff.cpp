// tablediff: train and run the structure-mask-conditioned table image
// generator. Subcommands cover the full workflow: gen-data, render-masks,
// train-vae, cache-latents, train-dit, sample, evaluate, export.
//
// Every subcommand works inside a run directory. Artifacts carry a config
// hash in their name and are recorded in manifest.json, so a stale artifact
// from an older config can never be silently reused. Failures print a single
// machine-parsable line: "TD-ERROR <code>: <message>".

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "td/config.hpp"
#include "td/rng.hpp"
#include "td/diffusion.hpp"
#include "td/evaluation.hpp"
#include "td/parallel.hpp"
#include "td/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace td;

namespace {

// ---------------------------------------------------------------------------
// Run-directory manifest
// ---------------------------------------------------------------------------

struct Manifest {
    fs::path path;
    json stages = json::object();

    static Manifest load(const fs::path& run_dir) {
        Manifest m;
        m.path = run_dir / "manifest.json";
        if (fs::exists(m.path)) {
            std::ifstream in(m.path);
            json j = json::parse(in, nullptr, /*allow_exceptions=*/true);
            m.stages = j.value("stages", json::object());
        }
        return m;
    }

    void record(const std::string& stage, const std::string& hash, const std::string& rel_path,
                uint64_t seed) {
        stages[stage] = {{"hash", hash}, {"path", rel_path}, {"seed", seed}};
        json j{{"stages", stages}};
        std::string text = j.dump(2) + "\n";
        atomic_write_file(path, std::span<const char>(text.data(), text.size()));
    }

    // Returns the recorded entry after checking the hash; throws a
    // machine-parsable error naming the producing subcommand otherwise.
    json require(const std::string& stage, const std::string& want_hash,
                 const std::string& producer) const {
        if (!stages.contains(stage))
            throw ConfigError("missing artifact stage=" + stage + " producer=" + producer +
                              " hint=run `tablediff " + producer + "` first");
        const json& e = stages[stage];
        if (e.value("hash", "") != want_hash)
            throw ConfigError("stale artifact stage=" + stage + " recorded=" +
                              e.value("hash", "") + " expected=" + want_hash +
                              " hint=re-run `tablediff " + producer + "` with this config");
        return e;
    }
};

struct Ctx {
    RunConfig cfg;
    fs::path run_dir;
    uint64_t seed = 0;
    bool force = false;
    Manifest manifest;

    json section(const std::string& name) const {
        return json::parse(cfg.to_json())[name];
    }
    std::string section_dump(const std::string& name) const { return section(name).dump(); }

    // chained content hashes per stage
    std::string data_hash() const {
        uint64_t s = manifest.stages.contains("data")
                         ? manifest.stages["data"].value("seed", uint64_t(0))
                         : seed;
        return hash_hex(fnv1a(section_dump("data") + "#" + std::to_string(s)));
    }
    std::string data_hash_for_seed(uint64_t s) const {
        return hash_hex(fnv1a(section_dump("data") + "#" + std::to_string(s)));
    }
    std::string vae_hash() const {
        uint64_t s = manifest.stages.contains("vae")
                         ? manifest.stages["vae"].value("seed", uint64_t(0))
                         : seed;
        return vae_hash_for_seed(s);
    }
    std::string vae_hash_for_seed(uint64_t s) const {
        return hash_hex(fnv1a(data_hash() + section_dump("vae") + "#" + std::to_string(s)));
    }
    std::string cache_hash(bool conditional) const {
        return hash_hex(fnv1a(vae_hash() + (conditional ? "cond" : "uncond")));
    }
    std::string dit_hash_for_seed(bool conditional, uint64_t s) const {
        return hash_hex(fnv1a(cache_hash(conditional) + section_dump("schedule") +
                              section_dump("dit") + section_dump("train") +
                              (conditional ? "#c#" : "#u#") + std::to_string(s)));
    }
    std::string dit_stage(bool conditional) const {
        return conditional ? "dit-cond" : "dit-uncond";
    }

    void echo_config() const {
        std::string text = cfg.to_json();
        atomic_write_file(run_dir / "resolved_config.json",
                          std::span<const char>(text.data(), text.size()));
    }

    void refuse_or_clean(const fs::path& artifact) const {
        if (!fs::exists(artifact)) return;
        if (!force)
            throw ConfigError("artifact exists path=" + artifact.string() +
                              " hint=pass --force to regenerate");
        fs::remove_all(artifact);
    }
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

std::string zero_pad(size_t v, int width = 6) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%0*zu", width, v);
    return buf;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

void write_split(const Ctx& ctx, const fs::path& dir, int count, uint64_t salt) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "annotations");
    const StructureConstraints& sc = ctx.cfg.structure;
    parallel_for(static_cast<size_t>(count), [&](size_t i) {
        uint64_t s = Rng::mix(Rng::mix(ctx.seed, salt), i);
        TableAnnotation y = random_structure(Rng::mix(s, 1), sc);
        Image img = generate_toy_table(y, Rng::mix(s, 2));
        StructureMask mask = render_mask(y, sc.image_height, sc.image_width);
        std::string stem = zero_pad(i);
        write_png(img, dir / "images" / (stem + ".png"));
        write_png(mask_to_image(mask), dir / "masks" / (stem + ".png"));
        write_text(dir / "annotations" / (stem + ".xml"), voc_xml(y, stem + ".png"));
    });
}

void cmd_gen_data(Ctx& ctx) {
    std::string h = ctx.data_hash_for_seed(ctx.seed);
    fs::path dir = ctx.run_dir / ("data-" + h);
    ctx.refuse_or_clean(dir);
    write_split(ctx, dir, ctx.cfg.data_count, 0xda7a);
    write_split(ctx, dir / "heldout", ctx.cfg.data_heldout, 0x4e1d);
    ctx.manifest.record("data", h, dir.filename().string(), ctx.seed);
    std::cout << "gen-data: " << ctx.cfg.data_count << " train + " << ctx.cfg.data_heldout
              << " held-out samples in " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// render-masks
// ---------------------------------------------------------------------------

void cmd_render_masks(Ctx& ctx, const std::string& annotations_dir, const std::string& out_dir) {
    fs::path in = annotations_dir.empty()
                      ? ctx.run_dir /
                            ctx.manifest.require("data", ctx.data_hash(), "gen-data")["path"]
                                .get<std::string>() /
                            "annotations"
                      : fs::path(annotations_dir);
    if (!fs::exists(in)) throw IoError("annotations directory not found: " + in.string());
    fs::path out = out_dir.empty() ? ctx.run_dir / ("masks-" + ctx.data_hash()) : fs::path(out_dir);
    fs::create_directories(out);

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(in))
        if (e.path().extension() == ".xml") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .xml annotations in " + in.string());

    int warned = 0;
    for (const auto& f : files) {
        VocParseResult parsed = parse_voc_file(f);
        warned += parsed.unknown_objects;
        StructureMask m = render_mask(parsed.annotation, ctx.cfg.structure.image_height,
                                      ctx.cfg.structure.image_width);
        write_png(mask_to_image(m), out / (f.stem().string() + ".png"));
    }
    std::cout << "render-masks: " << files.size() << " masks in " << out.string();
    if (warned) std::cout << " (" << warned << " unknown objects ignored)";
    std::cout << "\n";
}

// ---------------------------------------------------------------------------
// train-vae
// ---------------------------------------------------------------------------

std::vector<Image> load_split_images(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Image> out(files.size());
    parallel_for(files.size(), [&](size_t i) { out[i] = read_png(files[i]); });
    return out;
}

void save_vae(const Vae& vae, const fs::path& base) {
    write_tensor_file(fs::path(base) += ".tdw", records_from_params(vae.params, "vae."));
    json j{{"format", "tablediff-vae"},
           {"version", 1},
           {"scale_factor", vae.scale_factor},
           {"base_channels", vae.cfg.base_channels},
           {"latent_channels", vae.cfg.latent_channels}};
    std::string text = j.dump(2) + "\n";
    atomic_write_file(fs::path(base) += ".json", std::span<const char>(text.data(), text.size()));
}

Vae load_vae(const fs::path& base) {
    std::ifstream in(fs::path(base) += ".json");
    if (!in) throw IoError("cannot open VAE manifest: " + base.string() + ".json");
    json j = json::parse(in);
    if (j.value("format", "") != "tablediff-vae")
        throw IoError("not a VAE manifest: " + base.string() + ".json");
    VaeConfig cfg;
    cfg.base_channels = j.at("base_channels");
    cfg.latent_channels = j.at("latent_channels");
    Vae vae = Vae::init(cfg, 0);
    vae.scale_factor = j.at("scale_factor");
    load_params_from_records(vae.params, read_tensor_file(fs::path(base) += ".tdw"), "vae.");
    return vae;
}

void cmd_train_vae(Ctx& ctx) {
    json data_entry = ctx.manifest.require("data", ctx.data_hash(), "gen-data");
    fs::path data_dir = ctx.run_dir / data_entry["path"].get<std::string>();

    std::vector<Image> dataset = load_split_images(data_dir / "images");
    if (ctx.cfg.vae_include_masks) {
        std::vector<Image> masks = load_split_images(data_dir / "masks");
        dataset.insert(dataset.end(), masks.begin(), masks.end());
    }

    std::string h = ctx.vae_hash_for_seed(ctx.seed);
    fs::path base = ctx.run_dir / ("vae-" + h);
    ctx.refuse_or_clean(fs::path(base) += ".tdw");

    Vae vae = Vae::init(ctx.cfg.vae, Rng::mix(ctx.seed, 0xae));
    VaeTrainConfig tc = ctx.cfg.vae_train;
    tc.kl_weight = ctx.cfg.vae_kl_weight;
    tc.seed = ctx.seed;
    VaeTrainStats stats = train_vae(vae, dataset, tc);

    // scale factor from mean-mode latents of the (unscaled) image set
    std::vector<Image> images = load_split_images(data_dir / "images");
    size_t n_scale = std::min<size_t>(images.size(), 512);
    std::vector<Tensor> latents(n_scale);
    parallel_for(n_scale, [&](size_t i) {
        latents[i] = vae.encode(image_to_tensor(images[i]), EncodeMode::mean);
    });
    vae.scale_factor = compute_scale_factor(latents, std::min<size_t>(100, n_scale));

    save_vae(vae, base);
    ctx.manifest.record("vae", h, base.filename().string(), ctx.seed);
    std::cout << "train-vae: " << tc.steps << " steps, final loss "
              << (stats.losses.empty() ? 0.0f : stats.losses.back()) << ", scale factor "
              << vae.scale_factor << " -> " << base.string() << ".tdw\n";
}

// ---------------------------------------------------------------------------
// cache-latents
// ---------------------------------------------------------------------------

std::vector<StructureMask> load_split_masks(const fs::path& dir) {
    std::vector<Image> imgs = load_split_images(dir);
    std::vector<StructureMask> masks(imgs.size());
    for (size_t i = 0; i < imgs.size(); ++i) masks[i] = image_to_mask(imgs[i]);
    return masks;
}

void cmd_cache_latents(Ctx& ctx, bool unconditional) {
    json data_entry = ctx.manifest.require("data", ctx.data_hash(), "gen-data");
    json vae_entry = ctx.manifest.require("vae", ctx.vae_hash(), "train-vae");
    fs::path data_dir = ctx.run_dir / data_entry["path"].get<std::string>();
    Vae vae = load_vae(ctx.run_dir / vae_entry["path"].get<std::string>());

    bool conditional = !unconditional;
    std::string h = ctx.cache_hash(conditional);
    fs::path path = ctx.run_dir / ("cache-" + h + (conditional ? "-cond" : "-uncond") + ".tdlc");
    ctx.refuse_or_clean(path);

    std::vector<Image> images = load_split_images(data_dir / "images");
    std::vector<StructureMask> masks;
    if (conditional) masks = load_split_masks(data_dir / "masks");
    cache_latents(images, masks, vae, path);

    ctx.manifest.record(conditional ? "cache-cond" : "cache-uncond", h, path.filename().string(),
                        0);
    std::cout << "cache-latents: " << images.size() << " samples ("
              << (conditional ? "conditional" : "unconditional") << ") -> " << path.string()
              << "\n";
}

// ---------------------------------------------------------------------------
// train-dit
// ---------------------------------------------------------------------------

void cmd_train_dit(Ctx& ctx, bool unconditional) {
    bool conditional = !unconditional;
    std::string cache_stage = conditional ? "cache-cond" : "cache-uncond";
    json cache_entry =
        ctx.manifest.require(cache_stage, ctx.cache_hash(conditional), "cache-latents");
    json vae_entry = ctx.manifest.require("vae", ctx.vae_hash(), "train-vae");

    LatentCache cache = LatentCache::open(ctx.run_dir / cache_entry["path"].get<std::string>());
    Vae vae = load_vae(ctx.run_dir / vae_entry["path"].get<std::string>());

    RunConfig cfg = ctx.cfg;
    cfg.conditional = conditional;
    TrainConfig tc = cfg.train_config(ctx.seed);

    std::string h = ctx.dit_hash_for_seed(conditional, ctx.seed);
    fs::path dir = ctx.run_dir / ("dit-" + h);
    ctx.refuse_or_clean(dir);

    TrainResult result = train_loop(tc, cache, vae, dir);
    ctx.manifest.record(ctx.dit_stage(conditional), h, dir.filename().string(), ctx.seed);

    float first = result.losses.empty() ? 0.0f : result.losses.front();
    float last = result.losses.empty() ? 0.0f : result.losses.back();
    std::cout << "train-dit: " << tc.iterations << " steps ("
              << (conditional ? "conditional" : "unconditional") << "), loss " << first << " -> "
              << last << " in " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

Checkpoint load_final_checkpoint(const fs::path& dit_dir) {
    std::vector<fs::path> bases;
    for (const auto& e : fs::directory_iterator(dit_dir))
        if (e.path().extension() == ".json" &&
            e.path().filename().string().rfind("ckpt_", 0) == 0) {
            fs::path base = e.path();
            base.replace_extension();
            bases.push_back(base);
        }
    if (bases.empty()) throw IoError("no checkpoints in " + dit_dir.string());
    std::sort(bases.begin(), bases.end());
    return load_checkpoint(bases.back());
}

Image overlay_mask(const Image& img, const StructureMask& mask) {
    Image rgb = to_rgb(img);
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x)
            if (y < mask.height && x < mask.width && mask.at(y, x)) {
                // red tint where the conditioning mask is set
                rgb.at(0, y, x) = 0.65f * rgb.at(0, y, x) + 0.35f;
                rgb.at(1, y, x) *= 0.65f;
                rgb.at(2, y, x) *= 0.65f;
            }
    return rgb;
}

void cmd_sample(Ctx& ctx, bool unconditional, const std::string& mask_path,
                const std::string& masks_dir, const std::string& seeds_csv, int count_override,
                int steps_override, bool overlay, const std::string& out_override) {
    bool conditional = !unconditional;
    json dit_entry = ctx.manifest.require(ctx.dit_stage(conditional),
                                          ctx.manifest.stages.contains(ctx.dit_stage(conditional))
                                              ? ctx.manifest.stages[ctx.dit_stage(conditional)]
                                                    .value("hash", "")
                                              : "",
                                          "train-dit");
    Checkpoint ckpt = load_final_checkpoint(ctx.run_dir / dit_entry["path"].get<std::string>());
    if (ckpt.dit.cfg.conditional() != conditional)
        throw ConfigError("checkpoint conditioning does not match the requested mode");

    int steps = steps_override > 0 ? steps_override : ctx.cfg.sample_steps;
    int count = count_override > 0 ? count_override : ctx.cfg.sample_count;

    std::vector<uint64_t> seeds;
    if (!seeds_csv.empty()) {
        std::stringstream ss(seeds_csv);
        std::string item;
        while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
    }

    // Gather (mask path, annotation path) pairs for conditional sampling.
    struct MaskSource {
        fs::path mask_png;
        fs::path annotation_xml;  // may be empty
    };
    std::vector<MaskSource> sources;
    if (conditional) {
        if (!mask_path.empty()) {
            sources.push_back({fs::path(mask_path), {}});
        } else {
            fs::path dir;
            if (!masks_dir.empty()) {
                dir = masks_dir;
            } else {
                json data_entry = ctx.manifest.require("data", ctx.data_hash(), "gen-data");
                dir = ctx.run_dir / data_entry["path"].get<std::string>() / "heldout" / "masks";
            }
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(dir))
                if (e.path().extension() == ".png") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            if (files.empty()) throw IoError("no mask PNGs in " + dir.string());
            for (const auto& f : files) {
                fs::path xml = f.parent_path().parent_path() / "annotations" / (f.stem().string() + ".xml");
                sources.push_back({f, fs::exists(xml) ? xml : fs::path()});
            }
        }
    }

    // Expand into jobs: one mask x many seeds, or many masks x derived seeds.
    struct Job {
        size_t source = 0;  // index into sources (ignored when unconditional)
        uint64_t seed = 0;
        std::string stem;
    };
    std::vector<Job> jobs;
    if (conditional && sources.size() == 1 && !mask_path.empty()) {
        if (seeds.empty())
            for (int i = 0; i < count; ++i) seeds.push_back(Rng::mix(ctx.seed, i));
        for (uint64_t s : seeds)
            jobs.push_back({0, s, fs::path(mask_path).stem().string() + "_seed" + std::to_string(s)});
    } else if (conditional) {
        size_t n = std::min<size_t>(count, sources.size());
        for (size_t i = 0; i < n; ++i)
            jobs.push_back({i, seeds.empty() ? Rng::mix(ctx.seed, i) : seeds[i % seeds.size()],
                            "sample_" + zero_pad(i)});
    } else {
        for (int i = 0; i < count; ++i)
            jobs.push_back({0, seeds.empty() ? Rng::mix(ctx.seed, i) : seeds[i % seeds.size()],
                            "sample_" + zero_pad(i)});
    }

    std::string h = hash_hex(fnv1a(dit_entry["hash"].get<std::string>() +
                                   ctx.section_dump("sample") + "#" + std::to_string(ctx.seed) +
                                   (conditional ? mask_path + masks_dir : std::string("uncond"))));
    fs::path out_dir = out_override.empty() ? ctx.run_dir / ("samples-" + h) : fs::path(out_override);
    ctx.refuse_or_clean(out_dir);
    fs::create_directories(out_dir);

    std::vector<StructureMask> masks(sources.size());
    for (size_t i = 0; i < sources.size(); ++i)
        masks[i] = image_to_mask(read_png(sources[i].mask_png));

    std::vector<std::string> manifest_lines(jobs.size());
    parallel_for(jobs.size(), [&](size_t i) {
        const Job& job = jobs[i];
        const StructureMask* m = conditional ? &masks[job.source] : nullptr;
        SampleResult result = td::sample(m, ckpt.dit, ckpt.vae, ckpt.schedule, steps, job.seed);
        fs::path png = out_dir / (job.stem + ".png");
        write_png(result.image, png);
        if (overlay && conditional)
            write_png(overlay_mask(result.image, *m), out_dir / (job.stem + "_overlay.png"));
        json line{{"sample", job.stem + ".png"}, {"seed", job.seed}, {"steps", steps}};
        if (conditional) {
            line["mask"] = sources[job.source].mask_png.string();
            if (!sources[job.source].annotation_xml.empty())
                line["annotation"] = sources[job.source].annotation_xml.string();
        }
        manifest_lines[i] = line.dump();
    });

    std::string manifest_text;
    for (const auto& l : manifest_lines) manifest_text += l + "\n";
    write_text(out_dir / "samples.jsonl", manifest_text);
    ctx.manifest.record(conditional ? "samples-cond" : "samples-uncond", h,
                        out_dir.filename().string(), ctx.seed);
    std::cout << "sample: " << jobs.size() << " images (" << steps << " steps) -> "
              << out_dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

void cmd_evaluate(Ctx& ctx, bool unconditional, const std::string& samples_override,
                  const std::string& reference_override, const std::string& out_override) {
    bool conditional = !unconditional;
    std::string stage = conditional ? "samples-cond" : "samples-uncond";
    fs::path samples_dir;
    std::string samples_hash = "external";
    if (!samples_override.empty()) {
        samples_dir = samples_override;
    } else {
        if (!ctx.manifest.stages.contains(stage))
            throw ConfigError("missing artifact stage=" + stage +
                              " producer=sample hint=run `tablediff sample` first");
        samples_dir = ctx.run_dir / ctx.manifest.stages[stage]["path"].get<std::string>();
        samples_hash = ctx.manifest.stages[stage].value("hash", "external");
    }
    std::ifstream jl(samples_dir / "samples.jsonl");
    if (!jl) throw IoError("no samples.jsonl in " + samples_dir.string());

    std::vector<Image> generated;
    std::vector<TableAnnotation> targets;
    bool have_targets = true;
    std::string line;
    while (std::getline(jl, line)) {
        if (line.empty()) continue;
        json e = json::parse(line);
        generated.push_back(read_png(samples_dir / e.at("sample").get<std::string>()));
        if (e.contains("annotation"))
            targets.push_back(parse_voc_file(e["annotation"].get<std::string>()).annotation);
        else
            have_targets = false;
    }
    if (generated.empty()) throw IoError("no samples listed in " + samples_dir.string());

    fs::path ref_dir;
    if (!reference_override.empty()) {
        ref_dir = reference_override;
    } else {
        json data_entry = ctx.manifest.require("data", ctx.data_hash(), "gen-data");
        ref_dir = ctx.run_dir / data_entry["path"].get<std::string>() / "heldout" / "images";
    }
    std::vector<Image> reference = load_split_images(ref_dir);
    if (reference.size() < 2) throw IoError("reference set too small: " + ref_dir.string());

    FeatureExtractor extractor = FeatureExtractor::make(ctx.cfg.eval_extractor);
    GaussianStats gen_stats = gaussian_stats(extract_features(generated, extractor));
    GaussianStats ref_stats = gaussian_stats(extract_features(reference, extractor));
    FrechetResult fd = frechet_distance(gen_stats, ref_stats);

    json report{{"extractor", ctx.cfg.eval_extractor},
                {"n_generated", generated.size()},
                {"n_reference", reference.size()},
                {"frechet", fd.distance},
                {"clamped_eigenvalues", fd.clamped_eigenvalues},
                {"low_sample_warning", gen_stats.low_sample_warning || ref_stats.low_sample_warning}};
    if (have_targets && !targets.empty() && targets.size() == generated.size()) {
        ExtractorConfig ec{ctx.cfg.eval_tau_dark, ctx.cfg.eval_min_run};
        AdherenceReport adh = structure_adherence(generated, targets, ec);
        report["adherence"] = {{"row_precision", adh.row_precision}, {"row_recall", adh.row_recall},
                               {"row_f1", adh.row_f1},               {"col_precision", adh.col_precision},
                               {"col_recall", adh.col_recall},       {"col_f1", adh.col_f1},
                               {"mean_f1", adh.mean_f1}};
    }

    fs::path out = out_override.empty()
                       ? ctx.run_dir / ("eval-" + hash_hex(fnv1a(samples_hash +
                                                                 ctx.section_dump("eval"))) +
                                        (conditional ? "-cond" : "-uncond") + ".json")
                       : fs::path(out_override);
    std::string text = report.dump(2) + "\n";
    atomic_write_file(out, std::span<const char>(text.data(), text.size()));
    std::cout << "evaluate: frechet " << fd.distance;
    if (report.contains("adherence"))
        std::cout << ", adherence mean F1 " << report["adherence"]["mean_f1"].get<double>();
    std::cout << " -> " << out.string() << "\n";
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

void cmd_export(Ctx& ctx, const std::string& source, int count, const std::string& out_override) {
    std::vector<Image> images;
    std::vector<TableAnnotation> annotations;

    if (source == "samples") {
        if (!ctx.manifest.stages.contains("samples-cond"))
            throw ConfigError("missing artifact stage=samples-cond producer=sample "
                              "hint=run `tablediff sample` first");
        fs::path dir = ctx.run_dir / ctx.manifest.stages["samples-cond"]["path"].get<std::string>();
        std::ifstream jl(dir / "samples.jsonl");
        if (!jl) throw IoError("no samples.jsonl in " + dir.string());
        std::string line;
        while (std::getline(jl, line)) {
            if (line.empty()) continue;
            json e = json::parse(line);
            if (!e.contains("annotation")) continue;
            images.push_back(read_png(dir / e.at("sample").get<std::string>()));
            annotations.push_back(parse_voc_file(e["annotation"].get<std::string>()).annotation);
        }
    } else if (source == "data") {
        json data_entry = ctx.manifest.require("data", ctx.data_hash(), "gen-data");
        fs::path dir = ctx.run_dir / data_entry["path"].get<std::string>();
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir / "images"))
            if (e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            images.push_back(read_png(f));
            annotations.push_back(
                parse_voc_file(dir / "annotations" / (f.stem().string() + ".xml")).annotation);
        }
    } else {
        throw ConfigError("export --source must be 'samples' or 'data'");
    }
    if (count > 0 && static_cast<size_t>(count) < images.size()) {
        images.resize(count);
        annotations.resize(count);
    }
    if (images.empty()) throw IoError("nothing to export (no annotated samples found)");

    fs::path out = out_override.empty() ? ctx.run_dir / "export" : fs::path(out_override);
    ctx.refuse_or_clean(out);
    export_detection_dataset(images, annotations, out);
    std::cout << "export: " << images.size() << " samples -> " << out.string() << "\n";
}

const char* error_code(const std::exception& e) {
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric";
    if (dynamic_cast<const ParseError*>(&e)) return "parse";
    if (dynamic_cast<const ValidationError*>(&e)) return "validation";
    if (dynamic_cast<const IoError*>(&e)) return "io";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    return "internal";
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structure-conditioned table image generation toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path, run_dir = "run", preset;
    uint64_t seed = 0;
    bool force = false;
    app.add_option("--config", config_path, "run config JSON (defaults apply when omitted)");
    app.add_option("--run-dir", run_dir, "run directory for artifacts");
    app.add_option("--preset", preset, "desk-64 | paper-256 | paper-512");
    app.add_flag("--force", force, "overwrite existing artifacts");
    auto* seed_opt = app.add_option("--seed", seed, "RNG seed (required for train/sample)");

    auto* gen_data = app.add_subcommand("gen-data", "generate toy tables, masks and annotations");
    auto* render_masks =
        app.add_subcommand("render-masks", "rasterize masks from VOC XML annotations");
    std::string rm_annotations, rm_out;
    render_masks->add_option("--annotations", rm_annotations, "annotation directory (VOC XML)");
    render_masks->add_option("--out", rm_out, "output directory");
    auto* train_vae_cmd = app.add_subcommand("train-vae", "train the latent autoencoder");
    auto* cache_cmd = app.add_subcommand("cache-latents", "encode the dataset into a latent cache");
    auto* train_dit_cmd = app.add_subcommand("train-dit", "train the diffusion transformer");
    auto* sample_cmd = app.add_subcommand("sample", "generate images from the trained model");
    std::string sm_mask, sm_masks_dir, sm_seeds, sm_out;
    int sm_count = 0, sm_steps = 0;
    bool sm_overlay = false;
    sample_cmd->add_option("--mask", sm_mask, "single conditioning mask PNG");
    sample_cmd->add_option("--masks-dir", sm_masks_dir, "directory of conditioning mask PNGs");
    sample_cmd->add_option("--seeds", sm_seeds, "comma-separated seeds (one sample per seed)");
    sample_cmd->add_option("--count", sm_count, "number of samples");
    sample_cmd->add_option("--steps", sm_steps, "DDIM steps (default from config)");
    sample_cmd->add_flag("--overlay", sm_overlay, "also write mask-over-image composites");
    sample_cmd->add_option("--out", sm_out, "output directory");
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Frechet + structure adherence report");
    std::string ev_samples, ev_reference, ev_out;
    evaluate_cmd->add_option("--samples", ev_samples, "samples directory (with samples.jsonl)");
    evaluate_cmd->add_option("--reference", ev_reference, "reference image directory");
    evaluate_cmd->add_option("--out", ev_out, "report path");
    auto* export_cmd = app.add_subcommand("export", "write a detector-ready dataset");
    std::string ex_source = "samples", ex_out;
    int ex_count = 0;
    export_cmd->add_option("--source", ex_source, "'samples' or 'data'");
    export_cmd->add_option("--count", ex_count, "cap on exported samples");
    export_cmd->add_option("--out", ex_out, "output directory");

    bool uncond = false;
    for (auto* cmd : {cache_cmd, train_dit_cmd, sample_cmd, evaluate_cmd})
        cmd->add_flag("--unconditional", uncond, "use the unconditional pipeline");

    CLI11_PARSE(app, argc, argv);

    try {
        Ctx ctx;
        ctx.cfg = config_path.empty() ? RunConfig() : RunConfig::from_json_file(config_path);
        if (!preset.empty()) ctx.cfg.apply_preset(preset);
        ctx.cfg.validate();
        ctx.run_dir = run_dir;
        ctx.seed = seed;
        ctx.force = force;
        fs::create_directories(ctx.run_dir);
        ctx.manifest = Manifest::load(ctx.run_dir);
        ctx.echo_config();

        bool needs_seed = train_vae_cmd->parsed() || train_dit_cmd->parsed() ||
                          sample_cmd->parsed() || gen_data->parsed();
        if (needs_seed && seed_opt->count() == 0)
            throw ConfigError("--seed is required for gen-data/train-vae/train-dit/sample");

        if (gen_data->parsed()) cmd_gen_data(ctx);
        else if (render_masks->parsed()) cmd_render_masks(ctx, rm_annotations, rm_out);
        else if (train_vae_cmd->parsed()) cmd_train_vae(ctx);
        else if (cache_cmd->parsed()) cmd_cache_latents(ctx, uncond);
        else if (train_dit_cmd->parsed()) cmd_train_dit(ctx, uncond);
        else if (sample_cmd->parsed())
            cmd_sample(ctx, uncond, sm_mask, sm_masks_dir, sm_seeds, sm_count, sm_steps, sm_overlay,
                       sm_out);
        else if (evaluate_cmd->parsed()) cmd_evaluate(ctx, uncond, ev_samples, ev_reference, ev_out);
        else if (export_cmd->parsed()) cmd_export(ctx, ex_source, ex_count, ex_out);
    } catch (const std::exception& e) {
        std::cerr << "TD-ERROR " << error_code(e) << ": " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
