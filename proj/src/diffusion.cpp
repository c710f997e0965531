#include "td/diffusion.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "td/rng.hpp"
#include "td/serialize.hpp"

namespace td {

namespace {
// Stream tags for derived seeds, so independent draws never collide.
constexpr uint64_t kStreamBatch = 0xb47c;
constexpr uint64_t kStreamLoss = 0x105e;
}  // namespace

NoisePredictor predictor_from(const DiT& dit) {
    return [&dit](const Tensor& z_t, const Tensor* m, std::span<const int> t) {
        return dit.predict_noise(z_t, m, t);
    };
}

Tensor estimate_z0(const Tensor& z_t, const Tensor& eps_hat, int t, const NoiseSchedule& s) {
    if (z_t.shape() != eps_hat.shape())
        throw ShapeError("estimate_z0: z_t " + shape_str(z_t.shape()) + " vs eps_hat " +
                         shape_str(eps_hat.shape()));
    MarginalStats m = marginal_stats(s, t);
    Tensor num = sub(z_t, scalar_scale(eps_hat, static_cast<float>(m.std)));
    return scalar_scale(num, static_cast<float>(1.0 / m.mean_coeff));
}

Tensor ddim_step(const Tensor& z_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& s) {
    if (t_prev >= t)
        throw ValidationError("ddim_step: t_prev=" + std::to_string(t_prev) +
                              " must be below t=" + std::to_string(t));
    if (t_prev < 0) throw ValidationError("ddim_step: t_prev must be >= 0");
    Tensor z0_hat = estimate_z0(z_t, eps_hat, t, s);
    double ab_prev = s.alpha_bar(t_prev);  // == 1 at t_prev = 0
    return add(scalar_scale(z0_hat, static_cast<float>(std::sqrt(ab_prev))),
               scalar_scale(eps_hat, static_cast<float>(std::sqrt(1.0 - ab_prev))));
}

std::vector<int> sampling_timesteps(int total_steps, int steps) {
    if (steps < 1) throw ValidationError("sampling_timesteps: steps must be >= 1");
    if (steps > total_steps)
        throw ValidationError("sampling_timesteps: steps=" + std::to_string(steps) + " exceeds T=" +
                              std::to_string(total_steps));
    std::vector<int> out;
    out.reserve(steps);
    if (steps == 1) {
        out.push_back(total_steps);
        return out;
    }
    double spacing = static_cast<double>(total_steps - 1) / (steps - 1);
    for (int i = 0; i < steps; ++i) {
        int t = static_cast<int>(std::llround(total_steps - i * spacing));
        if (out.empty() || out.back() != t) out.push_back(t);
    }
    return out;
}

Tensor training_loss(const NoisePredictor& f, const Tensor& z0_batch, const Tensor* m_batch,
                     const NoiseSchedule& s, uint64_t seed, std::span<const uint64_t> sample_keys) {
    if (z0_batch.ndim() != 4)
        throw ShapeError("training_loss: z0 batch must be [B,C,h,w], got " +
                         shape_str(z0_batch.shape()));
    size_t batch = z0_batch.shape()[0];
    if (sample_keys.size() != batch)
        throw ShapeError("training_loss: " + std::to_string(sample_keys.size()) + " keys for batch " +
                         std::to_string(batch));
    if (m_batch && m_batch->defined() && m_batch->shape() != z0_batch.shape())
        throw ShapeError("training_loss: mask batch " + shape_str(m_batch->shape()) +
                         " vs z0 batch " + shape_str(z0_batch.shape()));

    size_t plane = z0_batch.size() / batch;
    Tensor eps(z0_batch.shape());
    Tensor z_t(z0_batch.shape());
    std::vector<int> t(batch);
    for (size_t i = 0; i < batch; ++i) {
        Rng rng(Rng::mix(seed, sample_keys[i]));
        t[i] = static_cast<int>(rng.uniform_int(1, static_cast<uint64_t>(s.steps)));
        rng.fill_normal(std::span<float>(eps.data() + i * plane, plane));
        MarginalStats m = marginal_stats(s, t[i]);
        const float a = static_cast<float>(m.mean_coeff), b = static_cast<float>(m.std);
        const float* z0p = z0_batch.data() + i * plane;
        const float* ep = eps.data() + i * plane;
        float* zp = z_t.data() + i * plane;
        for (size_t j = 0; j < plane; ++j) zp[j] = a * z0p[j] + b * ep[j];
    }
    const Tensor* m_arg = (m_batch && m_batch->defined()) ? m_batch : nullptr;
    Tensor eps_hat = f(z_t, m_arg, t);
    return mse_loss(eps_hat, eps);
}

std::pair<Tensor, std::vector<Tensor>> sample_latent(const NoisePredictor& f,
                                                     const Tensor* mask_latent, Shape latent_shape,
                                                     const NoiseSchedule& s, int steps,
                                                     uint64_t seed) {
    std::vector<int> ts = sampling_timesteps(s.steps, steps);
    Tensor z = random_normal(latent_shape, seed);
    size_t batch = latent_shape.size() == 4 ? latent_shape[0] : 1;
    std::vector<Tensor> trajectory;
    trajectory.reserve(ts.size());
    for (size_t i = 0; i < ts.size(); ++i) {
        int t = ts[i];
        int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        std::vector<int> tv(batch, t);
        Tensor eps_hat = f(z, mask_latent, tv);
        z = ddim_step(z, eps_hat, t, t_prev, s);
        trajectory.push_back(z);
    }
    return {z, std::move(trajectory)};
}

SampleResult sample(const StructureMask* mask, const DiT& dit, const Vae& vae,
                    const NoiseSchedule& s, int steps, uint64_t seed) {
    Tensor mask_latent;
    if (dit.cfg.conditional()) {
        if (!mask) throw ValidationError("sample: conditional checkpoint requires a mask");
        Tensor mx = image_to_tensor(mask_to_rgb(*mask));
        mask_latent = vae.scale_latent(vae.encode(mx, EncodeMode::mean));
    } else if (mask) {
        throw ValidationError("sample: unconditional checkpoint must not get a mask");
    }

    Shape latent_shape{static_cast<size_t>(dit.cfg.out_channels),
                       static_cast<size_t>(dit.cfg.latent_h), static_cast<size_t>(dit.cfg.latent_w)};
    const Tensor* m_arg = mask_latent.defined() ? &mask_latent : nullptr;
    auto [z, trajectory] = sample_latent(predictor_from(dit), m_arg, latent_shape, s, steps, seed);

    SampleResult out;
    out.final_latent = z;
    out.trajectory = std::move(trajectory);
    out.image = tensor_to_image(vae.decode(vae.unscale_latent(z)));
    return out;
}

// --- training ----------------------------------------------------------------

void TrainConfig::validate() const {
    if (iterations <= 0) throw ValidationError("TrainConfig: iterations must be positive");
    if (batch <= 0) throw ValidationError("TrainConfig: batch must be positive");
    if (!(lr > 0)) throw ValidationError("TrainConfig: lr must be positive");
    if (schedule_steps < 1) throw ValidationError("TrainConfig: schedule T must be >= 1");
    if (conditional != dit.conditional())
        throw ValidationError("TrainConfig: conditioning flag inconsistent with DiT in_channels");
    dit.validate();
}

TrainConfig make_train_config(const std::string& preset, bool conditional) {
    TrainConfig cfg;
    cfg.preset = preset;
    cfg.conditional = conditional;
    cfg.dit = dit_preset(preset, conditional);
    cfg.dit.max_t = cfg.schedule_steps;
    return cfg;
}

namespace {

using nlohmann::json;

json dit_config_json(const DiTConfig& c) {
    return json{{"depth", c.depth},       {"dim", c.dim},
                {"heads", c.heads},       {"patch", c.patch},
                {"in_channels", c.in_channels}, {"out_channels", c.out_channels},
                {"latent_h", c.latent_h}, {"latent_w", c.latent_w},
                {"max_t", c.max_t},       {"pos_embed", c.pos_embed}};
}

DiTConfig dit_config_from_json(const json& j) {
    DiTConfig c;
    c.depth = j.at("depth");
    c.dim = j.at("dim");
    c.heads = j.at("heads");
    c.patch = j.at("patch");
    c.in_channels = j.at("in_channels");
    c.out_channels = j.at("out_channels");
    c.latent_h = j.at("latent_h");
    c.latent_w = j.at("latent_w");
    c.max_t = j.at("max_t");
    c.pos_embed = j.at("pos_embed");
    return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& base) {
    std::vector<TensorRecord> records = records_from_params(ckpt.dit.params, "dit.");
    std::vector<TensorRecord> vae_records = records_from_params(ckpt.vae.params, "vae.");
    records.insert(records.end(), vae_records.begin(), vae_records.end());
    const auto& names = ckpt.dit.params.names();
    for (size_t i = 0; i < ckpt.adam.m.size(); ++i) {
        const Shape& shape = ckpt.dit.params.tensors()[i].shape();
        records.push_back({"adam.m.dit." + names[i], 0, shape, ckpt.adam.m[i], {}});
        records.push_back({"adam.v.dit." + names[i], 0, shape, ckpt.adam.v[i], {}});
    }
    std::filesystem::path tdw = base;
    tdw += ".tdw";
    write_tensor_file(tdw, records);

    json j{{"format", "tablediff-checkpoint"},
           {"version", 1},
           {"iteration", ckpt.iteration},
           {"rng", {{"seed", ckpt.config.seed}, {"next_step", ckpt.iteration}}},
           {"adam_step", ckpt.adam.step},
           {"scale_factor", ckpt.vae.scale_factor},
           {"dit", dit_config_json(ckpt.dit.cfg)},
           {"vae",
            {{"base_channels", ckpt.vae.cfg.base_channels},
             {"latent_channels", ckpt.vae.cfg.latent_channels}}},
           {"schedule",
            {{"steps", ckpt.schedule.steps},
             {"beta_start", ckpt.schedule.beta_start},
             {"beta_end", ckpt.schedule.beta_end},
             {"kind", ckpt.schedule.kind}}},
           {"train",
            {{"preset", ckpt.config.preset},
             {"conditional", ckpt.config.conditional},
             {"iterations", ckpt.config.iterations},
             {"batch", ckpt.config.batch},
             {"lr", ckpt.config.lr},
             {"checkpoint_every", ckpt.config.checkpoint_every},
             {"seed", ckpt.config.seed}}}};
    std::string text = j.dump(2);
    text += "\n";
    std::filesystem::path jpath = base;
    jpath += ".json";
    atomic_write_file(jpath, std::span<const char>(text.data(), text.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& base) {
    std::filesystem::path jpath = base;
    jpath += ".json";
    std::ifstream in(jpath);
    if (!in) throw IoError("cannot open checkpoint manifest: " + jpath.string());
    json j = json::parse(in);
    if (j.value("format", "") != "tablediff-checkpoint")
        throw IoError("not a checkpoint manifest: " + jpath.string());

    Checkpoint ckpt;
    ckpt.iteration = j.at("iteration");
    VaeConfig vcfg;
    vcfg.base_channels = j.at("vae").at("base_channels");
    vcfg.latent_channels = j.at("vae").at("latent_channels");
    ckpt.vae = Vae::init(vcfg, 0);
    ckpt.vae.scale_factor = j.at("scale_factor");
    ckpt.dit = DiT::init(dit_config_from_json(j.at("dit")), 0);
    ckpt.schedule = build_schedule(j.at("schedule").at("steps"), j.at("schedule").at("beta_start"),
                                   j.at("schedule").at("beta_end"), j.at("schedule").at("kind"));

    const json& tr = j.at("train");
    ckpt.config.preset = tr.at("preset");
    ckpt.config.conditional = tr.at("conditional");
    ckpt.config.iterations = tr.at("iterations");
    ckpt.config.batch = tr.at("batch");
    ckpt.config.lr = tr.at("lr");
    ckpt.config.checkpoint_every = tr.at("checkpoint_every");
    ckpt.config.seed = tr.at("seed");
    ckpt.config.schedule_steps = ckpt.schedule.steps;
    ckpt.config.beta_start = ckpt.schedule.beta_start;
    ckpt.config.beta_end = ckpt.schedule.beta_end;
    ckpt.config.dit = ckpt.dit.cfg;

    std::filesystem::path tdw = base;
    tdw += ".tdw";
    std::vector<TensorRecord> records = read_tensor_file(tdw);
    load_params_from_records(ckpt.dit.params, records, "dit.");
    load_params_from_records(ckpt.vae.params, records, "vae.");

    ckpt.adam.step = j.at("adam_step");
    const auto& names = ckpt.dit.params.names();
    ckpt.adam.m.resize(names.size());
    ckpt.adam.v.resize(names.size());
    for (size_t i = 0; i < names.size(); ++i) {
        bool found_m = false, found_v = false;
        for (const auto& r : records) {
            if (r.name == "adam.m.dit." + names[i]) {
                ckpt.adam.m[i] = r.f32;
                found_m = true;
            } else if (r.name == "adam.v.dit." + names[i]) {
                ckpt.adam.v[i] = r.f32;
                found_v = true;
            }
        }
        if (!found_m || !found_v)
            throw IoError("checkpoint missing Adam state for parameter '" + names[i] + "'");
    }
    return ckpt;
}

TrainResult train_loop(const TrainConfig& cfg_in, const LatentCache& cache, const Vae& vae,
                       const std::filesystem::path& run_dir, const Checkpoint* resume) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    if (cache.size() == 0) throw ValidationError("train_loop: latent cache is empty");

    // Cache/config pairing checks, all before step 1.
    Shape want{static_cast<size_t>(cfg.dit.out_channels), static_cast<size_t>(cfg.dit.latent_h),
               static_cast<size_t>(cfg.dit.latent_w)};
    if (cache.latent_shape() != want)
        throw ValidationError("train_loop: cache latents " + shape_str(cache.latent_shape()) +
                              " do not match configured resolution " + shape_str(want));
    if (cfg.conditional && !cache.has_masks())
        throw ValidationError("train_loop: conditional config requires a cache with mask latents");
    if (!cfg.conditional && cache.has_masks())
        throw ValidationError("train_loop: unconditional config rejects a conditional cache");

    NoiseSchedule schedule = build_schedule(cfg.schedule_steps, cfg.beta_start, cfg.beta_end);

    Checkpoint ckpt;
    if (resume) {
        ckpt = *resume;
        if (ckpt.dit.cfg.tokens() != cfg.dit.tokens() || ckpt.dit.cfg.dim != cfg.dit.dim)
            throw ValidationError("train_loop: resume checkpoint does not match config");
    } else {
        ckpt.dit = DiT::init(cfg.dit, Rng::mix(cfg.seed, 0xd17));
        ckpt.vae = vae;
        ckpt.schedule = schedule;
        ckpt.config = cfg;
        ckpt.iteration = 0;
    }
    ckpt.config = cfg;
    ckpt.schedule = schedule;
    if (!resume) ckpt.vae = vae;

    // The cache is small at desk scale; keep it resident.
    std::vector<Tensor> z0s(cache.size());
    std::vector<Tensor> masks(cache.size());
    for (size_t i = 0; i < cache.size(); ++i) {
        auto [z, m] = cache.load(i);
        z0s[i] = std::move(z);
        if (cache.has_masks()) masks[i] = std::move(m);
    }

    std::ofstream metrics;
    if (!run_dir.empty()) {
        std::filesystem::create_directories(run_dir);
        bool fresh = ckpt.iteration == 0;
        metrics.open(run_dir / "metrics.csv", fresh ? std::ios::trunc : std::ios::app);
        if (!metrics) throw IoError("cannot open metrics file in " + run_dir.string());
        if (fresh) metrics << "iteration,loss,wall_ms\n";
    }

    size_t batch = std::min<size_t>(cfg.batch, cache.size());
    size_t plane = shape_numel(want);
    AdamConfig adam_cfg{cfg.lr, 0.9f, 0.999f, 1e-8f};
    TrainResult result;

    for (uint64_t step = ckpt.iteration; step < static_cast<uint64_t>(cfg.iterations); ++step) {
        auto t0 = std::chrono::steady_clock::now();
        Rng pick(Rng::mix(Rng::mix(cfg.seed, kStreamBatch), step));
        std::vector<uint64_t> keys(batch);
        Tensor z0({batch, want[0], want[1], want[2]});
        Tensor m_batch;
        if (cfg.conditional) m_batch = Tensor({batch, want[0], want[1], want[2]});
        for (size_t b = 0; b < batch; ++b) {
            size_t idx = pick.uniform_int(0, cache.size() - 1);
            keys[b] = idx;
            std::copy_n(z0s[idx].data(), plane, z0.data() + b * plane);
            if (cfg.conditional) std::copy_n(masks[idx].data(), plane, m_batch.data() + b * plane);
        }

        float loss_value;
        {
            Tape tape;
            Tensor loss = training_loss(predictor_from(ckpt.dit), z0,
                                        cfg.conditional ? &m_batch : nullptr, schedule,
                                        Rng::mix(Rng::mix(cfg.seed, kStreamLoss), step), keys);
            tape.backward(loss);
            loss_value = loss.item();
        }
        adam_step(ckpt.dit.params.tensors(), ckpt.adam, adam_cfg);
        ckpt.dit.params.zero_grads();
        ckpt.iteration = step + 1;
        result.losses.push_back(loss_value);

        double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (metrics.is_open()) {
            char line[96];
            std::snprintf(line, sizeof(line), "%llu,%.9g,%.3f\n",
                          static_cast<unsigned long long>(ckpt.iteration), loss_value, wall_ms);
            metrics << line;
        }
        if (!run_dir.empty() && cfg.checkpoint_every > 0 &&
            ckpt.iteration % static_cast<uint64_t>(cfg.checkpoint_every) == 0 &&
            ckpt.iteration < static_cast<uint64_t>(cfg.iterations)) {
            char name[32];
            std::snprintf(name, sizeof(name), "ckpt_%06llu",
                          static_cast<unsigned long long>(ckpt.iteration));
            save_checkpoint(ckpt, run_dir / name);
        }
    }
    if (!run_dir.empty()) {
        char name[32];
        std::snprintf(name, sizeof(name), "ckpt_%06llu",
                      static_cast<unsigned long long>(ckpt.iteration));
        save_checkpoint(ckpt, run_dir / name);
    }
    result.checkpoint = std::move(ckpt);
    return result;
}

}  // namespace td
