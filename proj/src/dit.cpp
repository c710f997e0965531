#include "td/dit.hpp"

#include <cmath>

#include "td/rng.hpp"

namespace td {

void DiTConfig::validate() const {
    if (depth < 1 || dim < 1 || heads < 1 || patch < 1) throw ValidationError("DiTConfig: bad sizes");
    if (dim % heads != 0) throw ValidationError("DiTConfig: dim must be divisible by heads");
    if (dim % 2 != 0) throw ValidationError("DiTConfig: dim must be even for the sinusoid");
    if (latent_h % patch != 0 || latent_w % patch != 0)
        throw ValidationError("DiTConfig: latent dims must be divisible by patch size");
    if (in_channels != out_channels && in_channels != 2 * out_channels)
        throw ValidationError("DiTConfig: in_channels must be out_channels (unconditional) or twice it");
    if (max_t < 1) throw ValidationError("DiTConfig: max_t must be positive");
}

DiTConfig dit_preset(const std::string& name, bool conditional) {
    DiTConfig cfg;
    if (name == "desk-64") {
        cfg.depth = 4;
        cfg.dim = 128;
        cfg.heads = 4;
        cfg.patch = 2;
        cfg.latent_h = cfg.latent_w = 8;
    } else if (name == "paper-256") {
        cfg.depth = 12;
        cfg.dim = 768;
        cfg.heads = 12;
        cfg.patch = 2;
        cfg.latent_h = cfg.latent_w = 32;
    } else if (name == "paper-512") {
        cfg.depth = 12;
        cfg.dim = 768;
        cfg.heads = 12;
        cfg.patch = 2;
        cfg.latent_h = cfg.latent_w = 64;
    } else {
        throw ConfigError("unknown DiT preset '" + name + "' (expected desk-64, paper-256 or paper-512)");
    }
    cfg.out_channels = 4;
    cfg.in_channels = conditional ? 8 : 4;
    return cfg;
}

Tensor concat_condition(const Tensor& z_t, const Tensor& m_latent) {
    if (z_t.shape() != m_latent.shape())
        throw ShapeError("concat_condition: latent " + shape_str(z_t.shape()) + " vs mask " +
                         shape_str(m_latent.shape()));
    if (z_t.ndim() != 3 && z_t.ndim() != 4)
        throw ShapeError("concat_condition: expected [C,h,w] or [B,C,h,w]");
    size_t axis = z_t.ndim() == 4 ? 1 : 0;
    std::vector<Tensor> parts = {z_t, m_latent};
    return concat(std::span<const Tensor>(parts), axis);
}

Tensor patchify(const Tensor& u, int p) {
    if (p < 1) throw ValidationError("patchify: patch size must be positive");
    size_t ps = static_cast<size_t>(p);
    if (u.ndim() == 3) {
        size_t c = u.shape()[0], h = u.shape()[1], w = u.shape()[2];
        if (h % ps != 0 || w % ps != 0)
            throw ShapeError("patchify: dims " + shape_str(u.shape()) + " not divisible by patch " +
                             std::to_string(p));
        Tensor g = reshape(u, {c, h / ps, ps, w / ps, ps});
        g = transpose(g, {1, 3, 0, 2, 4});  // [h/p, w/p, C, p, p]
        return reshape(g, {(h / ps) * (w / ps), c * ps * ps});
    }
    if (u.ndim() == 4) {
        size_t b = u.shape()[0], c = u.shape()[1], h = u.shape()[2], w = u.shape()[3];
        if (h % ps != 0 || w % ps != 0)
            throw ShapeError("patchify: dims " + shape_str(u.shape()) + " not divisible by patch " +
                             std::to_string(p));
        Tensor g = reshape(u, {b, c, h / ps, ps, w / ps, ps});
        g = transpose(g, {0, 2, 4, 1, 3, 5});  // [B, h/p, w/p, C, p, p]
        return reshape(g, {b, (h / ps) * (w / ps), c * ps * ps});
    }
    throw ShapeError("patchify: expected [C,h,w] or [B,C,h,w], got " + shape_str(u.shape()));
}

Tensor unpatchify(const Tensor& tokens, int channels, int h, int w, int p) {
    size_t ps = static_cast<size_t>(p), c = static_cast<size_t>(channels);
    size_t hh = static_cast<size_t>(h), ww = static_cast<size_t>(w);
    if (hh % ps != 0 || ww % ps != 0) throw ShapeError("unpatchify: target dims not divisible by patch");
    size_t t = (hh / ps) * (ww / ps), width = c * ps * ps;
    if (tokens.ndim() == 2) {
        if (tokens.shape() != Shape{t, width})
            throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match " +
                             shape_str({t, width}));
        Tensor g = reshape(tokens, {hh / ps, ww / ps, c, ps, ps});
        g = transpose(g, {2, 0, 3, 1, 4});  // [C, h/p, p, w/p, p]
        return reshape(g, {c, hh, ww});
    }
    if (tokens.ndim() == 3) {
        size_t b = tokens.shape()[0];
        if (tokens.shape() != Shape{b, t, width})
            throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " do not match " +
                             shape_str({b, t, width}));
        Tensor g = reshape(tokens, {b, hh / ps, ww / ps, c, ps, ps});
        g = transpose(g, {0, 3, 1, 4, 2, 5});  // [B, C, h/p, p, w/p, p]
        return reshape(g, {b, c, hh, ww});
    }
    throw ShapeError("unpatchify: expected 2-D or 3-D tokens");
}

std::vector<float> timestep_embed(int t, int dim, int max_t) {
    if (t < 1 || t > max_t)
        throw ValidationError("timestep_embed: t=" + std::to_string(t) + " outside {1.." +
                              std::to_string(max_t) + "}");
    if (dim < 2 || dim % 2 != 0) throw ValidationError("timestep_embed: dim must be even and >= 2");
    int half = dim / 2;
    std::vector<float> out(dim);
    for (int i = 0; i < half; ++i) {
        // wavelengths geometric from 1 to 1e4
        double expnt = half == 1 ? 0.0 : static_cast<double>(i) / (half - 1);
        double wavelength = std::pow(10000.0, expnt);
        double angle = static_cast<double>(t) / wavelength;
        out[i] = static_cast<float>(std::sin(angle));
        out[half + i] = static_cast<float>(std::cos(angle));
    }
    return out;
}

namespace {

Tensor trunc_normal(Shape shape, uint64_t seed, float std) {
    Tensor t = random_normal(std::move(shape), seed);
    for (auto& v : t.vec()) v = std::min(std::max(v, -3.0f), 3.0f) * std;
    return t;
}

}  // namespace

DiT DiT::init(const DiTConfig& cfg, uint64_t seed) {
    cfg.validate();
    DiT dit;
    dit.cfg = cfg;
    ParamSet& p = dit.params;
    size_t dim = cfg.dim;
    auto s = [seed](uint64_t i) { return Rng::mix(seed, i); };

    p.add("patch_embed.w", trunc_normal({static_cast<size_t>(cfg.token_width()), dim}, s(1), 0.02f));
    p.add("pos_embed", trunc_normal({static_cast<size_t>(cfg.tokens()), dim}, s(2), 0.02f));
    p.add("t_mlp1.w", trunc_normal({dim, dim}, s(3), 0.02f));
    p.add("t_mlp2.w", trunc_normal({dim, dim}, s(4), 0.02f));
    for (int i = 0; i < cfg.depth; ++i) {
        std::string b = "block" + std::to_string(i) + ".";
        uint64_t base = 16 + 8 * static_cast<uint64_t>(i);
        p.add(b + "qkv.w", trunc_normal({dim, 3 * dim}, s(base + 0), 0.02f));
        p.add(b + "proj.w", trunc_normal({dim, dim}, s(base + 1), 0.02f));
        p.add(b + "mlp1.w", trunc_normal({dim, 4 * dim}, s(base + 2), 0.02f));
        p.add(b + "mlp2.w", trunc_normal({4 * dim, dim}, s(base + 3), 0.02f));
        // adaLN-Zero: modulation regressors start at zero, so the block is the
        // identity before any training step.
        p.add(b + "mod.w", Tensor::zeros({dim, 6 * dim}));
    }
    p.add("final.mod.w", Tensor::zeros({dim, 2 * dim}));
    p.add("final.head.w",
          Tensor::zeros({dim, static_cast<size_t>(cfg.patch * cfg.patch * cfg.out_channels)}));
    return dit;
}

Tensor DiT::condition_vector(std::span<const int> t) const {
    if (t.empty()) throw ValidationError("condition_vector: no timesteps");
    size_t dim = cfg.dim;
    Tensor sinusoid({t.size(), dim});
    for (size_t i = 0; i < t.size(); ++i) {
        std::vector<float> e = timestep_embed(t[i], cfg.dim, cfg.max_t);
        std::copy(e.begin(), e.end(), sinusoid.data() + i * dim);
    }
    Tensor h = silu(matmul(sinusoid, params.get("t_mlp1.w")));
    return matmul(h, params.get("t_mlp2.w"));
}

Tensor DiT::block_apply(int layer, const Tensor& tokens, const Tensor& cond, size_t batch,
                        size_t tokens_per_sample) const {
    const std::string b = "block" + std::to_string(layer) + ".";
    size_t dim = cfg.dim;
    size_t heads = cfg.heads;
    size_t dh = dim / heads;
    size_t t_count = tokens_per_sample;
    if (tokens.shape() != Shape{batch * t_count, dim})
        throw ShapeError("block_apply: tokens " + shape_str(tokens.shape()) + " do not match batch " +
                         std::to_string(batch) + " x " + std::to_string(t_count));
    if (cond.shape() != Shape{batch, dim})
        throw ShapeError("block_apply: cond " + shape_str(cond.shape()) + " must be [batch, dim]");

    Tensor mods = matmul(cond, params.get(b + "mod.w"));  // [B, 6*dim]
    auto mod = [&](size_t idx) {
        return repeat_rows(slice(mods, 1, idx * dim, (idx + 1) * dim), t_count);
    };
    Tensor shift1 = mod(0), scale1 = mod(1), gate1 = mod(2);
    Tensor shift2 = mod(3), scale2 = mod(4), gate2 = mod(5);

    // attention branch
    Tensor h = add(mul(layer_norm(tokens), scalar_add(scale1, 1.0f)), shift1);
    Tensor qkv = matmul(h, params.get(b + "qkv.w"));  // [B*T, 3*dim]
    Tensor q5 = transpose(reshape(qkv, {batch, t_count, 3, heads, dh}), {2, 0, 3, 1, 4});
    Tensor q = reshape(slice(q5, 0, 0, 1), {batch * heads, t_count, dh});
    Tensor k = reshape(slice(q5, 0, 1, 2), {batch * heads, t_count, dh});
    Tensor v = reshape(slice(q5, 0, 2, 3), {batch * heads, t_count, dh});
    Tensor scores = scalar_scale(matmul(q, transpose(k, {0, 2, 1})),
                                 1.0f / std::sqrt(static_cast<float>(dh)));
    Tensor attnw = softmax(scores, 2);
    Tensor o = matmul(attnw, v);  // [B*H, T, dh]
    o = reshape(transpose(reshape(o, {batch, heads, t_count, dh}), {0, 2, 1, 3}),
                {batch * t_count, dim});
    Tensor attn_out = matmul(o, params.get(b + "proj.w"));
    Tensor out = add(tokens, mul(gate1, attn_out));

    // MLP branch
    Tensor h2 = add(mul(layer_norm(out), scalar_add(scale2, 1.0f)), shift2);
    Tensor m = matmul(gelu(matmul(h2, params.get(b + "mlp1.w"))), params.get(b + "mlp2.w"));
    return add(out, mul(gate2, m));
}

Tensor DiT::predict_noise(const Tensor& z_t_in, const Tensor* m_latent, std::span<const int> t) const {
    bool batched = z_t_in.ndim() == 4;
    if (!batched && z_t_in.ndim() != 3)
        throw ShapeError("predict_noise: latent must be [4,h,w] or [B,4,h,w], got " +
                         shape_str(z_t_in.shape()));
    size_t oc = cfg.out_channels;
    size_t lh = cfg.latent_h, lw = cfg.latent_w;
    Tensor z = batched ? z_t_in : reshape(z_t_in, {1, z_t_in.shape()[0], z_t_in.shape()[1], z_t_in.shape()[2]});
    size_t batch = z.shape()[0];
    if (z.shape() != Shape{batch, oc, lh, lw})
        throw ShapeError("predict_noise: latent " + shape_str(z_t_in.shape()) +
                         " does not match the configured " + std::to_string(oc) + "x" +
                         std::to_string(lh) + "x" + std::to_string(lw));
    if (t.size() != batch)
        throw ShapeError("predict_noise: got " + std::to_string(t.size()) + " timesteps for batch " +
                         std::to_string(batch));

    Tensor x;
    if (cfg.conditional()) {
        if (!m_latent || !m_latent->defined())
            throw ValidationError("predict_noise: conditional model requires a mask latent");
        Tensor m = m_latent->ndim() == 3
                       ? reshape(*m_latent, {1, m_latent->shape()[0], m_latent->shape()[1],
                                             m_latent->shape()[2]})
                       : *m_latent;
        x = concat_condition(z, m);
    } else {
        if (m_latent && m_latent->defined())
            throw ValidationError("predict_noise: unconditional model got a mask latent");
        x = z;
    }

    size_t t_count = cfg.tokens();
    Tensor tokens = reshape(patchify(x, cfg.patch),
                            {batch * t_count, static_cast<size_t>(cfg.token_width())});
    tokens = matmul(tokens, params.get("patch_embed.w"));
    if (cfg.pos_embed) tokens = add(tokens, tile(params.get("pos_embed"), batch));

    Tensor cond = condition_vector(t);
    for (int i = 0; i < cfg.depth; ++i) tokens = block_apply(i, tokens, cond, batch, t_count);

    size_t dim = cfg.dim;
    Tensor mods = matmul(cond, params.get("final.mod.w"));
    Tensor shift = repeat_rows(slice(mods, 1, 0, dim), t_count);
    Tensor scale = repeat_rows(slice(mods, 1, dim, 2 * dim), t_count);
    Tensor h = add(mul(layer_norm(tokens), scalar_add(scale, 1.0f)), shift);
    Tensor out_tokens = matmul(h, params.get("final.head.w"));
    Tensor out = unpatchify(reshape(out_tokens, {batch, t_count, oc * cfg.patch * cfg.patch}),
                            cfg.out_channels, lh, lw, cfg.patch);
    return batched ? out : reshape(out, {oc, lh, lw});
}

}  // namespace td
