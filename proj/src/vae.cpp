#include "td/vae.hpp"

#include <cmath>

#include "td/adam.hpp"
#include "td/rng.hpp"

namespace td {

namespace {

Tensor he_normal(Shape shape, size_t fan_in, uint64_t seed, float gain = 1.0f) {
    Tensor t = random_normal(std::move(shape), seed);
    float std = gain * std::sqrt(2.0f / static_cast<float>(fan_in));
    for (auto& v : t.vec()) v *= std;
    return t;
}

void add_conv(ParamSet& p, const std::string& name, size_t oc, size_t ic, size_t k, uint64_t seed,
              float gain = 1.0f) {
    p.add(name + ".w", he_normal({oc, ic, k, k}, ic * k * k, seed, gain));
    p.add(name + ".b", Tensor::zeros({oc}));
}

void add_tconv(ParamSet& p, const std::string& name, size_t ic, size_t oc, size_t k, uint64_t seed,
               float gain = 1.0f) {
    p.add(name + ".w", he_normal({ic, oc, k, k}, ic * k * k, seed, gain));
    p.add(name + ".b", Tensor::zeros({oc}));
}

Tensor conv(const ParamSet& p, const std::string& name, const Tensor& x, size_t stride,
            size_t padding) {
    return conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, padding);
}

Tensor tconv(const ParamSet& p, const std::string& name, const Tensor& x, size_t stride,
             size_t padding) {
    return transposed_conv2d(x, p.get(name + ".w"), p.get(name + ".b"), stride, padding);
}

size_t channel_axis(const Tensor& t) { return t.ndim() == 4 ? 1 : 0; }

}  // namespace

Vae Vae::init(const VaeConfig& cfg, uint64_t seed) {
    Vae vae;
    vae.cfg = cfg;
    size_t c1 = cfg.base_channels, c2 = 2 * c1, c3 = 4 * c1;
    size_t lat = cfg.latent_channels;
    ParamSet& p = vae.params;
    auto s = [seed](uint64_t i) { return Rng::mix(seed, i); };

    add_conv(p, "enc.down1", c1, 3, 3, s(1));
    add_conv(p, "enc.down2", c2, c1, 3, s(2));
    add_conv(p, "enc.down3", c3, c2, 3, s(3));
    add_conv(p, "enc.mid", c3, c3, 3, s(4));
    add_conv(p, "enc.head", 2 * lat, c3, 3, s(5), 0.5f);

    add_conv(p, "dec.in", c3, lat, 3, s(6));
    add_conv(p, "dec.mid", c3, c3, 3, s(7));
    add_tconv(p, "dec.up1", c3, c2, 4, s(8));
    add_tconv(p, "dec.up2", c2, c1, 4, s(9));
    add_tconv(p, "dec.up3", c1, c1, 4, s(10));
    add_conv(p, "dec.out", 3, c1, 3, s(11), 0.5f);
    return vae;
}

Tensor Vae::encode_moments(const Tensor& x) const {
    if (x.ndim() != 3 && x.ndim() != 4)
        throw ShapeError("encode: input must be [3,H,W] or [B,3,H,W], got " + shape_str(x.shape()));
    size_t ca = channel_axis(x);
    if (x.shape()[ca] != 3)
        throw ShapeError("encode: expected 3 input channels, got " + shape_str(x.shape()));
    size_t h = x.shape()[ca + 1], w = x.shape()[ca + 2];
    if (h % 8 != 0 || w % 8 != 0)
        throw ShapeError("encode: spatial dims must be divisible by 8, got " + shape_str(x.shape()));

    Tensor hx = silu(conv(params, "enc.down1", x, 2, 1));
    hx = silu(conv(params, "enc.down2", hx, 2, 1));
    hx = silu(conv(params, "enc.down3", hx, 2, 1));
    hx = silu(conv(params, "enc.mid", hx, 1, 1));
    Tensor moments = conv(params, "enc.head", hx, 1, 1);

    // Clamp the log-variance half so exp stays finite.
    size_t ca2 = channel_axis(moments);
    size_t lat = cfg.latent_channels;
    Tensor mean = slice(moments, ca2, 0, lat);
    Tensor logvar = clamp(slice(moments, ca2, lat, 2 * lat), cfg.logvar_min, cfg.logvar_max);
    std::vector<Tensor> parts = {mean, logvar};
    return concat(std::span<const Tensor>(parts), ca2);
}

Tensor Vae::encode(const Tensor& x, EncodeMode mode, uint64_t seed) const {
    Tensor moments = encode_moments(x);
    size_t ca = channel_axis(moments);
    size_t lat = cfg.latent_channels;
    Tensor mean = slice(moments, ca, 0, lat);
    if (mode == EncodeMode::mean) return mean;
    Tensor logvar = slice(moments, ca, lat, 2 * lat);
    Tensor sigma = td::exp(scalar_scale(logvar, 0.5f));
    Tensor eps = random_normal(mean.shape(), seed);
    return add(mean, mul(sigma, eps));
}

Tensor Vae::decode(const Tensor& z) const {
    if (z.ndim() != 3 && z.ndim() != 4)
        throw ShapeError("decode: latent must be [C,h,w] or [B,C,h,w], got " + shape_str(z.shape()));
    if (z.shape()[channel_axis(z)] != static_cast<size_t>(cfg.latent_channels))
        throw ShapeError("decode: expected " + std::to_string(cfg.latent_channels) +
                         " latent channels, got " + shape_str(z.shape()));
    Tensor hx = silu(conv(params, "dec.in", z, 1, 1));
    hx = silu(conv(params, "dec.mid", hx, 1, 1));
    hx = silu(tconv(params, "dec.up1", hx, 2, 1));
    hx = silu(tconv(params, "dec.up2", hx, 2, 1));
    hx = silu(tconv(params, "dec.up3", hx, 2, 1));
    return td::tanh(conv(params, "dec.out", hx, 1, 1));
}

VaeTrainStats train_vae(Vae& vae, const std::vector<Image>& dataset, const VaeTrainConfig& cfg) {
    if (dataset.empty()) throw ValidationError("train_vae: dataset is empty");
    int h = dataset[0].height, w = dataset[0].width;
    for (const Image& img : dataset)
        if (img.height != h || img.width != w)
            throw ValidationError("train_vae: dataset images must share one size");

    size_t batch = std::min<size_t>(cfg.batch, dataset.size());
    size_t lat = vae.cfg.latent_channels;
    AdamConfig adam{cfg.lr, 0.9f, 0.999f, 1e-8f};
    AdamState state;
    VaeTrainStats stats;
    stats.losses.reserve(cfg.steps);

    for (int step = 0; step < cfg.steps; ++step) {
        Rng pick(Rng::mix(cfg.seed, static_cast<uint64_t>(step)));
        Tensor x({batch, 3, static_cast<size_t>(h), static_cast<size_t>(w)});
        size_t plane = static_cast<size_t>(3) * h * w;
        for (size_t b = 0; b < batch; ++b) {
            const Image& img = dataset[pick.uniform_int(0, dataset.size() - 1)];
            const Image rgb = img.channels == 3 ? img : to_rgb(img);
            for (size_t i = 0; i < plane; ++i) x.data()[b * plane + i] = rgb.data[i] * 2.0f - 1.0f;
        }

        Tape tape;
        Tensor moments = vae.encode_moments(x);
        Tensor mean_t = slice(moments, 1, 0, lat);
        Tensor logvar = slice(moments, 1, lat, 2 * lat);
        Tensor eps = random_normal(mean_t.shape(), Rng::mix(cfg.seed, 0x9000 + step));
        Tensor z = add(mean_t, mul(td::exp(scalar_scale(logvar, 0.5f)), eps));
        Tensor recon = vae.decode(z);
        Tensor loss = mse_loss(recon, x);
        if (cfg.kl_weight != 0.0f) {
            // KL(q || N(0,I)) per latent element: -0.5 * (1 + lv - mu^2 - e^lv)
            Tensor kl_inner = add(scalar_add(logvar, 1.0f),
                                  scalar_scale(add(mul(mean_t, mean_t), td::exp(logvar)), -1.0f));
            Tensor kl = scalar_scale(mean(kl_inner), -0.5f);
            loss = add(loss, scalar_scale(kl, cfg.kl_weight));
        }
        tape.backward(loss);
        adam_step(vae.params.tensors(), state, adam);
        vae.params.zero_grads();
        stats.losses.push_back(loss.item());
    }
    return stats;
}

float compute_scale_factor(std::span<const Tensor> latents, size_t min_count) {
    if (latents.size() < min_count)
        throw ValidationError("compute_scale_factor: need at least " + std::to_string(min_count) +
                              " latents, got " + std::to_string(latents.size()));
    double sum = 0, sumsq = 0;
    size_t n = 0;
    for (const Tensor& t : latents) {
        for (size_t i = 0; i < t.size(); ++i) {
            double v = t.data()[i];
            sum += v;
            sumsq += v * v;
        }
        n += t.size();
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    if (!(var > 0)) throw NumericError("compute_scale_factor: latents have zero variance");
    return static_cast<float>(1.0 / std::sqrt(var));
}

}  // namespace td
