#include "td/latent_cache.hpp"

#include <cstring>

#include "td/errors.hpp"

namespace td {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'L', 'C'};
constexpr uint8_t kVersion = 1;
constexpr size_t kHeaderSize = 4 + 1 + 1 + 8;

template <class T>
void write_int(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_latent(std::ofstream& out, const Tensor& t) {
    write_int<uint32_t>(out, static_cast<uint32_t>(t.ndim()));
    for (size_t d : t.shape()) write_int<uint32_t>(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
}

template <class T>
T read_int(std::ifstream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw IoError(std::string("corrupt latent cache: truncated while reading ") + what);
    return v;
}

Tensor read_latent(std::ifstream& in) {
    uint32_t ndim = read_int<uint32_t>(in, "latent rank");
    if (ndim == 0 || ndim > 8) throw IoError("corrupt latent cache: bad latent rank");
    Shape shape(ndim);
    for (auto& d : shape) d = read_int<uint32_t>(in, "latent dim");
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw IoError("corrupt latent cache: truncated latent payload");
    return t;
}

}  // namespace

LatentCacheWriter::LatentCacheWriter(std::filesystem::path path, bool with_masks)
    : path_(std::move(path)), with_masks_(with_masks) {
    tmp_ = path_;
    tmp_ += ".tmp";
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open latent cache for writing: " + tmp_.string());
    out_.write(kMagic, 4);
    write_int<uint8_t>(out_, kVersion);
    write_int<uint8_t>(out_, with_masks_ ? 1 : 0);
    write_int<uint64_t>(out_, 0);  // count patched in finish()
}

LatentCacheWriter::~LatentCacheWriter() {
    if (!finished_) {
        out_.close();
        std::error_code ec;
        std::filesystem::remove(tmp_, ec);
    }
}

void LatentCacheWriter::append(const Tensor& image_latent, const Tensor& mask_latent) {
    if (finished_) throw IoError("latent cache already finished");
    if (with_masks_ != mask_latent.defined())
        throw ValidationError(with_masks_ ? "latent cache expects a mask latent per sample"
                                          : "unconditional latent cache got a mask latent");
    offsets_.push_back(static_cast<uint64_t>(out_.tellp()));
    write_latent(out_, image_latent);
    if (with_masks_) write_latent(out_, mask_latent);
    if (!out_) throw IoError("write failed: " + tmp_.string());
}

void LatentCacheWriter::finish() {
    if (finished_) return;
    uint64_t index_off = static_cast<uint64_t>(out_.tellp());
    for (uint64_t off : offsets_) write_int<uint64_t>(out_, off);
    write_int<uint64_t>(out_, index_off);
    out_.seekp(6);
    write_int<uint64_t>(out_, static_cast<uint64_t>(offsets_.size()));
    out_.close();
    if (out_.fail()) throw IoError("write failed: " + tmp_.string());
    std::filesystem::rename(tmp_, path_);
    finished_ = true;
}

LatentCache LatentCache::open(const std::filesystem::path& path) {
    LatentCache cache;
    cache.path_ = path;
    cache.in_.open(path, std::ios::binary);
    if (!cache.in_) throw IoError("cannot open latent cache: " + path.string());

    char magic[4];
    cache.in_.read(magic, 4);
    if (!cache.in_ || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("corrupt latent cache (bad magic): " + path.string());
    uint8_t version = read_int<uint8_t>(cache.in_, "version");
    if (version != kVersion) throw IoError("unsupported latent cache version");
    cache.has_masks_ = read_int<uint8_t>(cache.in_, "mask flag") != 0;
    uint64_t count = read_int<uint64_t>(cache.in_, "count");

    cache.in_.seekg(0, std::ios::end);
    uint64_t file_size = static_cast<uint64_t>(cache.in_.tellg());
    uint64_t expected_tail = count * 8 + 8;
    if (file_size < kHeaderSize + expected_tail)
        throw IoError("corrupt latent cache (too short for its index): " + path.string());
    cache.in_.seekg(static_cast<std::streamoff>(file_size - 8));
    uint64_t index_off = read_int<uint64_t>(cache.in_, "index offset");
    if (index_off + expected_tail != file_size)
        throw IoError("corrupt latent cache (index offset mismatch): " + path.string());
    cache.in_.seekg(static_cast<std::streamoff>(index_off));
    cache.offsets_.resize(count);
    for (auto& off : cache.offsets_) {
        off = read_int<uint64_t>(cache.in_, "record offset");
        if (off < kHeaderSize || off >= index_off)
            throw IoError("corrupt latent cache (record offset out of range): " + path.string());
    }
    if (count > 0) {
        auto [img, mask] = cache.load(0);
        (void)mask;
        cache.latent_shape_ = img.shape();
    }
    return cache;
}

std::pair<Tensor, Tensor> LatentCache::load(size_t index) const {
    if (index >= offsets_.size())
        throw ValidationError("latent cache index " + std::to_string(index) +
                              " out of range (size " + std::to_string(offsets_.size()) + ")");
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(offsets_[index]));
    Tensor img = read_latent(in_);
    Tensor mask;
    if (has_masks_) mask = read_latent(in_);
    return {std::move(img), std::move(mask)};
}

void cache_latents(std::span<const Image> images, std::span<const StructureMask> masks,
                   const Vae& vae, const std::filesystem::path& path) {
    bool with_masks = !masks.empty();
    if (with_masks && masks.size() != images.size())
        throw ValidationError("cache_latents: " + std::to_string(images.size()) + " images vs " +
                              std::to_string(masks.size()) + " masks");
    LatentCacheWriter writer(path, with_masks);
    for (size_t i = 0; i < images.size(); ++i) {
        Tensor x = image_to_tensor(images[i].channels == 3 ? images[i] : to_rgb(images[i]));
        Tensor z = vae.scale_latent(vae.encode(x, EncodeMode::mean));
        if (with_masks) {
            Tensor mx = image_to_tensor(mask_to_rgb(masks[i]));
            Tensor mz = vae.scale_latent(vae.encode(mx, EncodeMode::mean));
            writer.append(z, mz);
        } else {
            writer.append(z);
        }
    }
    writer.finish();
}

}  // namespace td
