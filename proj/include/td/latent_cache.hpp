#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <utility>
#include <vector>

#include "td/annotations.hpp"
#include "td/image.hpp"
#include "td/tensor.hpp"
#include "td/vae.hpp"

namespace td {

// "TDLC" on-disk latent cache with random access by index.
//
// Layout (little-endian):
//   magic "TDLC", u8 version (=1), u8 has_masks, u64 count
//   per sample: image latent as (u32 ndim, u32 dims[ndim], f32 payload),
//               then the mask latent in the same form when has_masks = 1
//   index table: count x u64 absolute record offsets, then the table's own
//   offset as the trailing u64
class LatentCacheWriter {
  public:
    LatentCacheWriter(std::filesystem::path path, bool with_masks);
    ~LatentCacheWriter();
    LatentCacheWriter(const LatentCacheWriter&) = delete;
    LatentCacheWriter& operator=(const LatentCacheWriter&) = delete;

    // mask_latent must be defined iff the cache was opened with masks.
    void append(const Tensor& image_latent, const Tensor& mask_latent = Tensor());
    // Writes the index and atomically moves the file into place.
    void finish();

  private:
    std::filesystem::path path_;
    std::filesystem::path tmp_;
    std::ofstream out_;
    std::vector<uint64_t> offsets_;
    bool with_masks_;
    bool finished_ = false;
};

class LatentCache {
  public:
    static LatentCache open(const std::filesystem::path& path);

    size_t size() const { return offsets_.size(); }
    bool has_masks() const { return has_masks_; }
    const Shape& latent_shape() const { return latent_shape_; }

    // (image latent, mask latent); the mask tensor is undefined for
    // unconditional caches. Throws on out-of-range index.
    std::pair<Tensor, Tensor> load(size_t index) const;

  private:
    std::filesystem::path path_;
    mutable std::ifstream in_;
    std::vector<uint64_t> offsets_;
    bool has_masks_ = false;
    Shape latent_shape_;
};

// Encodes scaled mean-mode latents for every sample through the VAE and
// writes the cache. Masks are RGB-converted before encoding, matching the
// image path. Pass an empty mask span for an unconditional cache.
void cache_latents(std::span<const Image> images, std::span<const StructureMask> masks,
                   const Vae& vae, const std::filesystem::path& path);

}  // namespace td
