#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "td/annotations.hpp"
#include "td/image.hpp"
#include "td/tensor.hpp"

namespace td {

// Deterministic image embedders for the Fréchet metric.
//  - "conv64": three stride-2 SiLU conv stages with fixed-seed random weights
//    and global average pooling; 64-d. The seed is a compile-time constant, so
//    features are identical across runs and machines.
//  - "pix16": grayscale 16x16 area downsample, flattened; 256-d.
class FeatureExtractor {
  public:
    static FeatureExtractor make(const std::string& preset);

    const std::string& preset() const { return preset_; }
    size_t dim() const { return dim_; }
    std::vector<float> features(const Image& img) const;

  private:
    std::string preset_;
    size_t dim_ = 0;
    std::vector<Tensor> conv_weights_;  // conv64 only
};

// Row i = features of image i; deterministic; throws on an empty set.
std::vector<std::vector<float>> extract_features(std::span<const Image> images,
                                                 const FeatureExtractor& extractor);

struct GaussianStats {
    std::vector<double> mean;  // d
    std::vector<double> cov;   // d x d row-major, symmetric, unbiased (n-1)
    size_t n = 0;
    size_t dim = 0;
    bool low_sample_warning = false;  // n < dim + 1: covariance is rank-deficient
};

GaussianStats gaussian_stats(const std::vector<std::vector<float>>& features);

struct FrechetResult {
    double distance = 0.0;        // squared Frechet distance (FID convention)
    int clamped_eigenvalues = 0;  // negative eigenvalues clamped to 0 inside the sqrt
};

// d^2 = |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), the matrix square
// root taken via eigendecomposition of the symmetric sandwich
// Sa^{1/2} Sb Sa^{1/2} with negative eigenvalues clamped to 0, and the final
// value clamped at 0 against float dust.
FrechetResult frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major d x d).
// Eigenvalues ascending; eigenvectors[k*d..] is the k-th eigenvector.
void symmetric_eigen(std::vector<double> a, size_t d, std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors);

struct AdherenceSample {
    double row_precision = 0, row_recall = 0, row_f1 = 0;
    double col_precision = 0, col_recall = 0, col_f1 = 0;
    double f1() const { return 0.5 * (row_f1 + col_f1); }
};

struct AdherenceReport {
    std::vector<AdherenceSample> samples;
    double row_precision = 0, row_recall = 0, row_f1 = 0;
    double col_precision = 0, col_recall = 0, col_f1 = 0;
    double mean_f1 = 0;  // corpus mean of per-sample (row_f1 + col_f1)/2
};

// Runs extract_structure on each generated image and matches predicted bands
// to the target annotation greedily by descending 1-D interval IoU,
// one-to-one, at threshold 0.5.
AdherenceReport structure_adherence(std::span<const Image> generated,
                                    std::span<const TableAnnotation> targets,
                                    const ExtractorConfig& cfg = {});

// dir/images/NNNNNN.png, dir/annotations/NNNNNN.xml (the schema
// parse_voc_xml reads), and dir/index.jsonl with one line per sample.
void export_detection_dataset(std::span<const Image> images,
                              std::span<const TableAnnotation> annotations,
                              const std::filesystem::path& dir);

}  // namespace td
