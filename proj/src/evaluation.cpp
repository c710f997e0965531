#include "td/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "td/rng.hpp"

namespace td {

namespace {

// Fixed seed so conv64 features are reproducible everywhere.
constexpr uint64_t kEmbedderSeed = 0x7ab1ed1f;

Tensor embed_weight(size_t oc, size_t ic, uint64_t salt) {
    Tensor w = random_normal({oc, ic, 3, 3}, Rng::mix(kEmbedderSeed, salt));
    float std = std::sqrt(2.0f / static_cast<float>(ic * 9));
    for (auto& v : w.vec()) v *= std;
    return w;
}

}  // namespace

FeatureExtractor FeatureExtractor::make(const std::string& preset) {
    FeatureExtractor fe;
    fe.preset_ = preset;
    if (preset == "conv64") {
        fe.dim_ = 64;
        fe.conv_weights_.push_back(embed_weight(16, 3, 1));
        fe.conv_weights_.push_back(embed_weight(32, 16, 2));
        fe.conv_weights_.push_back(embed_weight(64, 32, 3));
    } else if (preset == "pix16") {
        fe.dim_ = 256;
    } else {
        throw ConfigError("unknown feature extractor preset '" + preset +
                          "' (expected conv64 or pix16)");
    }
    return fe;
}

std::vector<float> FeatureExtractor::features(const Image& img) const {
    if (preset_ == "pix16") {
        Image small = resize_area(to_grayscale(img), 16, 16);
        return small.data;
    }
    Image rgb = to_rgb(img);
    if (rgb.height != 64 || rgb.width != 64) rgb = resize_bilinear(rgb, 64, 64);
    Tensor x = image_to_tensor(rgb);
    for (const Tensor& w : conv_weights_) x = silu(conv2d(x, w, Tensor(), 2, 1));
    // global average pool per channel
    size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    std::vector<float> out(c);
    for (size_t i = 0; i < c; ++i) {
        float s = 0;
        for (size_t j = 0; j < hw; ++j) s += x.data()[i * hw + j];
        out[i] = s / static_cast<float>(hw);
    }
    return out;
}

std::vector<std::vector<float>> extract_features(std::span<const Image> images,
                                                 const FeatureExtractor& extractor) {
    if (images.empty()) throw ValidationError("extract_features: empty image set");
    std::vector<std::vector<float>> out(images.size());
    for (size_t i = 0; i < images.size(); ++i) out[i] = extractor.features(images[i]);
    return out;
}

GaussianStats gaussian_stats(const std::vector<std::vector<float>>& features) {
    if (features.size() < 2) throw ValidationError("gaussian_stats: need at least 2 samples");
    size_t n = features.size(), d = features[0].size();
    for (const auto& row : features)
        if (row.size() != d) throw ShapeError("gaussian_stats: inconsistent feature dims");

    GaussianStats g;
    g.n = n;
    g.dim = d;
    g.low_sample_warning = n < d + 1;
    g.mean.assign(d, 0.0);
    for (const auto& row : features)
        for (size_t j = 0; j < d; ++j) g.mean[j] += row[j];
    for (auto& m : g.mean) m /= static_cast<double>(n);

    g.cov.assign(d * d, 0.0);
    std::vector<double> centered(d);
    for (const auto& row : features) {
        for (size_t j = 0; j < d; ++j) centered[j] = row[j] - g.mean[j];
        for (size_t i = 0; i < d; ++i) {
            double ci = centered[i];
            for (size_t j = i; j < d; ++j) g.cov[i * d + j] += ci * centered[j];
        }
    }
    double inv = 1.0 / static_cast<double>(n - 1);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = i; j < d; ++j) {
            g.cov[i * d + j] *= inv;
            g.cov[j * d + i] = g.cov[i * d + j];
        }
    return g;
}

void symmetric_eigen(std::vector<double> a, size_t d, std::vector<double>& eigenvalues,
                     std::vector<double>& eigenvectors) {
    eigenvectors.assign(d * d, 0.0);
    for (size_t i = 0; i < d; ++i) eigenvectors[i * d + i] = 1.0;

    auto off_norm = [&] {
        double s = 0;
        for (size_t i = 0; i < d; ++i)
            for (size_t j = i + 1; j < d; ++j) s += a[i * d + j] * a[i * d + j];
        return std::sqrt(2.0 * s);
    };
    double scale = 0;
    for (size_t i = 0; i < d; ++i) scale = std::max(scale, std::fabs(a[i * d + i]));
    scale = std::max(scale, off_norm());
    double tol = std::max(scale, 1.0) * 1e-14;

    for (int sweep = 0; sweep < 128 && off_norm() > tol; ++sweep) {
        for (size_t p = 0; p + 1 < d; ++p) {
            for (size_t q = p + 1; q < d; ++q) {
                double apq = a[p * d + q];
                if (std::fabs(apq) <= tol * 1e-2) continue;
                double app = a[p * d + p], aqq = a[q * d + q];
                double theta = 0.5 * (aqq - app) / apq;
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (size_t k = 0; k < d; ++k) {
                    double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < d; ++k) {
                    double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < d; ++k) {
                    double vkp = eigenvectors[k * d + p], vkq = eigenvectors[k * d + q];
                    eigenvectors[k * d + p] = c * vkp - s * vkq;
                    eigenvectors[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    eigenvalues.resize(d);
    for (size_t i = 0; i < d; ++i) eigenvalues[i] = a[i * d + i];

    // sort ascending, carrying eigenvectors (stored column-wise: v[k*d + i])
    std::vector<size_t> order(d);
    for (size_t i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return eigenvalues[x] < eigenvalues[y]; });
    std::vector<double> ev(d), vec(d * d);
    for (size_t i = 0; i < d; ++i) {
        ev[i] = eigenvalues[order[i]];
        for (size_t k = 0; k < d; ++k) vec[k * d + i] = eigenvectors[k * d + order[i]];
    }
    eigenvalues = std::move(ev);
    eigenvectors = std::move(vec);
}

namespace {

std::vector<double> matmul_d(const std::vector<double>& a, const std::vector<double>& b, size_t d) {
    std::vector<double> c(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t k = 0; k < d; ++k) {
            double av = a[i * d + k];
            for (size_t j = 0; j < d; ++j) c[i * d + j] += av * b[k * d + j];
        }
    return c;
}

// V diag(f(lambda)) V^T with negative eigenvalues clamped (count reported).
std::vector<double> eigen_apply_sqrt(const std::vector<double>& m, size_t d, int& clamped) {
    std::vector<double> evals, evecs;
    symmetric_eigen(m, d, evals, evecs);
    std::vector<double> out(d * d, 0.0);
    for (size_t k = 0; k < d; ++k) {
        double lambda = evals[k];
        if (lambda < 0) {
            ++clamped;
            lambda = 0;
        }
        double f = std::sqrt(lambda);
        for (size_t i = 0; i < d; ++i) {
            double vif = evecs[i * d + k] * f;
            for (size_t j = 0; j < d; ++j) out[i * d + j] += vif * evecs[j * d + k];
        }
    }
    return out;
}

}  // namespace

FrechetResult frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim != b.dim)
        throw ShapeError("frechet_distance: dims differ (" + std::to_string(a.dim) + " vs " +
                         std::to_string(b.dim) + ")");
    size_t d = a.dim;
    FrechetResult r;

    double mean_term = 0;
    for (size_t i = 0; i < d; ++i) {
        double diff = a.mean[i] - b.mean[i];
        mean_term += diff * diff;
    }

    // sqrt(Sa) via eigendecomposition, then the symmetric sandwich
    std::vector<double> sa_sqrt = eigen_apply_sqrt(a.cov, d, r.clamped_eigenvalues);
    std::vector<double> sandwich = matmul_d(matmul_d(sa_sqrt, b.cov, d), sa_sqrt, d);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = i + 1; j < d; ++j) {
            double sym = 0.5 * (sandwich[i * d + j] + sandwich[j * d + i]);
            sandwich[i * d + j] = sandwich[j * d + i] = sym;
        }
    std::vector<double> evals, evecs;
    symmetric_eigen(sandwich, d, evals, evecs);
    double trace_sqrt = 0;
    for (double lambda : evals) {
        if (lambda < 0) {
            ++r.clamped_eigenvalues;
            lambda = 0;
        }
        trace_sqrt += std::sqrt(lambda);
    }

    double trace_a = 0, trace_b = 0;
    for (size_t i = 0; i < d; ++i) {
        trace_a += a.cov[i * d + i];
        trace_b += b.cov[i * d + i];
    }
    double dist = mean_term + trace_a + trace_b - 2.0 * trace_sqrt;
    if (dist < 0) {
        if (dist < -1e-6)
            throw NumericError("frechet_distance: distance " + std::to_string(dist) +
                               " is negative beyond float dust");
        dist = 0;
    }
    r.distance = dist;
    return r;
}

namespace {

struct Interval {
    int lo, hi;
};

double interval_iou(Interval a, Interval b) {
    int inter = std::min(a.hi, b.hi) - std::max(a.lo, b.lo);
    if (inter <= 0) return 0.0;
    int uni = std::max(a.hi, b.hi) - std::min(a.lo, b.lo);
    return static_cast<double>(inter) / uni;
}

struct PrfResult {
    double precision, recall, f1;
};

PrfResult match_bands(const std::vector<Interval>& pred, const std::vector<Interval>& gt) {
    struct Pair {
        double iou;
        size_t p, g;
    };
    std::vector<Pair> pairs;
    for (size_t p = 0; p < pred.size(); ++p)
        for (size_t g = 0; g < gt.size(); ++g) {
            double iou = interval_iou(pred[p], gt[g]);
            if (iou >= 0.5) pairs.push_back({iou, p, g});
        }
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
    std::vector<bool> p_used(pred.size(), false), g_used(gt.size(), false);
    size_t matched = 0;
    for (const Pair& pr : pairs) {
        if (p_used[pr.p] || g_used[pr.g]) continue;
        p_used[pr.p] = g_used[pr.g] = true;
        ++matched;
    }
    PrfResult r{};
    r.precision = pred.empty() ? (gt.empty() ? 1.0 : 0.0)
                               : static_cast<double>(matched) / pred.size();
    r.recall = gt.empty() ? (pred.empty() ? 1.0 : 0.0) : static_cast<double>(matched) / gt.size();
    r.f1 = (r.precision + r.recall) > 0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                        : 0.0;
    return r;
}

std::vector<Interval> row_intervals(const std::vector<Box>& boxes) {
    std::vector<Interval> out;
    for (const Box& b : boxes) out.push_back({b.ymin, b.ymax});
    return out;
}
std::vector<Interval> col_intervals(const std::vector<Box>& boxes) {
    std::vector<Interval> out;
    for (const Box& b : boxes) out.push_back({b.xmin, b.xmax});
    return out;
}

}  // namespace

AdherenceReport structure_adherence(std::span<const Image> generated,
                                    std::span<const TableAnnotation> targets,
                                    const ExtractorConfig& cfg) {
    if (generated.size() != targets.size())
        throw ValidationError("structure_adherence: " + std::to_string(generated.size()) +
                              " images vs " + std::to_string(targets.size()) + " annotations");
    if (generated.empty()) throw ValidationError("structure_adherence: empty input");

    AdherenceReport report;
    report.samples.reserve(generated.size());
    for (size_t i = 0; i < generated.size(); ++i) {
        TableAnnotation pred = extract_structure(generated[i], cfg);
        PrfResult rows = match_bands(row_intervals(pred.rows), row_intervals(targets[i].rows));
        PrfResult cols =
            match_bands(col_intervals(pred.columns), col_intervals(targets[i].columns));
        AdherenceSample s;
        s.row_precision = rows.precision;
        s.row_recall = rows.recall;
        s.row_f1 = rows.f1;
        s.col_precision = cols.precision;
        s.col_recall = cols.recall;
        s.col_f1 = cols.f1;
        report.samples.push_back(s);
    }
    auto mean_of = [&](double AdherenceSample::* field) {
        double s = 0;
        for (const auto& x : report.samples) s += x.*field;
        return s / report.samples.size();
    };
    report.row_precision = mean_of(&AdherenceSample::row_precision);
    report.row_recall = mean_of(&AdherenceSample::row_recall);
    report.row_f1 = mean_of(&AdherenceSample::row_f1);
    report.col_precision = mean_of(&AdherenceSample::col_precision);
    report.col_recall = mean_of(&AdherenceSample::col_recall);
    report.col_f1 = mean_of(&AdherenceSample::col_f1);
    double s = 0;
    for (const auto& x : report.samples) s += x.f1();
    report.mean_f1 = s / report.samples.size();
    return report;
}

void export_detection_dataset(std::span<const Image> images,
                              std::span<const TableAnnotation> annotations,
                              const std::filesystem::path& dir) {
    if (images.size() != annotations.size())
        throw ValidationError("export_detection_dataset: " + std::to_string(images.size()) +
                              " images vs " + std::to_string(annotations.size()) + " annotations");
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    std::filesystem::create_directories(dir / "annotations", ec);

    std::ofstream index(dir / "index.jsonl", std::ios::trunc);
    if (!index) throw IoError("cannot write " + (dir / "index.jsonl").string());
    for (size_t i = 0; i < images.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "%06zu", i);
        std::string png_rel = std::string("images/") + stem + ".png";
        std::string xml_rel = std::string("annotations/") + stem + ".xml";
        write_png(images[i], dir / png_rel);
        std::string xml = voc_xml(annotations[i], std::string(stem) + ".png");
        std::ofstream xf(dir / xml_rel, std::ios::trunc);
        if (!xf) throw IoError("cannot write " + (dir / xml_rel).string());
        xf << xml;
        if (!xf) throw IoError("write failed: " + (dir / xml_rel).string());
        index << "{\"image\":\"" << png_rel << "\",\"annotation\":\"" << xml_rel
              << "\",\"width\":" << annotations[i].image_width
              << ",\"height\":" << annotations[i].image_height
              << ",\"rows\":" << annotations[i].rows.size()
              << ",\"columns\":" << annotations[i].columns.size() << "}\n";
    }
    if (!index) throw IoError("write failed: " + (dir / "index.jsonl").string());
}

}  // namespace td
