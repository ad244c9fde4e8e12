#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "looptrust/errors.hpp"
#include "looptrust/image.hpp"
#include "looptrust/persistence.hpp"
#include "looptrust/rng.hpp"

namespace looptrust {

/// Local polynomial (loess-style) smoother on a pixel grid.
///
/// Each output pixel is the value at that pixel of a weighted least-squares polynomial fitted
/// to its k = ceil(bandwidth * n) nearest pixels with tricube weights (1 - (d/D)^3)^3, where D
/// is the distance to the k-th nearest pixel. The smoother is linear in the data, so the fit
/// reduces to one equivalent-kernel row per pixel; those rows depend only on the geometry and are
/// computed once.
class LocalPolySmoother {
public:
    /// Dense float operators above this size are not materialized.
    static constexpr std::size_t kDenseLimitBytes = std::size_t{512} << 20;

    LocalPolySmoother(int width, int height, int degree, double bandwidth)
        : width_(width), height_(height), degree_(degree), bandwidth_(bandwidth) {
        if (width < 1 || height < 1) throw InvalidArgument("smoother needs a non-empty grid");
        if (degree < 0 || degree > 2) throw InvalidArgument("degree must be 0, 1 or 2");
        if (!(bandwidth > 0.0 && bandwidth <= 1.0)) throw InvalidArgument("bandwidth must lie in (0, 1]");
        const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
        k_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(bandwidth * static_cast<double>(n) - 1e-9)));
        n_coef_ = degree == 0 ? 1 : degree == 1 ? 3 : 6;
        build_rows();
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    int degree() const noexcept { return degree_; }
    double bandwidth() const noexcept { return bandwidth_; }
    std::size_t neighbours() const noexcept { return k_; }

    /// Smoothed image in double precision.
    GrayImage apply(const GrayImage& img) const {
        check_shape(img);
        std::vector<double> out(img.size());
        for (std::size_t p = 0; p < out.size(); ++p) {
            const Row& r = rows_[p];
            double s = 0.0;
            for (std::size_t j = 0; j < r.index.size(); ++j) s += r.weight[j] * img[r.index[j]];
            out[p] = s;
        }
        return GrayImage(width_, height_, std::move(out));
    }

    /// Whether apply_batch uses one dense matrix product.
    bool dense_available() const noexcept {
        const std::size_t n = rows_.size();
        return n * n * sizeof(float) <= kDenseLimitBytes;
    }

    /// Smooths every column of `columns` (n x B). Uses a dense single-precision operator when
    /// it fits in memory, otherwise the sparse rows.
    Eigen::MatrixXf apply_batch(const Eigen::MatrixXf& columns) const {
        const auto n = static_cast<Eigen::Index>(rows_.size());
        if (columns.rows() != n) throw InvalidArgument("batch has the wrong number of pixels");
        if (dense_available()) {
            std::call_once(dense_once_, [this] { build_dense(); });
            return (*dense_) * columns;
        }
        Eigen::MatrixXf out(n, columns.cols());
        for (Eigen::Index c = 0; c < columns.cols(); ++c)
            for (Eigen::Index p = 0; p < n; ++p) {
                const Row& r = rows_[static_cast<std::size_t>(p)];
                double s = 0.0;
                for (std::size_t j = 0; j < r.index.size(); ++j)
                    s += r.weight[j] * columns(static_cast<Eigen::Index>(r.index[j]), c);
                out(p, c) = static_cast<float>(s);
            }
        return out;
    }

private:
    struct Row {
        std::vector<std::uint32_t> index;
        std::vector<double> weight;
    };

    void check_shape(const GrayImage& img) const {
        if (img.width() != width_ || img.height() != height_)
            throw InvalidArgument("image shape does not match the smoother");
    }

    void monomials(double dx, double dy, double* m) const {
        m[0] = 1.0;
        if (degree_ >= 1) {
            m[1] = dx;
            m[2] = dy;
        }
        if (degree_ >= 2) {
            m[3] = dx * dx;
            m[4] = dx * dy;
            m[5] = dy * dy;
        }
    }

    void build_rows() {
        // All offsets sorted by distance; each pixel walks this list keeping in-bounds ones.
        std::vector<std::array<int, 3>> offsets;  // squared distance, dx, dy
        offsets.reserve(static_cast<std::size_t>(2 * width_ - 1) * static_cast<std::size_t>(2 * height_ - 1));
        for (int dy = -(height_ - 1); dy <= height_ - 1; ++dy)
            for (int dx = -(width_ - 1); dx <= width_ - 1; ++dx) offsets.push_back({dx * dx + dy * dy, dx, dy});
        std::sort(offsets.begin(), offsets.end());

        const std::size_t n = static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
        rows_.resize(n);
        std::vector<std::array<int, 2>> chosen;
        Eigen::MatrixXd xtwx(n_coef_, n_coef_);
        std::array<double, 6> m{};
        for (int y = 0; y < height_; ++y)
            for (int x = 0; x < width_; ++x) {
                chosen.clear();
                int d2_k = 0;
                for (const auto& o : offsets) {
                    const int nx = x + o[1], ny = y + o[2];
                    if (nx < 0 || ny < 0 || nx >= width_ || ny >= height_) continue;
                    chosen.push_back({o[1], o[2]});
                    if (chosen.size() == k_) {
                        d2_k = o[0];
                        break;
                    }
                }
                const double D = std::sqrt(static_cast<double>(d2_k));
                // points strictly inside D carry weight; scale coordinates by D for conditioning
                Row& row = rows_[static_cast<std::size_t>(y) * width_ + x];
                xtwx.setZero();
                std::vector<double> w;
                std::vector<std::array<int, 2>> support;
                for (const auto& c : chosen) {
                    const double d = std::sqrt(static_cast<double>(c[0] * c[0] + c[1] * c[1]));
                    const double u = D > 0.0 ? d / D : 1.0;
                    if (u >= 1.0) continue;
                    const double t = 1.0 - u * u * u;
                    w.push_back(t * t * t);
                    support.push_back(c);
                }
                if (support.size() < static_cast<std::size_t>(n_coef_))
                    throw RankDeficiency("neighbourhood of " + std::to_string(support.size()) +
                                         " weighted pixels cannot fit " + std::to_string(n_coef_) + " coefficients");
                for (std::size_t j = 0; j < support.size(); ++j) {
                    monomials(support[j][0] / D, support[j][1] / D, m.data());
                    for (int a = 0; a < n_coef_; ++a)
                        for (int b = 0; b < n_coef_; ++b) xtwx(a, b) += w[j] * m[static_cast<std::size_t>(a)] * m[static_cast<std::size_t>(b)];
                }
                Eigen::FullPivLU<Eigen::MatrixXd> lu(xtwx);
                lu.setThreshold(1e-10);
                if (lu.rank() < n_coef_)
                    throw RankDeficiency("local design matrix is rank deficient at pixel (" + std::to_string(x) + ", " +
                                         std::to_string(y) + ")");
                Eigen::VectorXd e1 = Eigen::VectorXd::Zero(n_coef_);
                e1(0) = 1.0;
                const Eigen::VectorXd a = lu.solve(e1);
                row.index.reserve(support.size());
                row.weight.reserve(support.size());
                for (std::size_t j = 0; j < support.size(); ++j) {
                    monomials(support[j][0] / D, support[j][1] / D, m.data());
                    double l = 0.0;
                    for (int c = 0; c < n_coef_; ++c) l += a(c) * m[static_cast<std::size_t>(c)];
                    row.index.push_back(static_cast<std::uint32_t>((y + support[j][1]) * width_ + x + support[j][0]));
                    row.weight.push_back(w[j] * l);
                }
            }
    }

    void build_dense() const {
        const auto n = static_cast<Eigen::Index>(rows_.size());
        auto s = std::make_unique<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(n, n);
        s->setZero();
        for (Eigen::Index p = 0; p < n; ++p) {
            const Row& r = rows_[static_cast<std::size_t>(p)];
            for (std::size_t j = 0; j < r.index.size(); ++j)
                (*s)(p, static_cast<Eigen::Index>(r.index[j])) = static_cast<float>(r.weight[j]);
        }
        dense_ = std::move(s);
    }

    int width_, height_, degree_;
    double bandwidth_;
    std::size_t k_ = 0;
    int n_coef_ = 1;
    std::vector<Row> rows_;
    mutable std::once_flag dense_once_;
    mutable std::unique_ptr<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dense_;
};

inline GrayImage local_poly_smooth(const GrayImage& img, int degree = 2, double bandwidth = 0.3) {
    return LocalPolySmoother(img.width(), img.height(), degree, bandwidth).apply(img);
}

/// Resamples intensities with replacement inside each stratum. Strata are the labelled regions;
/// edge pixels and unlabelled pixels together form one extra stratum.
inline GrayImage stratified_bootstrap(const GrayImage& img, const PartitionLabeling& lab, std::uint64_t seed) {
    if (lab.size() != img.size()) throw InvalidArgument("labeling does not match the image");
    constexpr std::uint64_t kEdgeStratum = std::uint64_t{1} << 40;
    auto stratum = [&](std::size_t i) -> std::uint64_t {
        if (lab.is_edge(i) || lab.label[i] == PartitionLabeling::kUnlabeled) return kEdgeStratum;
        return lab.label[i];
    };
    std::map<std::uint64_t, std::size_t> slot;
    std::vector<std::size_t> which(img.size());
    std::vector<std::vector<double>> pools;
    for (std::size_t i = 0; i < img.size(); ++i) {
        auto [it, fresh] = slot.try_emplace(stratum(i), pools.size());
        if (fresh) pools.emplace_back();
        which[i] = it->second;
        pools[it->second].push_back(img[i]);
    }
    std::vector<std::uniform_int_distribution<std::size_t>> pick;
    for (const auto& p : pools) pick.emplace_back(0, p.size() - 1);

    Rng rng = make_rng(seed);
    std::vector<double> out(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = pools[which[i]][pick[which[i]](rng)];
    return GrayImage(img.width(), img.height(), std::move(out));
}

struct BootstrapBand {
    double c_n = 0.0;
    double alpha = 0.05;
    int B = 0;
    std::vector<double> distances;  // in replicate order
};

/// (1 - alpha) order statistic: the ceil((1 - alpha) B)-th smallest distance.
inline double band_quantile(std::vector<double> distances, double alpha) {
    if (distances.empty()) throw InvalidArgument("no bootstrap distances");
    std::sort(distances.begin(), distances.end());
    const auto B = static_cast<double>(distances.size());
    auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * B - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, distances.size());
    return distances[rank - 1];
}

/// Bootstrap band for the smoothed image: sup-norm distances between smoothed bootstrap images
/// and the smoothed original, and their (1 - alpha) quantile. Replicate b uses the seed
/// split_seed(seed, {b}), so the band does not depend on evaluation order.
inline BootstrapBand stda_band(const GrayImage& img, const PartitionLabeling& lab, const LocalPolySmoother& smoother,
                               int B, double alpha, std::uint64_t seed, int batch = 100) {
    if (B < 1) throw InvalidArgument("B must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    BootstrapBand band;
    band.alpha = alpha;
    band.B = B;
    band.distances.reserve(static_cast<std::size_t>(B));
    const auto n = static_cast<Eigen::Index>(img.size());
    for (int start = 0; start < B; start += batch) {
        const int cols = std::min(batch, B - start);
        Eigen::MatrixXf diff(n, cols);
        for (int c = 0; c < cols; ++c) {
            const GrayImage boot = stratified_bootstrap(img, lab, split_seed(seed, {static_cast<std::uint64_t>(start + c)}));
            for (Eigen::Index p = 0; p < n; ++p)
                diff(p, c) = static_cast<float>(boot[static_cast<std::size_t>(p)] - img[static_cast<std::size_t>(p)]);
        }
        const Eigen::MatrixXf smoothed = smoother.apply_batch(diff);
        for (int c = 0; c < cols; ++c) band.distances.push_back(static_cast<double>(smoothed.col(c).cwiseAbs().maxCoeff()));
    }
    band.c_n = band_quantile(band.distances, alpha);
    return band;
}

inline BootstrapBand stda_band(const GrayImage& img, const PartitionLabeling& lab, int degree, double bandwidth, int B,
                               double alpha, std::uint64_t seed) {
    return stda_band(img, lab, LocalPolySmoother(img.width(), img.height(), degree, bandwidth), B, alpha, seed);
}

struct SquareRegion {
    double death = 0.0;
    double birth = 0.0;
    double c_n = 0.0;
    bool significant = false;

    double area() const { return 4.0 * c_n * c_n; }
    bool contains(double d, double b) const { return std::abs(d - death) <= c_n && std::abs(b - birth) <= c_n; }
};

/// Square of half-side c_n around every H1 point; a point is significant when its distance to
/// the diagonal, (birth - death) / 2, exceeds c_n.
inline std::vector<SquareRegion> band_to_regions(const BootstrapBand& band, const PersistenceDiagram& diagram) {
    std::vector<SquareRegion> out;
    for (const auto& p : diagram.points) {
        if (p.dim != 1 || p.essential) continue;
        out.push_back({p.death, p.birth, band.c_n, (p.birth - p.death) / 2.0 > band.c_n});
    }
    return out;
}

}  // namespace looptrust
