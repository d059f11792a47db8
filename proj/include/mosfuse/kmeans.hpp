#pragma once

// K-means quantizer: kmeans++ seeding, Lloyd iterations, deterministic given
// seed. Frames quantize to nearest-centroid unit indices, with optional
// collapsing of consecutive repeats.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/features.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/rng.hpp"

#include <json.hpp>

namespace mosfuse {

struct KMeansQuantizer {
    Mat centroids;  // K x F
    std::size_t k() const { return centroids.rows; }
    std::size_t dim() const { return centroids.cols; }
};

struct UnitSequence {
    std::vector<std::size_t> units;
};

namespace detail {

inline double sqdist(const Mat& a, std::size_t row_a, const Mat& b, std::size_t row_b) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols; ++c) {
        const double d = a(row_a, c) - b(row_b, c);
        s += d * d;
    }
    return s;
}

}  // namespace detail

// frames: pooled collection of frame vectors (rows), one matrix.
inline KMeansQuantizer kmeans_fit(const Mat& frames, std::size_t k, std::uint64_t seed,
                                  std::size_t max_iters = 300, double tol = 1e-6) {
    if (k < 2) throw Error("kmeans: K must be >= 2");
    const std::size_t n = frames.rows;
    if (n < k)
        throw Error("kmeans: fewer frames (" + std::to_string(n) + ") than clusters (" +
                    std::to_string(k) + ")");
    const std::size_t f_dim = frames.cols;
    Rng rng(seed);

    // kmeans++ seeding
    Mat centroids(k, f_dim);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    std::size_t first = static_cast<std::size_t>(rng.below(n));
    for (std::size_t c = 0; c < f_dim; ++c) centroids(0, c) = frames(first, c);
    for (std::size_t ci = 1; ci < k; ++ci) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = detail::sqdist(frames, i, centroids, ci - 1);
            if (d < d2[i]) d2[i] = d;
            total += d2[i];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            const double r = rng.uniform() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= r) { pick = i; break; }
            }
        } else {
            pick = static_cast<std::size_t>(rng.below(n));
        }
        for (std::size_t c = 0; c < f_dim; ++c) centroids(ci, c) = frames(pick, c);
    }

    // Lloyd iterations
    std::vector<std::size_t> assign(n, 0);
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t bi = 0;
            for (std::size_t ci = 0; ci < k; ++ci) {
                const double d = detail::sqdist(frames, i, centroids, ci);
                if (d < best) { best = d; bi = ci; }
            }
            assign[i] = bi;
        }
        Mat next(k, f_dim);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::size_t c = 0; c < f_dim; ++c) next(assign[i], c) += frames(i, c);
        }
        // reseed empty clusters to the point farthest from its centroid
        for (std::size_t ci = 0; ci < k; ++ci) {
            if (counts[ci] > 0) {
                for (std::size_t c = 0; c < f_dim; ++c)
                    next(ci, c) /= static_cast<double>(counts[ci]);
            } else {
                double far_d = -1.0;
                std::size_t far_i = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = detail::sqdist(frames, i, centroids, assign[i]);
                    if (d > far_d) { far_d = d; far_i = i; }
                }
                for (std::size_t c = 0; c < f_dim; ++c) next(ci, c) = frames(far_i, c);
            }
        }
        double movement = 0.0;
        for (std::size_t ci = 0; ci < k; ++ci)
            movement = std::max(movement, std::sqrt(detail::sqdist(next, ci, centroids, ci)));
        centroids = std::move(next);
        if (movement < tol) break;
    }
    return {std::move(centroids)};
}

// Nearest-centroid index per frame; ties resolve to the lowest index.
inline UnitSequence quantize(const KMeansQuantizer& q, const FrameFeatures& f,
                             bool dedup = true) {
    if (f.frames.cols != q.dim())
        throw Error("quantize: feature dim " + std::to_string(f.frames.cols) +
                    " does not match centroid dim " + std::to_string(q.dim()));
    UnitSequence out;
    out.units.reserve(f.frames.rows);
    for (std::size_t t = 0; t < f.frames.rows; ++t) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0;
        for (std::size_t ci = 0; ci < q.k(); ++ci) {
            const double d = detail::sqdist(f.frames, t, q.centroids, ci);
            if (d < best) { best = d; bi = ci; }
        }
        if (!dedup || out.units.empty() || out.units.back() != bi) out.units.push_back(bi);
    }
    return out;
}

inline void save_quantizer(const std::filesystem::path& path, const KMeansQuantizer& q) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["K"] = q.k();
    j["F"] = q.dim();
    nlohmann::json data = nlohmann::json::array();
    for (double x : q.centroids.data) data.push_back(double_to_text(x));
    j["centroids"] = std::move(data);
    atomic_write(path, j.dump() + "\n");
}

inline KMeansQuantizer load_quantizer(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    if (j.at("format_version").get<int>() != 1)
        throw Error(path.string() + ": unsupported quantizer format version");
    KMeansQuantizer q;
    q.centroids = Mat(j.at("K").get<std::size_t>(), j.at("F").get<std::size_t>());
    std::size_t i = 0;
    for (const auto& s : j.at("centroids")) {
        if (i >= q.centroids.data.size()) throw Error(path.string() + ": centroid size mismatch");
        q.centroids.data[i++] = text_to_double(s.get<std::string>());
    }
    if (i != q.centroids.data.size()) throw Error(path.string() + ": centroid size mismatch");
    return q;
}

}  // namespace mosfuse
