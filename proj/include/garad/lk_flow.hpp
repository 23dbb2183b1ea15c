#pragma once

#include "garad/image.hpp"

#include <vector>

namespace garad {

struct LkOptions {
    int window = 15;          // odd side length of the integration window
    int levels = 3;           // pyramid octaves
    int max_iterations = 30;  // per level
    double epsilon = 0.01;    // convergence threshold, pixels
    double min_eig_threshold = 1e-7;  // on the structure tensor normalized by window area
};

struct FlowVector {
    Vec2 flow = Vec2::Zero();
    bool valid = false;
};

namespace detail {

inline std::vector<Image> image_pyramid(const Image& img, int levels) {
    std::vector<Image> pyr;
    pyr.push_back(img);
    for (int l = 1; l < levels; ++l) {
        const Image& prev = pyr.back();
        if (prev.width() < 5 || prev.height() < 5) break;
        pyr.push_back(decimate2(gaussian_blur5(prev)));
    }
    return pyr;
}

inline double sample_dx(const Image& img, double x, double y) {
    return 0.5 * (img.sample(x + 1.0, y) - img.sample(x - 1.0, y));
}

inline double sample_dy(const Image& img, double x, double y) {
    return 0.5 * (img.sample(x, y + 1.0) - img.sample(x, y - 1.0));
}

}  // namespace detail

/// Sparse pyramidal Lucas-Kanade flow from img_prev to img_cur at the given
/// points (in img_prev coordinates). Per-point failures (window out of
/// bounds, near-singular structure tensor, no convergence inside bounds) set
/// the validity flag instead of erroring.
inline std::vector<FlowVector> lk_flow(const Image& img_prev, const Image& img_cur,
                                       const std::vector<Vec2>& points, const LkOptions& opts = {}) {
    if (img_prev.width() != img_cur.width() || img_prev.height() != img_cur.height())
        throw DataError("lk_flow: image dimensions differ");
    if (img_prev.channels() != 1 || img_cur.channels() != 1)
        throw DataError("lk_flow: images must be single-channel");

    const auto pyr_prev = detail::image_pyramid(img_prev, opts.levels);
    const auto pyr_cur = detail::image_pyramid(img_cur, opts.levels);
    const int levels = static_cast<int>(pyr_prev.size());
    const int half = opts.window / 2;
    const double area = static_cast<double>(opts.window) * opts.window;

    std::vector<FlowVector> out(points.size());
    for (size_t pi = 0; pi < points.size(); ++pi) {
        Vec2 g = Vec2::Zero();  // flow guess carried across levels, in level coordinates
        bool ok = true;
        for (int level = levels - 1; level >= 0 && ok; --level) {
            const Image& ip = pyr_prev[static_cast<size_t>(level)];
            const Image& ic = pyr_cur[static_cast<size_t>(level)];
            const double scale = static_cast<double>(1 << level);
            const Vec2 p = points[pi] / scale;

            const double margin = half + 1.0;
            if (p.x() < margin || p.y() < margin || p.x() > ip.width() - 1 - margin ||
                p.y() > ip.height() - 1 - margin) {
                // template window leaves the image at this level; keep coarser estimate
                if (level == levels - 1) ok = false;
                g *= 2.0;
                continue;
            }

            // structure tensor and template from the previous image, fixed per level
            Mat2 tensor = Mat2::Zero();
            std::vector<double> tmpl(area), gx(area), gy(area);
            size_t idx = 0;
            for (int wy = -half; wy <= half; ++wy)
                for (int wx = -half; wx <= half; ++wx, ++idx) {
                    const double x = p.x() + wx, y = p.y() + wy;
                    tmpl[idx] = ip.sample(x, y);
                    gx[idx] = detail::sample_dx(ip, x, y);
                    gy[idx] = detail::sample_dy(ip, x, y);
                    tensor(0, 0) += gx[idx] * gx[idx];
                    tensor(0, 1) += gx[idx] * gy[idx];
                    tensor(1, 1) += gy[idx] * gy[idx];
                }
            tensor(1, 0) = tensor(0, 1);

            const double tr = tensor(0, 0) + tensor(1, 1);
            const double det = tensor(0, 0) * tensor(1, 1) - tensor(0, 1) * tensor(0, 1);
            const double min_eig = 0.5 * (tr - std::sqrt(std::max(0.0, tr * tr - 4.0 * det)));
            if (min_eig / area < opts.min_eig_threshold) {
                ok = false;
                break;
            }
            const Mat2 tensor_inv = tensor.inverse();

            Vec2 d = Vec2::Zero();
            for (int it = 0; it < opts.max_iterations; ++it) {
                const Vec2 q = p + g + d;
                if (q.x() < 1.0 || q.y() < 1.0 || q.x() > ic.width() - 2.0 - half ||
                    q.y() > ic.height() - 2.0 - half) {
                    if (q.x() < -half || q.y() < -half || q.x() > ic.width() - 1.0 + half ||
                        q.y() > ic.height() - 1.0 + half) {
                        ok = false;  // left the image entirely
                        break;
                    }
                }
                Vec2 b = Vec2::Zero();
                idx = 0;
                for (int wy = -half; wy <= half; ++wy)
                    for (int wx = -half; wx <= half; ++wx, ++idx) {
                        const double di = tmpl[idx] - ic.sample(q.x() + wx, q.y() + wy);
                        b.x() += di * gx[idx];
                        b.y() += di * gy[idx];
                    }
                const Vec2 delta = tensor_inv * b;
                d += delta;
                if (delta.norm() < opts.epsilon) break;
            }
            if (!ok) break;
            g = level > 0 ? Vec2(2.0 * (g + d)) : Vec2(g + d);
        }
        out[pi].valid = ok;
        if (ok) out[pi].flow = g;
    }
    return out;
}

}  // namespace garad
