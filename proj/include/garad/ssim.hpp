#pragma once

#include "garad/image.hpp"

#include <vector>

namespace garad {

namespace detail {

inline std::vector<double> ssim_window(int size, double sigma) {
    std::vector<double> k(static_cast<size_t>(size));
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[static_cast<size_t>(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-region correlation; output is (W-K+1) x (H-K+1).
inline Image conv_valid(const Image& img, int c, const std::vector<double>& k) {
    const int ks = static_cast<int>(k.size());
    const int w = img.width(), h = img.height();
    Image tmp = Image::gray(w - ks + 1, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + ks <= w; ++x) {
            double acc = 0.0;
            for (int u = 0; u < ks; ++u) acc += k[static_cast<size_t>(u)] * img.at(x + u, y, c);
            tmp.at(x, y) = acc;
        }
    Image out = Image::gray(w - ks + 1, h - ks + 1);
    for (int y = 0; y + ks <= h; ++y)
        for (int x = 0; x < tmp.width(); ++x) {
            double acc = 0.0;
            for (int u = 0; u < ks; ++u) acc += k[static_cast<size_t>(u)] * tmp.at(x, y + u);
            out.at(x, y) = acc;
        }
    return out;
}

// Adjoint of conv_valid: scatters a valid-region map back to full size.
inline void conv_valid_adjoint(const Image& valid, const std::vector<double>& k, Image& full, int c) {
    const int ks = static_cast<int>(k.size());
    Image tmp = Image::gray(valid.width(), valid.height() + ks - 1);
    for (int y = 0; y < valid.height(); ++y)
        for (int x = 0; x < valid.width(); ++x) {
            const double v = valid.at(x, y);
            for (int u = 0; u < ks; ++u) tmp.at(x, y + u) += k[static_cast<size_t>(u)] * v;
        }
    for (int y = 0; y < tmp.height(); ++y)
        for (int x = 0; x < tmp.width(); ++x) {
            const double v = tmp.at(x, y);
            if (v == 0.0) continue;
            for (int u = 0; u < ks; ++u) full.at(x + u, y, c) += k[static_cast<size_t>(u)] * v;
        }
}

struct SsimMaps {
    Image mu_a, mu_b, raw_aa, raw_bb, raw_ab;
};

}  // namespace detail

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

/// Windowed SSIM (11x11 Gaussian window, sigma 1.5) averaged over valid
/// window positions and channels. Inputs on a [0, 1] nominal range.
/// If `grad_a` is non-null it receives dSSIM/da.
inline double ssim(const Image& a, const Image& b, Image* grad_a = nullptr) {
    if (!a.same_shape(b)) throw DataError("ssim: image dimensions differ");
    int win = 11;
    double sigma = 1.5;
    const int smallest = std::min(a.width(), a.height());
    if (smallest < win) {
        win = smallest % 2 == 1 ? smallest : smallest - 1;
        if (win < 3) throw DataError("ssim: image too small");
        sigma = 1.5 * win / 11.0;
    }
    const auto kernel = detail::ssim_window(win, sigma);
    if (grad_a) *grad_a = Image(a.width(), a.height(), a.channels(), 0.0);

    double total = 0.0;
    const int ch = a.channels();
    long valid_count = 0;
    for (int c = 0; c < ch; ++c) {
        Image aa = Image::gray(a.width(), a.height());
        Image bb = Image::gray(a.width(), a.height());
        Image ab = Image::gray(a.width(), a.height());
        for (int y = 0; y < a.height(); ++y)
            for (int x = 0; x < a.width(); ++x) {
                const double av = a.at(x, y, c), bv = b.at(x, y, c);
                aa.at(x, y) = av * av;
                bb.at(x, y) = bv * bv;
                ab.at(x, y) = av * bv;
            }
        const Image mu_a = detail::conv_valid(a, c, kernel);
        const Image mu_b = detail::conv_valid(b, c, kernel);
        const Image m_aa = detail::conv_valid(aa, 0, kernel);
        const Image m_bb = detail::conv_valid(bb, 0, kernel);
        const Image m_ab = detail::conv_valid(ab, 0, kernel);
        const int vw = mu_a.width(), vh = mu_a.height();
        valid_count += static_cast<long>(vw) * vh;

        Image g_mu = Image::gray(vw, vh);   // dS/d mu_a
        Image g_raa = Image::gray(vw, vh);  // dS/d E[a^2]
        Image g_rab = Image::gray(vw, vh);  // dS/d E[ab]
        for (int y = 0; y < vh; ++y)
            for (int x = 0; x < vw; ++x) {
                const double ma = mu_a.at(x, y), mb = mu_b.at(x, y);
                const double saa = m_aa.at(x, y) - ma * ma;
                const double sbb = m_bb.at(x, y) - mb * mb;
                const double sab = m_ab.at(x, y) - ma * mb;
                const double a1 = 2.0 * ma * mb + kSsimC1;
                const double a2 = 2.0 * sab + kSsimC2;
                const double b1 = ma * ma + mb * mb + kSsimC1;
                const double b2 = saa + sbb + kSsimC2;
                const double s = (a1 * a2) / (b1 * b2);
                total += s;
                if (grad_a) {
                    const double ds_da1 = a2 / (b1 * b2);
                    const double ds_da2 = a1 / (b1 * b2);
                    const double ds_db1 = -s / b1;
                    const double ds_db2 = -s / b2;
                    g_mu.at(x, y) = ds_da1 * 2.0 * mb + ds_db1 * 2.0 * ma + ds_da2 * (-2.0 * mb) +
                                    ds_db2 * (-2.0 * ma);
                    g_raa.at(x, y) = ds_db2;
                    g_rab.at(x, y) = ds_da2 * 2.0;
                }
            }
        if (grad_a) {
            // dS/da(q) = W*(g_mu) + 2 a(q) W*(g_raa) + b(q) W*(g_rab), W* the window adjoint
            Image acc_mu(a.width(), a.height(), 1, 0.0);
            Image acc_raa(a.width(), a.height(), 1, 0.0);
            Image acc_rab(a.width(), a.height(), 1, 0.0);
            detail::conv_valid_adjoint(g_mu, kernel, acc_mu, 0);
            detail::conv_valid_adjoint(g_raa, kernel, acc_raa, 0);
            detail::conv_valid_adjoint(g_rab, kernel, acc_rab, 0);
            for (int y = 0; y < a.height(); ++y)
                for (int x = 0; x < a.width(); ++x)
                    grad_a->at(x, y, c) = acc_mu.at(x, y) + 2.0 * a.at(x, y, c) * acc_raa.at(x, y) +
                                          b.at(x, y, c) * acc_rab.at(x, y);
        }
    }
    const double mean = total / static_cast<double>(valid_count);
    if (grad_a)
        for (auto& v : grad_a->data()) v /= static_cast<double>(valid_count);
    return mean;
}

/// Combined photometric loss: (1 - lambda) L1 + lambda (1 - SSIM).
/// If `grad` is non-null it receives the per-pixel derivative w.r.t. `rendered`.
inline double photometric_ssim_loss(const Image& rendered, const Image& gt, double lambda,
                                    Image* grad = nullptr) {
    if (!rendered.same_shape(gt)) throw DataError("photometric_ssim_loss: image dimensions differ");
    if (lambda < 0.0 || lambda > 1.0) throw Error("photometric_ssim_loss: lambda outside [0, 1]");
    const double n = static_cast<double>(rendered.size());
    double l1 = 0.0;
    for (size_t i = 0; i < rendered.data().size(); ++i) l1 += std::abs(rendered.data()[i] - gt.data()[i]);
    l1 /= n;

    Image ssim_grad;
    const double s = ssim(rendered, gt, grad ? &ssim_grad : nullptr);
    if (grad) {
        *grad = Image(rendered.width(), rendered.height(), rendered.channels(), 0.0);
        for (size_t i = 0; i < grad->data().size(); ++i) {
            const double diff = rendered.data()[i] - gt.data()[i];
            const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
            grad->data()[i] = (1.0 - lambda) * sign / n - lambda * ssim_grad.data()[i];
        }
    }
    return (1.0 - lambda) * l1 + lambda * (1.0 - s);
}

}  // namespace garad
