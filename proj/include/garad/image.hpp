#pragma once

#include "garad/core.hpp"

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

namespace garad {

/// Row-major raster with 1 (gray/depth) or 3 (RGB) channels, double precision.
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<size_t>(width) * height * channels, fill) {}

    static Image gray(int w, int h, double fill = 0.0) { return Image(w, h, 1, fill); }
    static Image rgb(int w, int h, double fill = 0.0) { return Image(w, h, 3, fill); }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    bool empty() const { return data_.empty(); }
    size_t size() const { return data_.size(); }

    double& at(int x, int y, int c = 0) { return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c]; }
    double at(int x, int y, int c = 0) const { return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Image& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    /// Bilinear sample with replicate border; (x, y) in pixel coordinates.
    double sample(double x, double y, int c = 0) const {
        x = std::clamp(x, 0.0, width_ - 1.0);
        y = std::clamp(y, 0.0, height_ - 1.0);
        const int x0 = std::min(static_cast<int>(x), width_ - 2 >= 0 ? width_ - 2 : 0);
        const int y0 = std::min(static_cast<int>(y), height_ - 2 >= 0 ? height_ - 2 : 0);
        const int x1 = std::min(x0 + 1, width_ - 1);
        const int y1 = std::min(y0 + 1, height_ - 1);
        const double ax = x - x0;
        const double ay = y - y0;
        return (1 - ax) * (1 - ay) * at(x0, y0, c) + ax * (1 - ay) * at(x1, y0, c) +
               (1 - ax) * ay * at(x0, y1, c) + ax * ay * at(x1, y1, c);
    }

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

/// Rec.601 luma of an RGB image.
inline Image luma(const Image& rgb) {
    if (rgb.channels() == 1) return rgb;
    Image g = Image::gray(rgb.width(), rgb.height());
    for (int y = 0; y < rgb.height(); ++y)
        for (int x = 0; x < rgb.width(); ++x)
            g.at(x, y) = 0.299 * rgb.at(x, y, 0) + 0.587 * rgb.at(x, y, 1) + 0.114 * rgb.at(x, y, 2);
    return g;
}

namespace detail {
// 5-tap binomial-free Gaussian, sigma = 1.0, normalized.
inline const std::array<double, 5>& gauss5() {
    static const std::array<double, 5> k = [] {
        std::array<double, 5> t{};
        double s = 0.0;
        for (int i = -2; i <= 2; ++i) {
            t[i + 2] = std::exp(-0.5 * i * i);
            s += t[i + 2];
        }
        for (auto& v : t) v /= s;
        return t;
    }();
    return k;
}
}  // namespace detail

/// Separable 5x5 Gaussian blur (sigma 1.0) with replicate border.
inline Image gaussian_blur5(const Image& img) {
    const auto& k = detail::gauss5();
    const int w = img.width(), h = img.height(), ch = img.channels();
    Image tmp(w, h, ch), out(w, h, ch);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -2; i <= 2; ++i) acc += k[i + 2] * img.at(std::clamp(x + i, 0, w - 1), y, c);
                tmp.at(x, y, c) = acc;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double acc = 0.0;
                for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(x, std::clamp(y + i, 0, h - 1), c);
                out.at(x, y, c) = acc;
            }
    return out;
}

/// Keeps every other sample starting at (0, 0); output is ceil(input / 2).
inline Image decimate2(const Image& img) {
    const int w = (img.width() + 1) / 2, h = (img.height() + 1) / 2;
    Image out(w, h, img.channels());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels(); ++c) out.at(x, y, c) = img.at(2 * x, 2 * y, c);
    return out;
}

// ---------------------------------------------------------------------------
// PPM (P6, 8-bit RGB) and PGM (P5, 16-bit gray) I/O.
// ---------------------------------------------------------------------------

inline void write_ppm(const Image& img, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_ppm: cannot open " + path.string());
    f << "P6\n" << img.width() << " " << img.height() << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width()) * 3);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = img.channels() == 3 ? img.at(x, y, c) : img.at(x, y);
                row[x * 3 + c] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw DataError("write_ppm: write failed for " + path.string());
}

namespace detail {
inline void skip_pnm_whitespace(std::istream& in) {
    while (true) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            break;
        }
    }
}

inline int read_pnm_int(std::istream& in) {
    skip_pnm_whitespace(in);
    int v = 0;
    in >> v;
    return v;
}
}  // namespace detail

inline Image read_ppm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_ppm: cannot open " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "P6") throw DataError("read_ppm: not a P6 file: " + path.string());
    const int w = detail::read_pnm_int(f);
    const int h = detail::read_pnm_int(f);
    const int maxval = detail::read_pnm_int(f);
    f.get();
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("read_ppm: unsupported header in " + path.string());
    Image img = Image::rgb(w, h);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw DataError("read_ppm: truncated file " + path.string());
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[x * 3 + c] / 255.0;
    }
    return img;
}

/// Writes a metric depth image as 16-bit PGM, `scale` units per meter.
inline void write_pgm16(const Image& depth, const std::filesystem::path& path, double scale) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_pgm16: cannot open " + path.string());
    f << "P5\n" << depth.width() << " " << depth.height() << "\n65535\n";
    std::vector<uint8_t> row(static_cast<size_t>(depth.width()) * 2);
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            const double v = std::clamp(depth.at(x, y) * scale, 0.0, 65535.0);
            const auto u = static_cast<uint16_t>(std::lround(v));
            row[x * 2] = static_cast<uint8_t>(u >> 8);  // big-endian per PGM convention
            row[x * 2 + 1] = static_cast<uint8_t>(u & 0xff);
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw DataError("write_pgm16: write failed for " + path.string());
}

inline Image read_pgm16(const std::filesystem::path& path, double scale) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_pgm16: cannot open " + path.string());
    std::string magic;
    f >> magic;
    if (magic != "P5") throw DataError("read_pgm16: not a P5 file: " + path.string());
    const int w = detail::read_pnm_int(f);
    const int h = detail::read_pnm_int(f);
    const int maxval = detail::read_pnm_int(f);
    f.get();
    if (w <= 0 || h <= 0 || maxval != 65535) throw DataError("read_pgm16: unsupported header in " + path.string());
    Image img = Image::gray(w, h);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 2);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f) throw DataError("read_pgm16: truncated file " + path.string());
        for (int x = 0; x < w; ++x) {
            const uint16_t u = static_cast<uint16_t>((row[x * 2] << 8) | row[x * 2 + 1]);
            img.at(x, y) = u / scale;
        }
    }
    return img;
}

}  // namespace garad
