#include "fewshot/plot.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fewshot/util.hpp"

namespace fewshot {

namespace {

void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_be32(out, static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    put_be32(out, static_cast<std::uint32_t>(
                      crc32(0, reinterpret_cast<const Bytef*>(body.data()), body.size())));
}

struct Canvas {
    int w, h;
    std::vector<std::uint8_t> rgb;
    Canvas(int width, int height) : w(width), h(height), rgb(width * height * 3, 255) {}
    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        auto* p = rgb.data() + (static_cast<std::size_t>(y) * w + x) * 3;
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
    void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
};

const std::uint8_t kPalette[][3] = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},
    {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
};

}  // namespace

void write_line_plot_png(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                         int width, int height) {
    Canvas cv(width, height);
    const int margin = 30;
    const int px0 = margin, px1 = width - 10, py0 = 10, py1 = height - margin;

    // Axes.
    cv.line(px0, py1, px1, py1, 0, 0, 0);
    cv.line(px0, py0, px0, py1, 0, 0, 0);

    double ymin = 0.0, ymax = 1.0;
    std::size_t nmax = 2;
    bool any = false;
    for (const auto& s : series)
        for (double v : s.y) {
            if (!any) {
                ymin = ymax = v;
                any = true;
            }
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    for (const auto& s : series) nmax = std::max(nmax, s.y.size());
    if (ymax - ymin < 1e-12) {
        ymax += 0.5;
        ymin -= 0.5;
    }

    auto xpix = [&](std::size_t i) {
        return px0 + static_cast<int>(std::lround(static_cast<double>(i) /
                                                  static_cast<double>(nmax - 1) * (px1 - px0)));
    };
    auto ypix = [&](double v) {
        return py1 - static_cast<int>(std::lround((v - ymin) / (ymax - ymin) * (py1 - py0)));
    };

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& col = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        const auto& y = series[si].y;
        for (std::size_t i = 1; i < y.size(); ++i)
            cv.line(xpix(i - 1), ypix(y[i - 1]), xpix(i), ypix(y[i]), col[0], col[1], col[2]);
    }

    // Raw scanlines with filter byte 0, deflate-compressed.
    std::string raw;
    raw.reserve(static_cast<std::size_t>(height) * (1 + width * 3));
    for (int y = 0; y < height; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(cv.rgb.data() + static_cast<std::size_t>(y) * width * 3),
                   static_cast<std::size_t>(width) * 3);
    }
    uLongf comp_len = compressBound(raw.size());
    std::vector<Bytef> comp(comp_len);
    if (compress(comp.data(), &comp_len, reinterpret_cast<const Bytef*>(raw.data()), raw.size()) !=
        Z_OK)
        throw IoError("png: deflate failed");

    std::string png("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(width));
    put_be32(ihdr, static_cast<std::uint32_t>(height));
    ihdr += std::string("\x08\x02\x00\x00\x00", 5);  // 8-bit RGB
    put_chunk(png, "IHDR", ihdr);
    put_chunk(png, "IDAT", std::string(reinterpret_cast<char*>(comp.data()), comp_len));
    put_chunk(png, "IEND", "");
    write_file_atomic(path, png);
}

}  // namespace fewshot
