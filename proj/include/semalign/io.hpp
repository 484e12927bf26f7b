#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "semalign/error.hpp"
#include "semalign/image.hpp"
#include "semalign/rng.hpp"

namespace semalign {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through a sibling temp file and renames, so readers never see a torn file.
inline void write_text_atomic(const fs::path& path, std::string_view text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline json read_json(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const json& j) {
    write_text_atomic(path, j.dump(2) + "\n");
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

inline std::uint64_t checksum_bytes(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ULL) {
    return fnv1a(bytes, h);
}

/// Checksums the 8-bit quantized content, which is what persisted images carry.
inline std::uint64_t checksum_image(const Image& img, std::uint64_t h = 0xCBF29CE484222325ULL) {
    std::string bytes(img.size(), '\0');
    auto px = img.pixels();
    for (std::size_t i = 0; i < px.size(); ++i)
        bytes[i] = static_cast<char>(std::lround(std::clamp(px[i], 0.0f, 1.0f) * 255.0f));
    return fnv1a(bytes, h);
}

/// Shortest round-tripping decimal form of a double ("0.5", "0.75", "1").
inline std::string format_real(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline void write_png(const fs::path& path, const Image& img) {
    const int h = img.height(), w = img.width();
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(w);
    pi.height = static_cast<png_uint_32>(h);
    pi.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&pi, tmp.c_str(), 0, rgb.data(), 0, nullptr))
        throw Error("png write failed for " + path.string() + ": " + pi.message);
    fs::rename(tmp, path);
}

inline Image read_png(const fs::path& path) {
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&pi, path.c_str()))
        throw Error("png read failed for " + path.string() + ": " + pi.message);
    pi.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(pi));
    if (!png_image_finish_read(&pi, nullptr, rgb.data(), 0, nullptr)) {
        png_image_free(&pi);
        throw Error("png decode failed for " + path.string() + ": " + pi.message);
    }
    const int h = static_cast<int>(pi.height), w = static_cast<int>(pi.width);
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]) / 255.0f;
    return img;
}

}  // namespace semalign
