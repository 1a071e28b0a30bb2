// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/image.hpp"

#include "npva/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

namespace npva {

namespace {

// Reads a netpbm header token, skipping whitespace and comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') {
                c = in.get();
            }
        } else if (std::isspace(c)) {
            if (!tok.empty()) {
                return tok;
            }
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok;
}

struct PnmHeader {
    std::string magic;
    int width = 0;
    int height = 0;
    int maxval = 0;
};

PnmHeader read_header(std::istream& in, const std::filesystem::path& path) {
    PnmHeader h;
    try {
        h.magic = next_token(in);
        h.width = std::stoi(next_token(in));
        h.height = std::stoi(next_token(in));
        h.maxval = std::stoi(next_token(in));
    } catch (const std::exception&) {
        throw IoError("malformed netpbm header in " + path.string());
    }
    if (h.width <= 0 || h.height <= 0) {
        throw IoError("bad netpbm dimensions in " + path.string());
    }
    return h;
}

} // namespace

double mean_squared_error(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ConfigError("image size mismatch");
    }
    if (a.rgb.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.rgb.size());
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return -10.0 * std::log10(mse);
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + path.string());
    }
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> bytes(image.rgb.size());
    for (std::size_t i = 0; i < image.rgb.size(); ++i) {
        const double v = std::clamp(image.rgb[i], 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const PnmHeader h = read_header(in, path);
    if (h.magic != "P6" || h.maxval != 255) {
        throw IoError("only 8-bit P6 images are supported: " + path.string());
    }
    Image img(h.width, h.height);
    std::vector<unsigned char> bytes(img.rgb.size());
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("truncated PPM " + path.string());
    }
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.rgb[i] = bytes[i] / 255.0;
    }
    return img;
}

void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth, double mm_per_unit) {
    if (!(mm_per_unit > 0.0)) {
        throw ConfigError("mm_per_unit must be positive");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + path.string());
    }
    out << "P5\n" << depth.width << ' ' << depth.height << "\n65535\n";
    std::vector<unsigned char> bytes(depth.depth.size() * 2);
    for (std::size_t i = 0; i < depth.depth.size(); ++i) {
        long v = 0;
        if (depth.hit[i]) {
            v = std::clamp(std::lround(depth.depth[i] / mm_per_unit), 1L, 65535L);
        }
        bytes[2 * i] = static_cast<unsigned char>((v >> 8) & 0xff);
        bytes[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));

    nlohmann::json sidecar = {{"mm_per_unit", mm_per_unit},
                              {"miss_value", 0},
                              {"width", depth.width},
                              {"height", depth.height},
                              {"depth", "camera_z"}};
    std::ofstream meta(path.string() + ".json", std::ios::trunc);
    meta << sidecar.dump(2) << '\n';
}

DepthMap read_depth_pgm(const std::filesystem::path& path) {
    std::ifstream meta(path.string() + ".json");
    if (!meta) {
        throw IoError("missing depth sidecar for " + path.string());
    }
    const double scale = nlohmann::json::parse(meta).at("mm_per_unit").get<double>();
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const PnmHeader h = read_header(in, path);
    if (h.magic != "P5" || h.maxval != 65535) {
        throw IoError("expected 16-bit P5 depth map: " + path.string());
    }
    DepthMap d(h.width, h.height);
    std::vector<unsigned char> bytes(d.depth.size() * 2);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("truncated PGM " + path.string());
    }
    for (std::size_t i = 0; i < d.depth.size(); ++i) {
        const int v = bytes[2 * i] << 8 | bytes[2 * i + 1];
        d.hit[i] = v != 0;
        d.depth[i] = v * scale;
    }
    return d;
}

} // namespace npva
