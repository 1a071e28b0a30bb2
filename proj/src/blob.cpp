// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/blob.hpp"

#include "npva/error.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace npva {

namespace {

constexpr std::array<char, 4> kMagic{'N', 'P', 'V', 'A'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xff),
                                         static_cast<unsigned char>((v >> 8) & 0xff),
                                         static_cast<unsigned char>((v >> 16) & 0xff),
                                         static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

} // namespace

void write_blob(std::ostream& out, const Blob& blob) {
    if (blob.values.size() != blob.expected_size()) {
        throw ConfigError("blob payload size does not match its header");
    }
    out.write(kMagic.data(), kMagic.size());
    put_u32(out, blob.width);
    put_u32(out, blob.height);
    put_u32(out, blob.channels);
    for (float f : blob.values) {
        put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    if (!out) {
        throw IoError("failed writing blob");
    }
}

Blob read_blob(std::istream& in) {
    std::array<unsigned char, 16> header{};
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() != static_cast<std::streamsize>(header.size())) {
        throw IoError("truncated blob header");
    }
    if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) {
        throw IoError("bad blob magic");
    }
    Blob blob;
    blob.width = get_u32(header.data() + 4);
    blob.height = get_u32(header.data() + 8);
    blob.channels = get_u32(header.data() + 12);
    const std::size_t n = blob.expected_size();
    std::vector<unsigned char> raw(n * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw IoError("truncated blob payload");
    }
    blob.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        blob.values[i] = std::bit_cast<float>(get_u32(raw.data() + 4 * i));
    }
    return blob;
}

void save_blob(const std::filesystem::path& path, const Blob& blob) {
    save_blobs(path, std::span<const Blob>(&blob, 1));
}

Blob load_blob(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return read_blob(in);
}

void save_blobs(const std::filesystem::path& path, std::span<const Blob> blobs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + path.string());
    }
    for (const Blob& b : blobs) {
        write_blob(out, b);
    }
}

std::vector<Blob> load_blobs(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<Blob> blobs;
    while (in.peek() != std::ifstream::traits_type::eof()) {
        blobs.push_back(read_blob(in));
    }
    return blobs;
}

} // namespace npva
