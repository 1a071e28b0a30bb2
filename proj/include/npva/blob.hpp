// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace npva {

/// A dense row-major float32 array with a 16-byte header:
/// magic "NPVA", then little-endian u32 width, height, channels.
struct Blob {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 0;
    std::vector<float> values;

    std::size_t expected_size() const {
        return static_cast<std::size_t>(width) * height * channels;
    }
};

void write_blob(std::ostream& out, const Blob& blob);
Blob read_blob(std::istream& in);

void save_blob(const std::filesystem::path& path, const Blob& blob);
Blob load_blob(const std::filesystem::path& path);

/// Multiple blobs back to back in one file.
void save_blobs(const std::filesystem::path& path, std::span<const Blob> blobs);
std::vector<Blob> load_blobs(const std::filesystem::path& path);

} // namespace npva
