// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lkv/numerics.hpp"

namespace lkv {

struct TensorFormatError : std::runtime_error {
    std::size_t byte_offset;
    TensorFormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

struct TokenTensor {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    Matrix embeddings;  // (height*width) x dim
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32_le(const std::string& s, std::size_t off) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 8 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2])) << 16 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3])) << 24;
}

}  // namespace detail

/// Serialize to the LKVT format: "LKVT", u32 version=1, u32 height, u32
/// width, u32 dim, then height*width*dim little-endian f32, row-major by cell.
inline std::string encode_token_tensor(const TokenTensor& t) {
    std::string out;
    out.reserve(20 + t.embeddings.data.size() * 4);
    out += "LKVT";
    detail::put_u32_le(out, 1);
    detail::put_u32_le(out, t.height);
    detail::put_u32_le(out, t.width);
    detail::put_u32_le(out, static_cast<std::uint32_t>(t.embeddings.cols));
    for (float f : t.embeddings.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32_le(out, bits);
    }
    return out;
}

inline TokenTensor decode_token_tensor(const std::string& bytes) {
    if (bytes.size() < 4 || bytes.compare(0, 4, "LKVT") != 0) {
        throw TensorFormatError("bad magic, expected LKVT", 0);
    }
    if (bytes.size() < 20) {
        throw TensorFormatError("truncated header", bytes.size());
    }
    const std::uint32_t version = detail::get_u32_le(bytes, 4);
    if (version != 1) {
        throw TensorFormatError("unsupported version " + std::to_string(version), 4);
    }
    TokenTensor t;
    t.height = detail::get_u32_le(bytes, 8);
    t.width = detail::get_u32_le(bytes, 12);
    const std::uint32_t dim = detail::get_u32_le(bytes, 16);
    const std::size_t count = static_cast<std::size_t>(t.height) * t.width * dim;
    const std::size_t expected = 20 + count * 4;
    if (bytes.size() != expected) {
        throw TensorFormatError("payload length mismatch, expected " + std::to_string(expected) +
                                    " bytes",
                                std::min(bytes.size(), expected));
    }
    if (count == 0) {
        throw TensorFormatError("empty tensor", 8);
    }
    std::vector<float> data(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = detail::get_u32_le(bytes, 20 + i * 4);
        std::memcpy(&data[i], &bits, 4);
    }
    t.embeddings = Matrix(static_cast<std::size_t>(t.height) * t.width, dim, std::move(data));
    return t;
}

inline TokenTensor read_token_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw TensorFormatError("cannot open " + path.string(), 0);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_token_tensor(bytes);
}

/// Atomic write: temp file in the target directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

inline void write_token_tensor(const std::filesystem::path& path, const TokenTensor& t) {
    write_file_atomic(path, encode_token_tensor(t));
}

}  // namespace lkv
