// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "patchlab/common.hpp"

namespace patchlab::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and written as raw bytes");

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) fail(ErrKind::io, "cannot open ", path.string(), " for writing");
    }

    void bytes(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void magic(const char* m) { bytes(m, std::char_traits<char>::length(m)); }
    void u16(uint16_t v) { bytes(&v, 2); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void f64_block(const double* p, size_t n) { bytes(p, n * 8); }
    void str32(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void close() {
        out_.close();
        if (!out_) fail(ErrKind::io, "write failed for ", path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) fail(ErrKind::io, "cannot open ", path.string(), " for reading");
    }

    void bytes(void* p, size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            fail(ErrKind::parse, path_.string(), ": truncated file at byte offset ", offset_);
        offset_ += n;
    }
    void magic(const char* m) {
        const size_t n = std::char_traits<char>::length(m);
        std::string got(n, '\0');
        const uint64_t at = offset_;
        bytes(got.data(), n);
        if (got != m)
            fail(ErrKind::parse, path_.string(), ": bad magic at byte offset ", at, ", expected '",
                 m, "'");
    }
    uint16_t u16() {
        uint16_t v;
        bytes(&v, 2);
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    void f64_block(double* p, size_t n) { bytes(p, n * 8); }
    std::string str32(uint32_t max_len = 1u << 24) {
        const uint64_t at = offset_;
        const uint32_t n = u32();
        if (n > max_len)
            fail(ErrKind::parse, path_.string(), ": unreasonable string length ", n,
                 " at byte offset ", at);
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    uint64_t offset() const { return offset_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
    uint64_t offset_ = 0;
};

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrKind::io, "cannot hash missing file ", path.string());
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0)
        h = fnv1a(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

std::string hash_hex(uint64_t h);

} // namespace patchlab::binio
