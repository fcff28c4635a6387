#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "scp/error.hpp"

namespace scp::binio {

// Little-endian primitives for the binary file formats. Byte order is
// packed explicitly so files are portable across hosts.

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
public:
    Reader(std::string bytes, std::string source)
        : bytes_(std::move(bytes)), source_(std::move(source)) {}

    std::size_t remaining() const { return bytes_.size() - pos_; }
    const std::string& source() const { return source_; }

    void expect_magic(const char magic[4]) {
        if (remaining() < 4 || std::memcmp(bytes_.data() + pos_, magic, 4) != 0) {
            throw format_error(format_error::code::bad_magic,
                               source_ + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
        }
        pos_ += 4;
    }

    std::uint32_t get_u32(const char* what) {
        if (remaining() < 4) {
            throw format_error(format_error::code::truncated,
                               source_ + ": truncated while reading " + std::string(what));
        }
        const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
        pos_ += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }

    float get_f32(const char* what) { return std::bit_cast<float>(get_u32(what)); }

    void get_f32s(float* dst, std::size_t count, const char* what) {
        const std::size_t need = count * 4;
        if (remaining() < need) {
            throw format_error(format_error::code::truncated,
                               source_ + ": truncated payload for " + std::string(what) +
                                   ", expected " + std::to_string(need) + " bytes, have " +
                                   std::to_string(remaining()));
        }
        for (std::size_t i = 0; i < count; ++i) dst[i] = get_f32(what);
    }

    std::uint8_t get_u8(const char* what) {
        if (remaining() < 1) {
            throw format_error(format_error::code::truncated,
                               source_ + ": truncated while reading " + std::string(what));
        }
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    std::string get_bytes(std::size_t count, const char* what) {
        if (remaining() < count) {
            throw format_error(format_error::code::truncated,
                               source_ + ": truncated while reading " + std::string(what) +
                                   ", expected " + std::to_string(count) + " bytes, have " +
                                   std::to_string(remaining()));
        }
        std::string s = bytes_.substr(pos_, count);
        pos_ += count;
        return s;
    }

    void expect_end() {
        if (remaining() != 0) {
            throw format_error(format_error::code::dimension_mismatch,
                               source_ + ": " + std::to_string(remaining()) +
                                   " unexpected trailing bytes");
        }
    }

private:
    std::string bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot open file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw config_error("read failed: " + path);
    return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw config_error("write failed: " + path);
}

} // namespace scp::binio
