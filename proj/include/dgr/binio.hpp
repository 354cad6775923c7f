#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dgr/errors.hpp"

namespace dgr {

/// Little-endian binary writer for checkpoint and index files.
class BinaryWriter {
  public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    void u8(uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b, 4);
    }
    void u64(uint64_t v) {
        char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(b, 8);
    }
    void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void f64_vec(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    void u32_vec(const std::vector<uint32_t>& v) {
        u64(v.size());
        for (uint32_t x : v) u32(x);
    }

  private:
    std::ostream& out_;
};

class BinaryReader {
  public:
    explicit BinaryReader(std::istream& in) : in_(in) {}

    uint8_t u8() {
        int c = in_.get();
        if (c == EOF) fail();
        return static_cast<uint8_t>(c);
    }
    uint32_t u32() {
        char b[4];
        if (!in_.read(b, 4)) fail();
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    uint64_t u64() {
        char b[8];
        if (!in_.read(b, 8)) fail();
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        size_t n = u64();
        std::string s(n, '\0');
        if (n > 0 && !in_.read(s.data(), static_cast<std::streamsize>(n))) fail();
        return s;
    }
    std::vector<double> f64_vec() {
        size_t n = u64();
        std::vector<double> v(n);
        for (size_t i = 0; i < n; ++i) v[i] = f64();
        return v;
    }
    std::vector<uint32_t> u32_vec() {
        size_t n = u64();
        std::vector<uint32_t> v(n);
        for (size_t i = 0; i < n; ++i) v[i] = u32();
        return v;
    }

  private:
    [[noreturn]] void fail() { throw ParseError("unexpected end of binary stream"); }
    std::istream& in_;
};

}  // namespace dgr
