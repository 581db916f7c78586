#include "m3fas/wav_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace m3fas {

namespace {

void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}

void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
    b.push_back(v & 0xff);
    b.push_back((v >> 8) & 0xff);
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

std::uint16_t get_u16(const unsigned char* p) {
    return std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8;
}

}  // namespace

void write_wav(const Waveform& w, const std::string& path) {
    require(w.size() > 0, "refusing to write an empty waveform");
    require(w.samples.isFinite().all(), "waveform contains non-finite samples");
    require(w.samples.abs().maxCoeff() <= 1.0, "waveform samples must lie in [-1, 1]");
    require(w.sample_rate > 0, "sample rate must be positive");

    const std::uint32_t n = std::uint32_t(w.size());
    const std::uint32_t data_bytes = n * 2;
    const std::uint32_t rate = std::uint32_t(std::lround(w.sample_rate));

    std::vector<unsigned char> buf;
    buf.reserve(44 + data_bytes);
    const char* riff = "RIFF";
    buf.insert(buf.end(), riff, riff + 4);
    put_u32(buf, 36 + data_bytes);
    const char* wave = "WAVEfmt ";
    buf.insert(buf.end(), wave, wave + 8);
    put_u32(buf, 16);         // fmt chunk size
    put_u16(buf, 1);          // PCM
    put_u16(buf, 1);          // mono
    put_u32(buf, rate);
    put_u32(buf, rate * 2);   // byte rate
    put_u16(buf, 2);          // block align
    put_u16(buf, 16);         // bits per sample
    const char* data = "data";
    buf.insert(buf.end(), data, data + 4);
    put_u32(buf, data_bytes);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        // Symmetric scaling by 32767 keeps +1 and -1 representable.
        const auto q = std::int16_t(std::lround(w.samples[i] * 32767.0));
        put_u16(buf, std::uint16_t(q));
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw IoError("short write: " + path);
}

Waveform read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    if (buf.size() < 44) throw IoError("malformed wav (too short): " + path);
    if (std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw IoError("malformed wav (bad RIFF/WAVE header): " + path);

    // Walk chunks; accept fmt then data.
    std::size_t pos = 12;
    bool have_fmt = false;
    std::uint32_t rate = 0;
    Waveform w;
    while (pos + 8 <= buf.size()) {
        const char* id = reinterpret_cast<const char*>(buf.data() + pos);
        const std::uint32_t size = get_u32(buf.data() + pos + 4);
        pos += 8;
        if (pos + size > buf.size()) throw IoError("malformed wav (truncated chunk): " + path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) throw IoError("malformed wav (short fmt chunk): " + path);
            const std::uint16_t format = get_u16(buf.data() + pos);
            const std::uint16_t channels = get_u16(buf.data() + pos + 2);
            rate = get_u32(buf.data() + pos + 4);
            const std::uint16_t bits = get_u16(buf.data() + pos + 14);
            if (format != 1 || channels != 1 || bits != 16)
                throw IoError("unsupported wav (need mono 16-bit PCM): " + path);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (!have_fmt) throw IoError("malformed wav (data before fmt): " + path);
            if (size % 2 != 0) throw IoError("malformed wav (odd data size): " + path);
            const Eigen::Index n = Eigen::Index(size / 2);
            if (n == 0) throw IoError("malformed wav (empty data chunk): " + path);
            w.samples.resize(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto q = std::int16_t(get_u16(buf.data() + pos + 2 * std::size_t(i)));
                w.samples[i] = double(q) / 32767.0;
            }
            w.sample_rate = double(rate);
            return w;
        }
        pos += size + (size % 2);  // chunks are word-aligned
    }
    throw IoError("malformed wav (no data chunk): " + path);
}

}  // namespace m3fas
