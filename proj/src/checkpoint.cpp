#include "m3fas/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace m3fas {

namespace {

constexpr char kMagic[4] = {'M', '3', 'F', 'S'};
constexpr std::uint16_t kVersion = 1;

void put_bytes(std::vector<unsigned char>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + n);
}

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back((unsigned char)((std::uint64_t(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return T(v);
}

std::uint32_t payload_crc(const std::vector<unsigned char>& payload) {
    return std::uint32_t(::crc32(0L, payload.data(), uInt(payload.size())));
}

}  // namespace

Eigen::Index CheckpointRecord::numel() const {
    Eigen::Index n = 1;
    for (std::uint64_t d : dims) n *= Eigen::Index(d);
    return n;
}

void Checkpoint::add_f64(const std::string& name, const Eigen::ArrayXd& data, const Shape& dims) {
    CheckpointRecord rec;
    rec.name = name;
    rec.dtype = RecordType::f64;
    Eigen::Index n = 1;
    for (Eigen::Index d : dims) {
        rec.dims.push_back(std::uint64_t(d));
        n *= d;
    }
    require(n == data.size(), "checkpoint record " + name + ": dims do not match data length");
    rec.payload.resize(std::size_t(data.size()) * 8);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        for (int b = 0; b < 8; ++b)
            rec.payload[std::size_t(i) * 8 + std::size_t(b)] =
                (unsigned char)((bits >> (8 * b)) & 0xff);
    }
    records.push_back(std::move(rec));
}

void Checkpoint::add_i64(const std::string& name, std::int64_t v) {
    CheckpointRecord rec;
    rec.name = name;
    rec.dtype = RecordType::i64;
    rec.dims.push_back(1);
    rec.payload.resize(8);
    for (int b = 0; b < 8; ++b)
        rec.payload[std::size_t(b)] = (unsigned char)((std::uint64_t(v) >> (8 * b)) & 0xff);
    records.push_back(std::move(rec));
}

void Checkpoint::add_text(const std::string& name, const std::string& text) {
    CheckpointRecord rec;
    rec.name = name;
    rec.dtype = RecordType::bytes;
    rec.dims.push_back(text.size());
    rec.payload.assign(text.begin(), text.end());
    records.push_back(std::move(rec));
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
    for (const auto& rec : records)
        if (rec.name == name) return &rec;
    return nullptr;
}

Eigen::ArrayXd Checkpoint::get_f64(const std::string& name) const {
    const CheckpointRecord* rec = find(name);
    require(rec != nullptr, "checkpoint record missing: " + name);
    require(rec->dtype == RecordType::f64, "checkpoint record " + name + " is not f64");
    Eigen::ArrayXd out(rec->numel());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= std::uint64_t(rec->payload[std::size_t(i) * 8 + std::size_t(b)]) << (8 * b);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

std::int64_t Checkpoint::get_i64(const std::string& name) const {
    const CheckpointRecord* rec = find(name);
    require(rec != nullptr, "checkpoint record missing: " + name);
    require(rec->dtype == RecordType::i64 && rec->payload.size() == 8,
            "checkpoint record " + name + " is not i64");
    return get_le<std::int64_t>(rec->payload.data());
}

std::string Checkpoint::get_text(const std::string& name) const {
    const CheckpointRecord* rec = find(name);
    require(rec != nullptr, "checkpoint record missing: " + name);
    require(rec->dtype == RecordType::bytes, "checkpoint record " + name + " is not bytes");
    return std::string(rec->payload.begin(), rec->payload.end());
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<unsigned char> buf;
    put_bytes(buf, kMagic, 4);
    put_le<std::uint16_t>(buf, ckpt.version);
    put_le<std::uint32_t>(buf, std::uint32_t(ckpt.records.size()));
    for (const auto& rec : ckpt.records) {
        put_le<std::uint32_t>(buf, std::uint32_t(rec.name.size()));
        put_bytes(buf, rec.name.data(), rec.name.size());
        buf.push_back((unsigned char)rec.dtype);
        put_le<std::uint32_t>(buf, std::uint32_t(rec.dims.size()));
        for (std::uint64_t d : rec.dims) put_le<std::uint64_t>(buf, d);
        put_bytes(buf, rec.payload.data(), rec.payload.size());
        put_le<std::uint32_t>(buf, payload_crc(rec.payload));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
    if (!out) throw IoError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > buf.size()) throw IoError("truncated checkpoint: " + path);
    };
    need(4 + 2 + 4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    pos = 4;
    const std::uint16_t version = get_le<std::uint16_t>(buf.data() + pos);
    pos += 2;
    if (version != kVersion)
        throw InvalidInputError("checkpoint version mismatch: file has " +
                                std::to_string(version) + ", expected " +
                                std::to_string(kVersion));
    const std::uint32_t count = get_le<std::uint32_t>(buf.data() + pos);
    pos += 4;

    Checkpoint ckpt;
    ckpt.version = version;
    for (std::uint32_t r = 0; r < count; ++r) {
        need(4);
        const std::uint32_t name_len = get_le<std::uint32_t>(buf.data() + pos);
        pos += 4;
        need(name_len + 1 + 4);
        CheckpointRecord rec;
        rec.name.assign(reinterpret_cast<const char*>(buf.data() + pos), name_len);
        pos += name_len;
        rec.dtype = RecordType(buf[pos]);
        if (rec.dtype != RecordType::f64 && rec.dtype != RecordType::i64 &&
            rec.dtype != RecordType::bytes)
            throw IoError("checkpoint record " + rec.name + ": unknown dtype");
        pos += 1;
        const std::uint32_t rank = get_le<std::uint32_t>(buf.data() + pos);
        pos += 4;
        need(std::size_t(rank) * 8);
        for (std::uint32_t d = 0; d < rank; ++d) {
            rec.dims.push_back(get_le<std::uint64_t>(buf.data() + pos));
            pos += 8;
        }
        const std::size_t elem = rec.dtype == RecordType::bytes ? 1 : 8;
        const std::size_t payload_len = std::size_t(rec.numel()) * elem;
        need(payload_len + 4);
        rec.payload.assign(buf.data() + pos, buf.data() + pos + payload_len);
        pos += payload_len;
        const std::uint32_t crc = get_le<std::uint32_t>(buf.data() + pos);
        pos += 4;
        if (crc != payload_crc(rec.payload))
            throw InvalidInputError("checkpoint record " + rec.name +
                                    ": corrupt payload (CRC mismatch)");
        ckpt.records.push_back(std::move(rec));
    }
    if (pos != buf.size()) throw IoError("trailing bytes in checkpoint: " + path);
    return ckpt;
}

}  // namespace m3fas
