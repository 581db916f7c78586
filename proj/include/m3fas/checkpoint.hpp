#pragma once

#include "m3fas/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace m3fas {

// Binary tensor container:
//   magic "M3FS" | version u16 | record count u32 | records...
// record:
//   name length u32 | name | dtype u8 | rank u32 | dims u64[rank]
//   | payload | payload CRC32 u32
// All integers little-endian; f64/i64 payloads are row-major little-endian
// 64-bit values. Record order is preserved, so save -> load -> save is
// byte-identical.
enum class RecordType : std::uint8_t { f64 = 0, i64 = 1, bytes = 2 };

struct CheckpointRecord {
    std::string name;
    RecordType dtype = RecordType::f64;
    std::vector<std::uint64_t> dims;
    std::vector<unsigned char> payload;

    Eigen::Index numel() const;
};

struct Checkpoint {
    std::uint16_t version = 1;
    std::vector<CheckpointRecord> records;

    void add_f64(const std::string& name, const Eigen::ArrayXd& data, const Shape& dims);
    void add_i64(const std::string& name, std::int64_t v);
    void add_text(const std::string& name, const std::string& text);

    const CheckpointRecord* find(const std::string& name) const;
    Eigen::ArrayXd get_f64(const std::string& name) const;
    std::int64_t get_i64(const std::string& name) const;
    std::string get_text(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace m3fas
