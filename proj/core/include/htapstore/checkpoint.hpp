#pragma once

// Checkpoint image of committed table state.
//
// Per table: "HTSC" magic, u16 version, schema, u32 group count, then per
// group: u32 group_id, i64 lo, i64 hi, u64 watermark, the update partition
// as u32 count + (i64 key, u32 len, row record) entries in position order,
// the read-only partition as per-column length-prefixed arrays plus the
// validity bitmap, and a u32 CRC32 trailer over the group bytes. All
// integers are little-endian. Only the newest committed version of each row
// is written, so the image is a pure function of committed history.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "htapstore/storage.hpp"

namespace htap::checkpoint {

inline constexpr char kMagic[4] = {'H', 'T', 'S', 'C'};
inline constexpr std::uint16_t kFormatVersion = 1;

std::vector<std::uint8_t> encode_schema(const TableSchema& schema);
TableSchema decode_schema(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_table(const Table& table);

// Tables are written in the given order.
void write(const std::filesystem::path& path, std::span<const Table* const> tables);

// Restores table images into freshly created (empty) tables of the same
// schema and group count. Throws CorruptCheckpoint.
void load(const std::filesystem::path& path, const std::map<std::string, Table*>& tables);
void load_bytes(std::span<const std::uint8_t> bytes, const std::map<std::string, Table*>& tables);

}  // namespace htap::checkpoint
