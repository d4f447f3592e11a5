#include "htapstore/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "htapstore/encoding.hpp"

namespace htap::checkpoint {

namespace fs = std::filesystem;

namespace {

void put_schema(ByteWriter& w, const TableSchema& schema) {
  w.short_string(schema.name());
  w.u32(static_cast<std::uint32_t>(schema.column_count()));
  for (std::size_t i = 0; i < schema.column_count(); ++i) {
    w.short_string(schema.columns()[i].name);
    w.u8(static_cast<std::uint8_t>(schema.columns()[i].type));
    w.u8(schema.is_updatable(i) ? 1 : 0);
  }
  w.short_string(schema.primary_key());
}

TableSchema get_schema(ByteReader& r) {
  auto name = r.short_string();
  const auto n = r.u32();
  std::vector<ColumnDef> cols;
  std::set<std::string> update_set;
  for (std::uint32_t i = 0; i < n; ++i) {
    ColumnDef c;
    c.name = r.short_string();
    const auto t = r.u8();
    if (t > 3) throw Error(ErrorCode::kCorruptCheckpoint, "bad column type");
    c.type = static_cast<ValueType>(t);
    if (r.u8()) update_set.insert(c.name);
    cols.push_back(std::move(c));
  }
  auto pk = r.short_string();
  return TableSchema(std::move(name), std::move(cols), std::move(pk), std::move(update_set));
}

std::vector<std::uint8_t> encode_group(const RowGroup& group) {
  ByteWriter w;
  w.u32(group.id());
  w.i64(group.range().lo);
  w.i64(group.range().hi);
  w.u64(group.watermark());
  const auto& slots = group.slots();
  w.u32(static_cast<std::uint32_t>(slots.size()));
  for (const auto& slot : slots) {
    ByteWriter rec;
    rec.u64(slot.insert_lsn);
    rec.u64(slot.delete_lsn);
    rec.i64(slot.prev_position);
    rec.u64(slot.versions.back().lsn);
    rec.u32(static_cast<std::uint32_t>(slot.latest().size()));
    for (const auto& v : slot.latest()) rec.value(v);
    w.i64(slot.key);
    w.u32(static_cast<std::uint32_t>(rec.size()));
    w.bytes(rec.data());
  }
  w.bytes(group.readonly().to_bytes());
  return w.take();
}

[[noreturn]] void corrupt(const std::string& why) { throw Error(ErrorCode::kCorruptCheckpoint, why); }

}  // namespace

std::vector<std::uint8_t> encode_schema(const TableSchema& schema) {
  ByteWriter w;
  put_schema(w, schema);
  return w.take();
}

TableSchema decode_schema(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  try {
    return get_schema(r);
  } catch (const ByteReader::TruncatedInput&) {
    corrupt("truncated schema");
  }
}

std::vector<std::uint8_t> encode_table(const Table& table) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u16(kFormatVersion);
  put_schema(w, table.schema());
  w.u32(table.group_count());
  for (GroupId g = 0; g < table.group_count(); ++g) {
    const auto& group = table.group(g);
    auto lock = group.lock_shared();
    const auto bytes = encode_group(group);
    w.u32(static_cast<std::uint32_t>(bytes.size()));
    w.bytes(bytes);
    w.u32(crc32(bytes));
  }
  return w.take();
}

void write(const fs::path& path, std::span<const Table* const> tables) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + tmp.string());
    for (const Table* t : tables) {
      const auto bytes = encode_table(*t);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    if (!out) throw Error(ErrorCode::kIoFailure, "short write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void load_bytes(std::span<const std::uint8_t> bytes, const std::map<std::string, Table*>& tables) {
  ByteReader r(bytes);
  try {
    while (!r.at_end()) {
      const auto magic = r.bytes(4);
      if (!std::equal(magic.begin(), magic.end(), kMagic)) corrupt("bad magic");
      if (r.u16() != kFormatVersion) corrupt("unsupported version");
      const TableSchema schema = get_schema(r);
      auto it = tables.find(schema.name());
      if (it == tables.end()) corrupt("checkpoint has unknown table " + schema.name());
      Table& table = *it->second;
      if (!(table.schema() == schema)) corrupt("schema mismatch for " + schema.name());
      const auto ngroups = r.u32();
      if (ngroups != table.group_count()) corrupt("group count mismatch for " + schema.name());

      for (std::uint32_t g = 0; g < ngroups; ++g) {
        const auto len = r.u32();
        const auto body = r.bytes(len);
        if (crc32(body) != r.u32()) corrupt("crc mismatch in group " + std::to_string(g));
        ByteReader gr(body);
        if (gr.u32() != g) corrupt("group id out of order");
        KeyRange range{gr.i64(), gr.i64()};
        if (!(range == table.group(g).range())) corrupt("key range mismatch");
        const Lsn watermark = gr.u64();
        std::vector<UpdateSlot> slots(gr.u32());
        for (auto& slot : slots) {
          slot.key = gr.i64();
          ByteReader rec(gr.bytes(gr.u32()));
          slot.insert_lsn = rec.u64();
          slot.delete_lsn = rec.u64();
          slot.prev_position = rec.i64();
          UpdateSlot::Version v;
          v.lsn = rec.u64();
          v.values.resize(rec.u32());
          for (auto& value : v.values) value = rec.value();
          if (v.values.size() != schema.update_columns().size()) corrupt("row record arity");
          slot.versions.push_back(std::move(v));
        }
        std::vector<ValueType> types;
        for (auto c : schema.readonly_columns()) types.push_back(schema.columns()[c].type);
        auto ro = ReadOnlyPartition::from_bytes(types, body.subspan(gr.position()));
        RowGroup& group = table.group(g);
        {
          auto lock = group.lock_exclusive();
          group.restore(std::move(slots), std::move(ro));
        }
        table.publish(g, watermark);
      }
    }
  } catch (const ByteReader::TruncatedInput&) {
    corrupt("truncated checkpoint");
  }
}

void load(const fs::path& path, const std::map<std::string, Table*>& tables) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  load_bytes(bytes, tables);
}

}  // namespace htap::checkpoint
