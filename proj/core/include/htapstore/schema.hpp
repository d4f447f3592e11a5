#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "htapstore/types.hpp"

namespace htap {

struct ColumnDef {
  std::string name;
  ValueType type = ValueType::kInt64;

  bool operator==(const ColumnDef&) const = default;
};

enum class PartitionKind : std::uint8_t { kUpdate = 0, kReadOnly = 1 };

std::string_view partition_name(PartitionKind kind);

/// Column definitions plus the update/read-only split of a table.
///
/// Columns named in the update set live in the row-format update partition;
/// every other column lives in the column-format read-only partition. The
/// primary key must be int64 and must be updatable so that point operations
/// resolve in the row partition. Construction validates all of this and
/// throws InvalidSchema naming the violated rule.
class TableSchema {
 public:
  TableSchema(std::string table_name, std::vector<ColumnDef> columns, std::string primary_key,
              std::set<std::string> update_set);

  const std::string& name() const { return name_; }
  const std::vector<ColumnDef>& columns() const { return columns_; }
  std::size_t column_count() const { return columns_.size(); }
  const std::string& primary_key() const { return columns_[pk_index_].name; }
  std::size_t primary_key_index() const { return pk_index_; }
  std::set<std::string> update_set() const;

  std::optional<std::size_t> find_column(std::string_view name) const;
  // Throws UnknownColumn.
  std::size_t column_index(std::string_view name) const;

  PartitionKind partition_of(std::size_t column) const { return kinds_[column]; }
  bool is_updatable(std::size_t column) const { return kinds_[column] == PartitionKind::kUpdate; }
  // Position of a column inside its partition's layout.
  std::size_t slot_of(std::size_t column) const { return slots_[column]; }

  // Schema indices of each partition's columns, in schema order.
  const std::vector<std::size_t>& update_columns() const { return update_cols_; }
  const std::vector<std::size_t>& readonly_columns() const { return readonly_cols_; }
  std::size_t key_slot() const { return slots_[pk_index_]; }

  // Checks arity and coerces literal types to the column types.
  Row conform(const Row& row) const;
  Row row_part(const Row& full) const;
  Row col_part(const Row& full) const;
  Row stitch(const Row& row_part, const Row& col_part) const;

  bool operator==(const TableSchema& other) const;

 private:
  std::string name_;
  std::vector<ColumnDef> columns_;
  std::size_t pk_index_ = 0;
  std::vector<PartitionKind> kinds_;
  std::vector<std::size_t> slots_;
  std::vector<std::size_t> update_cols_;
  std::vector<std::size_t> readonly_cols_;
};

}  // namespace htap
