#include "htapstore/schema.hpp"

#include <unordered_set>

namespace htap {

std::string_view partition_name(PartitionKind kind) {
  return kind == PartitionKind::kUpdate ? "update" : "readonly";
}

namespace {

[[noreturn]] void invalid(const std::string& why) { throw Error(ErrorCode::kInvalidSchema, why); }

}  // namespace

TableSchema::TableSchema(std::string table_name, std::vector<ColumnDef> columns,
                         std::string primary_key, std::set<std::string> update_set)
    : name_(std::move(table_name)), columns_(std::move(columns)) {
  if (name_.empty()) invalid("table name must be non-empty");
  if (columns_.empty()) invalid("table must have at least one column");

  std::unordered_set<std::string> seen;
  for (const auto& c : columns_) {
    if (c.name.empty()) invalid("column names must be non-empty");
    if (!seen.insert(c.name).second) invalid("duplicate column name '" + c.name + "'");
  }
  for (const auto& u : update_set) {
    if (!seen.count(u)) invalid("update_set names unknown column '" + u + "'");
  }
  auto pk = find_column(primary_key);
  if (!pk) invalid("primary key '" + primary_key + "' is not a column");
  pk_index_ = *pk;
  if (columns_[pk_index_].type != ValueType::kInt64) invalid("primary key must be int64");
  if (!update_set.count(primary_key)) invalid("primary key must be in update_set");

  kinds_.resize(columns_.size());
  slots_.resize(columns_.size());
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (update_set.count(columns_[i].name)) {
      kinds_[i] = PartitionKind::kUpdate;
      slots_[i] = update_cols_.size();
      update_cols_.push_back(i);
    } else {
      kinds_[i] = PartitionKind::kReadOnly;
      slots_[i] = readonly_cols_.size();
      readonly_cols_.push_back(i);
    }
  }
}

std::set<std::string> TableSchema::update_set() const {
  std::set<std::string> out;
  for (auto i : update_cols_) out.insert(columns_[i].name);
  return out;
}

std::optional<std::size_t> TableSchema::find_column(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t TableSchema::column_index(std::string_view name) const {
  if (auto i = find_column(name)) return *i;
  throw Error(ErrorCode::kUnknownColumn, name_ + "." + std::string(name));
}

Row TableSchema::conform(const Row& row) const {
  if (row.size() != columns_.size()) {
    throw Error(ErrorCode::kTypeMismatch, name_ + " expects " + std::to_string(columns_.size()) +
                                              " values, got " + std::to_string(row.size()));
  }
  Row out;
  out.reserve(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out.push_back(coerce(row[i], columns_[i].type));
  return out;
}

Row TableSchema::row_part(const Row& full) const {
  Row out;
  out.reserve(update_cols_.size());
  for (auto i : update_cols_) out.push_back(full[i]);
  return out;
}

Row TableSchema::col_part(const Row& full) const {
  Row out;
  out.reserve(readonly_cols_.size());
  for (auto i : readonly_cols_) out.push_back(full[i]);
  return out;
}

Row TableSchema::stitch(const Row& row_part, const Row& col_part) const {
  Row out(columns_.size());
  for (std::size_t s = 0; s < update_cols_.size(); ++s) out[update_cols_[s]] = row_part[s];
  for (std::size_t s = 0; s < readonly_cols_.size(); ++s) out[readonly_cols_[s]] = col_part[s];
  return out;
}

bool TableSchema::operator==(const TableSchema& other) const {
  return name_ == other.name_ && columns_ == other.columns_ && pk_index_ == other.pk_index_ &&
         kinds_ == other.kinds_;
}

}  // namespace htap
