#include "htapstore/wal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <deque>
#include <fstream>
#include <iterator>

#include "htapstore/encoding.hpp"
#include "htapstore/storage.hpp"

namespace htap::wal {

namespace fs = std::filesystem;

std::string_view kind_name(RecordKind kind) {
  switch (kind) {
    case RecordKind::kUpdateRow: return "UpdateRow";
    case RecordKind::kInsertRowPart: return "InsertRowPart";
    case RecordKind::kInsertColPart: return "InsertColPart";
    case RecordKind::kDeleteRowPart: return "DeleteRowPart";
    case RecordKind::kDeleteColPart: return "DeleteColPart";
    case RecordKind::kTxnCommit: return "TxnCommit";
    case RecordKind::kTxnRollback: return "TxnRollback";
  }
  return "?";
}

bool is_column_part(RecordKind kind) {
  return kind == RecordKind::kInsertColPart || kind == RecordKind::kDeleteColPart;
}

std::vector<std::uint8_t> encode_header() {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u16(kFormatVersion);
  return w.take();
}

std::vector<std::uint8_t> encode_record(const LogRecord& r) {
  ByteWriter w;
  w.u32(0);  // patched below
  w.u64(r.lsn);
  w.u64(r.txn_id);
  w.u8(static_cast<std::uint8_t>(r.kind));
  w.short_string(r.table);
  w.u32(r.group_id);
  w.i64(r.key);
  w.u32(static_cast<std::uint32_t>(r.payload.size()));
  w.bytes(r.payload);
  w.patch_u32(0, static_cast<std::uint32_t>(w.size() - 4));
  const auto crc = crc32(w.data());
  w.u32(crc);
  return w.take();
}

std::vector<std::uint8_t> encode_values(const Row& values) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(values.size()));
  for (const auto& v : values) w.value(v);
  return w.take();
}

Row decode_values(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Row out(r.u32());
  for (auto& v : out) v = r.value();
  return out;
}

std::vector<std::uint8_t> encode_assignments(const Assignments& assignments) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(assignments.size()));
  for (const auto& [col, v] : assignments) {
    w.u32(static_cast<std::uint32_t>(col));
    w.value(v);
  }
  return w.take();
}

Assignments decode_assignments(std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Assignments out(r.u32());
  for (auto& [col, v] : out) {
    col = r.u32();
    v = r.value();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scanning

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Parses one record at the reader's position; nullopt when torn or invalid.
std::optional<LogRecord> parse_record(std::span<const std::uint8_t> bytes, std::size_t offset,
                                      std::size_t& size_out) {
  try {
    ByteReader head(bytes.subspan(offset));
    const std::uint32_t len = head.u32();
    if (head.remaining() < std::size_t{len} + 4) return std::nullopt;
    const auto framed = bytes.subspan(offset, 4 + std::size_t{len});
    ByteReader crc_reader(bytes.subspan(offset + 4 + len, 4));
    if (crc32(framed) != crc_reader.u32()) return std::nullopt;

    ByteReader r(framed.subspan(4));
    LogRecord rec;
    rec.lsn = r.u64();
    rec.txn_id = r.u64();
    const auto kind = r.u8();
    if (kind < 1 || kind > 7) return std::nullopt;
    rec.kind = static_cast<RecordKind>(kind);
    rec.table = r.short_string();
    rec.group_id = r.u32();
    rec.key = r.i64();
    const auto payload = r.bytes(r.u32());
    rec.payload.assign(payload.begin(), payload.end());
    if (!r.at_end()) return std::nullopt;
    size_out = 4 + std::size_t{len} + 4;
    return rec;
  } catch (const ByteReader::TruncatedInput&) {
    return std::nullopt;
  }
}

}  // namespace

LogScan scan_log_bytes(std::span<const std::uint8_t> bytes) {
  LogScan scan;
  scan.file_bytes = bytes.size();
  const auto header = encode_header();
  if (bytes.size() < kHeaderSize) {
    if (!std::equal(bytes.begin(), bytes.end(), header.begin())) {
      throw Error(ErrorCode::kCorruptLogHeader, "bad magic in torn header");
    }
    scan.torn_tail = !bytes.empty();
    return scan;
  }
  if (!std::equal(header.begin(), header.end(), bytes.begin())) {
    throw Error(ErrorCode::kCorruptLogHeader, "magic/version mismatch");
  }
  std::size_t offset = kHeaderSize;
  Lsn last = 0;
  while (offset < bytes.size()) {
    std::size_t size = 0;
    auto rec = parse_record(bytes, offset, size);
    if (!rec || rec->lsn <= last) break;
    last = rec->lsn;
    scan.records.push_back({std::move(*rec), offset, size});
    offset += size;
  }
  scan.valid_bytes = offset;
  scan.torn_tail = offset < bytes.size();
  return scan;
}

LogScan scan_log(const fs::path& path) {
  const auto bytes = read_file(path);
  return scan_log_bytes(bytes);
}

// ---------------------------------------------------------------------------
// LogManager

LogManager::LogManager(fs::path path, Durability durability)
    : path_(std::move(path)), durability_(durability) {
  LogScan scan;
  const bool exists = fs::exists(path_);
  if (exists) scan = scan_log(path_);

  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorCode::kIoFailure, "open " + path_.string() + ": " + std::strerror(errno));

  if (!exists || scan.valid_bytes < kHeaderSize) {
    if (::ftruncate(fd_, 0) != 0) throw Error(ErrorCode::kIoFailure, "truncate log");
    ::lseek(fd_, 0, SEEK_SET);
    write_all(encode_header());
    if (::fdatasync(fd_) != 0) throw Error(ErrorCode::kIoFailure, "fdatasync");
    file_bytes_ = kHeaderSize;
    return;
  }
  if (scan.torn_tail) {
    if (::ftruncate(fd_, static_cast<off_t>(scan.valid_bytes)) != 0) {
      throw Error(ErrorCode::kIoFailure, "truncate torn tail");
    }
  }
  file_bytes_ = scan.valid_bytes;
  ::lseek(fd_, static_cast<off_t>(file_bytes_), SEEK_SET);
  for (const auto& r : scan.records) {
    next_lsn_ = std::max(next_lsn_, r.record.lsn + 1);
    max_txn_seen_ = std::max(max_txn_seen_, r.record.txn_id);
  }
}

LogManager::~LogManager() { close(); }

void LogManager::close() {
  std::lock_guard lock(mu_);
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

Lsn LogManager::last_lsn() const {
  std::lock_guard lock(mu_);
  return next_lsn_ - 1;
}

std::size_t LogManager::bytes_written() const {
  std::lock_guard lock(mu_);
  return file_bytes_;
}

void LogManager::begin_txn(TxnId txn) {
  std::lock_guard lock(mu_);
  txns_[txn] = TxnState{};
  max_txn_seen_ = std::max(max_txn_seen_, txn);
}

std::optional<TxnOutcome> LogManager::outcome(TxnId txn) const {
  std::lock_guard lock(mu_);
  auto it = txns_.find(txn);
  if (it == txns_.end()) return std::nullopt;
  return it->second.outcome;
}

bool LogManager::has_active_txns() const {
  std::lock_guard lock(mu_);
  return std::any_of(txns_.begin(), txns_.end(),
                     [](const auto& kv) { return kv.second.outcome == TxnOutcome::kActive; });
}

void LogManager::fail_after_bytes(std::size_t limit) {
  std::lock_guard lock(mu_);
  fault_limit_ = limit;
}

LogManager::TxnState& LogManager::active_locked(TxnId txn) {
  auto it = txns_.find(txn);
  if (it == txns_.end() || it->second.outcome != TxnOutcome::kActive) {
    throw Error(ErrorCode::kTxnNotActive, "txn " + std::to_string(txn));
  }
  return it->second;
}

void LogManager::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::write(fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIoFailure, std::string("write: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

Lsn LogManager::append_locked(LogRecord& record) {
  if (fd_ < 0 || poisoned_) throw Error(ErrorCode::kIoFailure, "log is closed or failed");
  record.lsn = next_lsn_;
  const auto bytes = encode_record(record);
  if (fault_limit_ && file_bytes_ + bytes.size() > *fault_limit_) {
    const std::size_t keep = *fault_limit_ > file_bytes_ ? *fault_limit_ - file_bytes_ : 0;
    write_all(std::span(bytes).first(keep));
    file_bytes_ += keep;
    poisoned_ = true;
    throw Error(ErrorCode::kIoFailure, "injected fault at byte " + std::to_string(*fault_limit_));
  }
  write_all(bytes);
  if (durability_ == Durability::kFsync && ::fdatasync(fd_) != 0) {
    poisoned_ = true;
    throw Error(ErrorCode::kIoFailure, std::string("fdatasync: ") + std::strerror(errno));
  }
  file_bytes_ += bytes.size();
  ++next_lsn_;
  return record.lsn;
}

Lsn LogManager::append(LogRecord record) {
  std::lock_guard lock(mu_);
  auto& state = active_locked(record.txn_id);
  const Lsn lsn = append_locked(record);
  state.wrote = true;
  const bool is_delete =
      record.kind == RecordKind::kDeleteRowPart || record.kind == RecordKind::kDeleteColPart;
  const auto part = std::make_tuple(record.table, record.key, is_delete);
  if (record.kind == RecordKind::kInsertRowPart || record.kind == RecordKind::kDeleteRowPart) {
    state.unmatched_row_parts.insert(part);
  } else if (is_column_part(record.kind)) {
    auto it = state.unmatched_row_parts.find(part);
    if (it != state.unmatched_row_parts.end()) state.unmatched_row_parts.erase(it);
  }
  return lsn;
}

std::pair<Lsn, Lsn> LogManager::log_insert(TxnId txn, const std::string& table, GroupId group,
                                           Key key, const Row& row_values,
                                           const Row& col_values) {
  LogRecord row{0, txn, RecordKind::kInsertRowPart, table, group, key, encode_values(row_values)};
  LogRecord col{0, txn, RecordKind::kInsertColPart, table, group, key, encode_values(col_values)};
  const Lsn a = append(std::move(row));
  const Lsn b = append(std::move(col));
  return {a, b};
}

Lsn LogManager::log_update(TxnId txn, const TableSchema& schema, GroupId group, Key key,
                           const Assignments& assignments) {
  for (const auto& [col, _] : assignments) {
    if (col >= schema.column_count()) {
      throw Error(ErrorCode::kUnknownColumn, "column index " + std::to_string(col));
    }
    if (!schema.is_updatable(col)) {
      throw Error(ErrorCode::kNonUpdatableColumn, schema.columns()[col].name);
    }
  }
  return append({0, txn, RecordKind::kUpdateRow, schema.name(), group, key,
                 encode_assignments(assignments)});
}

std::pair<Lsn, Lsn> LogManager::log_delete(TxnId txn, const std::string& table, GroupId group,
                                           Key key) {
  const Lsn a = append({0, txn, RecordKind::kDeleteRowPart, table, group, key, {}});
  const Lsn b = append({0, txn, RecordKind::kDeleteColPart, table, group, key, {}});
  return {a, b};
}

Lsn LogManager::commit(TxnId txn) {
  std::lock_guard lock(mu_);
  auto& state = active_locked(txn);
  if (!state.unmatched_row_parts.empty()) {
    const auto& [table, key, del] = *state.unmatched_row_parts.begin();
    throw Error(ErrorCode::kSplitIncomplete, std::string(del ? "delete" : "insert") +
                                                 " row part without column part: " + table +
                                                 " key " + std::to_string(key));
  }
  LogRecord rec{0, txn, RecordKind::kTxnCommit, "", 0, kNoKey, {}};
  const Lsn lsn = append_locked(rec);
  finish_locked(txn, TxnOutcome::kCommitted);
  return lsn;
}

Lsn LogManager::rollback(TxnId txn) {
  std::lock_guard lock(mu_);
  active_locked(txn);
  LogRecord rec{0, txn, RecordKind::kTxnRollback, "", 0, kNoKey, {}};
  const Lsn lsn = append_locked(rec);
  finish_locked(txn, TxnOutcome::kRolledBack);
  return lsn;
}

void LogManager::finish_locked(TxnId txn, TxnOutcome outcome) {
  auto& state = txns_[txn];
  state.outcome = outcome;
  state.unmatched_row_parts.clear();
  finished_.push_back(txn);
  while (finished_.size() > kFinishedRetention) {
    txns_.erase(finished_.front());
    finished_.pop_front();
  }
}

void LogManager::finish_read_only(TxnId txn) {
  std::lock_guard lock(mu_);
  if (active_locked(txn).wrote) {
    throw Error(ErrorCode::kInvalidArgument, "txn " + std::to_string(txn) + " has logged writes");
  }
  finish_locked(txn, TxnOutcome::kCommitted);
}

// ---------------------------------------------------------------------------
// Compression

CompressionStats compress_log(const fs::path& path) {
  const auto bytes = read_file(path);
  const auto scan = scan_log_bytes(bytes);

  std::set<TxnId> rolled_back;
  for (const auto& r : scan.records) {
    if (r.record.kind == RecordKind::kTxnRollback) rolled_back.insert(r.record.txn_id);
  }

  CompressionStats stats;
  stats.records_before = scan.records.size();
  std::vector<std::uint8_t> out = encode_header();
  for (const auto& r : scan.records) {
    if (is_column_part(r.record.kind) && rolled_back.count(r.record.txn_id)) {
      ++stats.records_removed;
      continue;
    }
    out.insert(out.end(), bytes.begin() + static_cast<std::ptrdiff_t>(r.offset),
               bytes.begin() + static_cast<std::ptrdiff_t>(r.offset + r.size));
  }

  const fs::path tmp = path.string() + ".compress";
  {
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(ErrorCode::kIoFailure, "open " + tmp.string());
    std::size_t done = 0;
    while (done < out.size()) {
      const auto n = ::write(fd, out.data() + done, out.size() - done);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) {
        ::close(fd);
        throw Error(ErrorCode::kIoFailure, "write " + tmp.string());
      }
      done += static_cast<std::size_t>(n);
    }
    const bool synced = ::fsync(fd) == 0;
    ::close(fd);
    if (!synced) throw Error(ErrorCode::kIoFailure, "fsync " + tmp.string());
  }
  fs::rename(tmp, path);
  return stats;
}

// ---------------------------------------------------------------------------
// Recovery

RecoveryResult recover_bytes(std::span<const std::uint8_t> bytes,
                             const std::map<std::string, Table*>& tables) {
  const auto scan = scan_log_bytes(bytes);
  RecoveryResult result;
  result.records_scanned = scan.records.size();
  result.valid_bytes = scan.valid_bytes;
  result.torn_tail = scan.torn_tail;

  std::map<TxnId, std::vector<const LogRecord*>> pending;
  for (const auto& scanned : scan.records) {
    const auto& rec = scanned.record;
    result.max_lsn = std::max(result.max_lsn, rec.lsn);
    result.max_txn_id = std::max(result.max_txn_id, rec.txn_id);

    if (rec.kind == RecordKind::kTxnRollback) {
      pending.erase(rec.txn_id);
      continue;
    }
    if (rec.kind != RecordKind::kTxnCommit) {
      pending[rec.txn_id].push_back(&rec);
      continue;
    }

    // Commit: rebuild the txn's logical writes. A row part becomes effective
    // only once its column part follows it.
    std::vector<Mutation> mutations;
    std::deque<const LogRecord*> open_row_parts;
    auto items = std::move(pending[rec.txn_id]);
    pending.erase(rec.txn_id);
    for (const LogRecord* item : items) {
      auto table_it = tables.find(item->table);
      if (table_it == tables.end()) {
        throw Error(ErrorCode::kUnknownTable, "log references table '" + item->table + "'");
      }
      Table* table = table_it->second;
      switch (item->kind) {
        case RecordKind::kUpdateRow: {
          Mutation m;
          m.kind = Mutation::Kind::kUpdate;
          m.table = table;
          m.group = item->group_id;
          m.key = item->key;
          m.assignments = decode_assignments(item->payload);
          mutations.push_back(std::move(m));
          break;
        }
        case RecordKind::kInsertRowPart:
        case RecordKind::kDeleteRowPart: open_row_parts.push_back(item); break;
        case RecordKind::kInsertColPart:
        case RecordKind::kDeleteColPart: {
          const auto row_kind = item->kind == RecordKind::kInsertColPart
                                    ? RecordKind::kInsertRowPart
                                    : RecordKind::kDeleteRowPart;
          auto match = std::find_if(open_row_parts.begin(), open_row_parts.end(),
                                    [&](const LogRecord* r) {
                                      return r->kind == row_kind && r->table == item->table &&
                                             r->key == item->key;
                                    });
          if (match == open_row_parts.end()) {
            ++result.incomplete_splits;
            break;
          }
          Mutation m;
          m.table = table;
          m.group = item->group_id;
          m.key = item->key;
          if (row_kind == RecordKind::kInsertRowPart) {
            m.kind = Mutation::Kind::kInsert;
            m.row = table->schema().stitch(decode_values((*match)->payload),
                                           decode_values(item->payload));
          } else {
            m.kind = Mutation::Kind::kDelete;
          }
          open_row_parts.erase(match);
          mutations.push_back(std::move(m));
          break;
        }
        default: break;
      }
    }
    result.incomplete_splits += open_row_parts.size();
    apply_mutations(mutations, rec.lsn);
    ++result.committed_txns;
  }
  return result;
}

RecoveryResult recover(const fs::path& path, const std::map<std::string, Table*>& tables) {
  if (!fs::exists(path)) return {};
  const auto bytes = read_file(path);
  return recover_bytes(bytes, tables);
}

}  // namespace htap::wal
