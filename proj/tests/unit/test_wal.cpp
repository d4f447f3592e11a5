#include <fstream>
#include <iterator>
#include <map>
#include <random>

#include "doctest.h"
#include "htapstore/encoding.hpp"
#include "htapstore/storage.hpp"
#include "htapstore/wal.hpp"
#include "test_support.hpp"

using namespace htap;
using htap::testing::item_row;
using htap::testing::item_schema;
using htap::testing::TempDir;

namespace {

// Bitwise reflected CRC-32 (poly 0xEDB88320), independent of the library.
std::uint32_t crc32_oracle(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (auto b : bytes) {
    c ^= b;
    for (int i = 0; i < 8; ++i) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
  }
  return ~c;
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<wal::RecordKind> kinds(const std::filesystem::path& p) {
  std::vector<wal::RecordKind> out;
  for (const auto& r : wal::scan_log(p).records) out.push_back(r.record.kind);
  return out;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an htap::Error");
  return ErrorCode::kInvalidArgument;
}

struct LoggedTable {
  TableSchema schema = item_schema();
  Table table{item_schema(), 4};

  std::pair<Lsn, Lsn> insert(wal::LogManager& log, TxnId txn, const Row& row) {
    const Key k = std::get<std::int64_t>(row[0]);
    return log.log_insert(txn, "items", table.partition_for_key(k), k, schema.row_part(row), schema.col_part(row));
  }
};

}  // namespace

TEST_SUITE("wal") {

TEST_CASE("crc32 matches the bitwise oracle") {
  std::mt19937_64 rng(1);
  for (int n : {0, 1, 3, 64, 1000, 70000}) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    CHECK(crc32(bytes) == crc32_oracle(bytes));
  }
  const std::string check = "123456789";
  CHECK(crc32(std::vector<std::uint8_t>(check.begin(), check.end())) == 0xCBF43926u);
}

TEST_CASE("record encoding is bit exact") {
  wal::LogRecord r;
  r.lsn = 0x0102030405060708ull;
  r.txn_id = 9;
  r.kind = wal::RecordKind::kUpdateRow;
  r.table = "ab";
  r.group_id = 3;
  r.key = -2;
  r.payload = {0xAA, 0xBB};

  std::vector<std::uint8_t> body;
  put_le<std::uint64_t>(body, r.lsn);
  put_le<std::uint64_t>(body, 9);
  body.push_back(1);
  put_le<std::uint16_t>(body, 2);
  body.push_back('a');
  body.push_back('b');
  put_le<std::uint32_t>(body, 3);
  put_le<std::int64_t>(body, -2);
  put_le<std::uint32_t>(body, 2);
  body.push_back(0xAA);
  body.push_back(0xBB);
  std::vector<std::uint8_t> want;
  put_le<std::uint32_t>(want, static_cast<std::uint32_t>(body.size()));
  want.insert(want.end(), body.begin(), body.end());
  put_le<std::uint32_t>(want, crc32_oracle(want));

  CHECK(wal::encode_record(r) == want);
  const auto header = wal::encode_header();
  CHECK(header == std::vector<std::uint8_t>{'H', 'T', 'W', 'L', 1, 0});

  auto file = header;
  file.insert(file.end(), want.begin(), want.end());
  const auto scan = wal::scan_log_bytes(file);
  REQUIRE(scan.records.size() == 1);
  CHECK(scan.records[0].record == r);
  CHECK(scan.valid_bytes == file.size());
}

TEST_CASE("lsns start at 1 and strictly increase") {
  TempDir dir("wal");
  wal::LogManager log(dir / "wal.log", wal::Durability::kOsBuffer);
  LoggedTable lt;
  log.begin_txn(1);
  log.begin_txn(2);
  auto [a, b] = lt.insert(log, 1, item_row(5, 1, 1.0));
  CHECK(a == 1);
  CHECK(b == 2);
  const auto c = log.log_update(2, lt.schema, 0, 5, {{1, Value{std::int64_t{3}}}});
  CHECK(c == 3);
  CHECK(log.commit(1) == 4);
  CHECK(log.rollback(2) == 5);
}

TEST_CASE("insert and delete are split, row part first; update is one record") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  LoggedTable lt;
  {
    wal::LogManager log(path, wal::Durability::kOsBuffer);
    log.begin_txn(1);
    lt.insert(log, 1, item_row(5, 1, 1.0));
    log.log_update(1, lt.schema, lt.table.partition_for_key(5), 5, {{1, Value{std::int64_t{2}}}});
    log.log_delete(1, "items", lt.table.partition_for_key(5), 5);
    log.commit(1);
  }
  using K = wal::RecordKind;
  CHECK(kinds(path) == std::vector<K>{K::kInsertRowPart, K::kInsertColPart, K::kUpdateRow, K::kDeleteRowPart,
                                      K::kDeleteColPart, K::kTxnCommit});
}

TEST_CASE("update of a read-only column appends nothing") {
  TempDir dir("wal");
  wal::LogManager log(dir / "wal.log", wal::Durability::kOsBuffer);
  LoggedTable lt;
  log.begin_txn(1);
  const auto before = log.bytes_written();
  CHECK(code_of([&] { log.log_update(1, lt.schema, 0, 5, {{2, Value{1.0}}}); }) == ErrorCode::kNonUpdatableColumn);
  CHECK(log.bytes_written() == before);
}

TEST_CASE("txn state errors") {
  TempDir dir("wal");
  wal::LogManager log(dir / "wal.log", wal::Durability::kOsBuffer);
  LoggedTable lt;
  CHECK(code_of([&] { lt.insert(log, 77, item_row(1, 1, 1.0)); }) == ErrorCode::kTxnNotActive);
  log.begin_txn(1);
  log.rollback(1);
  CHECK(log.outcome(1) == wal::TxnOutcome::kRolledBack);
  CHECK(code_of([&] { log.rollback(1); }) == ErrorCode::kTxnNotActive);
  CHECK(code_of([&] { log.commit(1); }) == ErrorCode::kTxnNotActive);

  // A row part without its column part cannot commit.
  log.begin_txn(2);
  wal::LogRecord rp;
  rp.txn_id = 2;
  rp.kind = wal::RecordKind::kInsertRowPart;
  rp.table = "items";
  rp.key = 1;
  rp.payload = wal::encode_values({Value{std::int64_t{1}}, Value{std::int64_t{1}}});
  log.append(rp);
  CHECK(code_of([&] { log.commit(2); }) == ErrorCode::kSplitIncomplete);
}

TEST_CASE("rollback of an empty txn writes one record") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  {
    wal::LogManager log(path, wal::Durability::kOsBuffer);
    log.begin_txn(1);
    log.rollback(1);
  }
  CHECK(kinds(path) == std::vector<wal::RecordKind>{wal::RecordKind::kTxnRollback});
}

TEST_CASE("recovery replays exactly the committed txns") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  LoggedTable lt;
  {
    wal::LogManager log(path, wal::Durability::kOsBuffer);
    log.begin_txn(1);
    lt.insert(log, 1, item_row(10, 1, 1.0));
    lt.insert(log, 1, item_row(20, 2, 2.0));
    log.commit(1);
    log.begin_txn(2);
    lt.insert(log, 2, item_row(30, 3, 3.0));
    log.rollback(2);
    log.begin_txn(3);
    log.log_update(3, lt.schema, lt.table.partition_for_key(10), 10, {{1, Value{std::int64_t{11}}}});
    log.log_delete(3, "items", lt.table.partition_for_key(20), 20);
    log.commit(3);
    log.begin_txn(4);  // never finishes
    lt.insert(log, 4, item_row(40, 4, 4.0));
  }
  Table fresh(item_schema(), 4);
  const auto res = wal::recover(path, {{"items", &fresh}});
  CHECK(res.committed_txns == 2);
  CHECK(res.max_txn_id == 4);
  CHECK_FALSE(res.torn_tail);
  const auto rows = fresh.materialize(fresh.snapshot());
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].second == item_row(10, 11, 1.0));

  // The reopened log continues the lsn sequence.
  wal::LogManager log(path, wal::Durability::kOsBuffer);
  CHECK(log.last_lsn() == res.max_lsn);
}

TEST_CASE("empty and torn-header logs recover to nothing; bad magic is corrupt") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  Table t(item_schema(), 2);
  write_all(path, {});
  auto r = wal::recover(path, {{"items", &t}});
  CHECK(r.max_lsn == 0);
  write_all(path, {'H', 'T'});
  r = wal::recover(path, {{"items", &t}});
  CHECK(r.max_lsn == 0);
  write_all(path, {'X', 'T', 'W', 'L', 1, 0});
  CHECK(code_of([&] { wal::recover(path, {{"items", &t}}); }) == ErrorCode::kCorruptLogHeader);
  write_all(path, {'H', 'T', 'W', 'L', 9, 0});
  CHECK(code_of([&] { wal::recover(path, {{"items", &t}}); }) == ErrorCode::kCorruptLogHeader);
}

TEST_CASE("torn tail is ignored and trimmed on reopen") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  LoggedTable lt;
  std::size_t after_first = 0;
  {
    wal::LogManager log(path, wal::Durability::kOsBuffer);
    log.begin_txn(1);
    lt.insert(log, 1, item_row(1, 1, 1.0));
    log.commit(1);
    after_first = log.bytes_written();
    log.begin_txn(2);
    lt.insert(log, 2, item_row(2, 2, 2.0));
    log.commit(2);
  }
  auto bytes = read_all(path);
  bytes.resize(bytes.size() - 3);
  write_all(path, bytes);
  Table t(item_schema(), 4);
  const auto res = wal::recover(path, {{"items", &t}});
  CHECK(res.torn_tail);
  CHECK(res.committed_txns == 1);
  CHECK(t.materialize(t.snapshot()).size() == 1);

  // A flipped byte inside a record stops the scan there too.
  bytes = read_all(path);
  bytes[after_first - 6] ^= 0x40;
  write_all(path, bytes);
  Table t2(item_schema(), 4);
  CHECK(wal::recover(path, {{"items", &t2}}).committed_txns == 0);

  write_all(path, read_all(path));
  {
    wal::LogManager log(path, wal::Durability::kOsBuffer);
    CHECK(log.bytes_written() == wal::scan_log(path).valid_bytes);
  }
  CHECK_FALSE(wal::scan_log(path).torn_tail);
}

TEST_CASE("fault injection writes a partial record and poisons the log") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  LoggedTable lt;
  wal::LogManager log(path, wal::Durability::kOsBuffer);
  log.begin_txn(1);
  lt.insert(log, 1, item_row(1, 1, 1.0));
  const auto before = log.bytes_written();
  log.fail_after_bytes(before + 5);
  CHECK(code_of([&] { log.commit(1); }) == ErrorCode::kIoFailure);
  CHECK(std::filesystem::file_size(path) == before + 5);
  CHECK(code_of([&] { log.begin_txn(2); lt.insert(log, 2, item_row(2, 2, 2.0)); }) == ErrorCode::kIoFailure);
  Table t(item_schema(), 4);
  const auto res = wal::recover(path, {{"items", &t}});
  CHECK(res.torn_tail);
  CHECK(res.committed_txns == 0);
}

TEST_CASE("compression removes column parts of rolled-back txns only") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  LoggedTable lt;
  {
    wal::LogManager log(path, wal::Durability::kOsBuffer);
    log.begin_txn(1);
    lt.insert(log, 1, item_row(1, 1, 1.0));
    log.commit(1);
    log.begin_txn(2);
    lt.insert(log, 2, item_row(2, 2, 2.0));
    log.rollback(2);
  }
  const auto before = read_all(path);
  const auto stats = wal::compress_log(path);
  CHECK(stats.records_before == 6);
  CHECK(stats.records_removed == 1);
  using K = wal::RecordKind;
  CHECK(kinds(path) == std::vector<K>{K::kInsertRowPart, K::kInsertColPart, K::kTxnCommit, K::kInsertRowPart,
                                      K::kTxnRollback});

  // Nothing to remove: bytes unchanged.
  const auto again_before = read_all(path);
  CHECK(wal::compress_log(path).records_removed == 0);
  CHECK(read_all(path) == again_before);

  Table a(item_schema(), 4), b(item_schema(), 4);
  write_all(dir / "orig.log", before);
  wal::recover(dir / "orig.log", {{"items", &a}});
  wal::recover(path, {{"items", &b}});
  CHECK(a.materialize(a.snapshot()) == b.materialize(b.snapshot()));
}

TEST_CASE("unknown table in the log is reported") {
  TempDir dir("wal");
  const auto path = dir / "wal.log";
  LoggedTable lt;
  {
    wal::LogManager log(path, wal::Durability::kOsBuffer);
    log.begin_txn(1);
    lt.insert(log, 1, item_row(1, 1, 1.0));
    log.commit(1);
  }
  CHECK(code_of([&] { wal::recover(path, {}); }) == ErrorCode::kUnknownTable);
}

}  // TEST_SUITE
