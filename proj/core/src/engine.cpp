#include "htapstore/engine.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "htapstore/checkpoint.hpp"

namespace htap {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Txn

Txn::Txn(Engine* engine, TxnId id) : engine_(engine), id_(id) {}

Txn::Txn(Txn&& other) noexcept
    : engine_(std::exchange(other.engine_, nullptr)),
      id_(other.id_),
      state_(other.state_),
      snapshot_(std::move(other.snapshot_)),
      write_set_(std::move(other.write_set_)),
      overlay_(std::move(other.overlay_)) {}

Txn& Txn::operator=(Txn&& other) noexcept {
  if (this != &other) {
    if (engine_ && state_ == TxnState::kActive) {
      try {
        rollback();
      } catch (...) {
      }
    }
    engine_ = std::exchange(other.engine_, nullptr);
    id_ = other.id_;
    state_ = other.state_;
    snapshot_ = std::move(other.snapshot_);
    write_set_ = std::move(other.write_set_);
    overlay_ = std::move(other.overlay_);
  }
  return *this;
}

Txn::~Txn() {
  if (engine_ && state_ == TxnState::kActive) {
    try {
      rollback();
    } catch (...) {
      // A dead log cannot record the rollback; redo recovery ignores the txn anyway.
    }
  }
}

void Txn::require_active() const {
  if (!engine_ || state_ != TxnState::kActive) {
    throw Error(ErrorCode::kTxnNotActive, "txn " + std::to_string(id_));
  }
}

const TableSnapshot& Txn::table_snapshot(Table& table) {
  auto it = snapshot_.find(table.name());
  if (it == snapshot_.end()) {
    // Created after begin: nothing committed in it is visible to us.
    it = snapshot_.emplace(table.name(), table.empty_snapshot()).first;
  }
  return it->second;
}

std::optional<Row> Txn::read_row(Table& table, Key key) {
  auto ov = overlay_.find(table.name());
  if (ov != overlay_.end()) {
    auto it = ov->second.find(key);
    if (it != ov->second.end()) return it->second;
  }
  return table.point_get(key, table_snapshot(table));
}

void Txn::insert(std::string_view table_name, Row values) {
  require_active();
  Table& table = engine_->table(table_name);
  const auto& schema = table.schema();
  Row row = schema.conform(values);
  const Key key = std::get<std::int64_t>(row[schema.primary_key_index()]);
  if (read_row(table, key)) {
    throw Error(ErrorCode::kDuplicateKey, table.name() + " key " + std::to_string(key));
  }
  const GroupId g = table.partition_for_key(key);
  engine_->log().log_insert(id_, table.name(), g, key, schema.row_part(row), schema.col_part(row));
  overlay_[table.name()][key] = row;
  write_set_.push_back({Mutation::Kind::kInsert, &table, g, key, std::move(row), {}});
}

void Txn::update(std::string_view table_name, Key key,
                 const std::vector<std::pair<std::string, Value>>& assignments) {
  require_active();
  Table& table = engine_->table(table_name);
  const auto& schema = table.schema();
  wal::Assignments resolved;
  for (const auto& [name, value] : assignments) {
    const auto col = schema.column_index(name);
    if (!schema.is_updatable(col)) throw Error(ErrorCode::kNonUpdatableColumn, name);
    if (col == schema.primary_key_index()) {
      throw Error(ErrorCode::kNonUpdatableColumn, name + " (primary key)");
    }
    resolved.emplace_back(col, coerce(value, schema.columns()[col].type));
  }
  auto current = read_row(table, key);
  if (!current) throw Error(ErrorCode::kKeyNotFound, table.name() + " key " + std::to_string(key));
  const GroupId g = table.partition_for_key(key);
  engine_->log().log_update(id_, schema, g, key, resolved);
  for (const auto& [col, value] : resolved) (*current)[col] = value;
  overlay_[table.name()][key] = std::move(*current);
  write_set_.push_back({Mutation::Kind::kUpdate, &table, g, key, {}, std::move(resolved)});
}

void Txn::remove(std::string_view table_name, Key key) {
  require_active();
  Table& table = engine_->table(table_name);
  if (!read_row(table, key)) {
    throw Error(ErrorCode::kKeyNotFound, table.name() + " key " + std::to_string(key));
  }
  const GroupId g = table.partition_for_key(key);
  engine_->log().log_delete(id_, table.name(), g, key);
  overlay_[table.name()][key] = std::nullopt;
  write_set_.push_back({Mutation::Kind::kDelete, &table, g, key, {}, {}});
}

std::optional<Row> Txn::get(std::string_view table_name, Key key) {
  require_active();
  return read_row(engine_->table(table_name), key);
}

query::AggregateResult Txn::aggregate(const query::AggregateQuery& q) {
  require_active();
  Table& table = engine_->table(q.table);
  TableSnapshot snap = table_snapshot(table);
  if (engine_->options().propagation_delay.count() > 0) {
    const auto lagged = engine_->olap_snapshot(table);
    for (std::size_t g = 0; g < snap.watermarks.size(); ++g) {
      snap.watermarks[g] = std::min(snap.watermarks[g], lagged.watermark(static_cast<GroupId>(g)));
    }
    snap.pin = std::make_shared<std::pair<std::shared_ptr<const void>, std::shared_ptr<const void>>>(
        snap.pin, lagged.pin);
  }
  auto ov = overlay_.find(table.name());
  return query::aggregate(table, q, snap, ov == overlay_.end() ? nullptr : &ov->second);
}

namespace {

void check_key_column(const Table& table, const std::string& column) {
  const auto idx = table.schema().column_index(column);
  if (idx != table.schema().primary_key_index()) {
    throw Error(ErrorCode::kInvalidArgument,
                "WHERE must name the primary key " + table.schema().primary_key());
  }
}

}  // namespace

StmtResult Txn::exec(const Statement& stmt) {
  require_active();
  StmtResult out;
  std::visit(
      [&](const auto& st) {
        using T = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<T, InsertStmt>) {
          insert(st.table, st.values);
        } else if constexpr (std::is_same_v<T, UpdateStmt>) {
          check_key_column(engine_->table(st.table), st.key_column);
          update(st.table, st.key, st.assignments);
        } else if constexpr (std::is_same_v<T, DeleteStmt>) {
          check_key_column(engine_->table(st.table), st.key_column);
          remove(st.table, st.key);
        } else if constexpr (std::is_same_v<T, GetStmt>) {
          check_key_column(engine_->table(st.table), st.key_column);
          out.row = get(st.table, st.key);
        } else {
          out.aggregate = aggregate(st.query);
        }
      },
      stmt);
  return out;
}

Lsn Txn::commit() {
  require_active();
  return engine_->commit(*this);
}

void Txn::rollback() {
  require_active();
  engine_->rollback(*this);
}

// ---------------------------------------------------------------------------
// Engine

Engine::Engine(fs::path dir, EngineOptions options) : dir_(std::move(dir)), options_(options) {
  fs::create_directories(dir_);
  load_catalog();
  for (auto& [_, t] : tables_) t->set_reader_lag(options_.propagation_delay);
  const auto tables = table_map();
  const auto ckpt = dir_ / kCheckpointFile;
  if (options_.load_checkpoint && fs::exists(ckpt)) checkpoint::load(ckpt, tables);
  recovery_ = wal::recover(dir_ / kLogFile, tables);
  log_ = std::make_unique<wal::LogManager>(dir_ / kLogFile, options_.durability);
  next_txn_ = std::max(recovery_.max_txn_id, log_->max_txn_id_seen()) + 1;
}

Engine::~Engine() = default;

void Engine::check_alive() const {
  if (crashed_) throw Error(ErrorCode::kIoFailure, "engine crashed; reopen to recover");
}

void Engine::load_catalog() {
  const auto path = dir_ / kCatalogFile;
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
    for (const auto& t : j.at("tables")) {
      std::vector<ColumnDef> cols;
      for (const auto& c : t.at("columns")) {
        cols.push_back({c.at("name").get<std::string>(),
                        static_cast<ValueType>(c.at("type").get<int>())});
      }
      TableSchema schema(t.at("name").get<std::string>(), std::move(cols),
                         t.at("primary_key").get<std::string>(),
                         t.at("update_set").get<std::set<std::string>>());
      const auto groups = t.at("num_groups").get<std::uint32_t>();
      auto name = schema.name();
      tables_.emplace(std::move(name), std::make_unique<Table>(std::move(schema), groups));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoFailure, "corrupt catalog " + path.string() + ": " + e.what());
  }
}

void Engine::persist_catalog() const {
  nlohmann::json j;
  j["tables"] = nlohmann::json::array();
  for (const auto& [name, t] : tables_) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& c : t->schema().columns()) {
      cols.push_back({{"name", c.name}, {"type", static_cast<int>(c.type)}});
    }
    j["tables"].push_back({{"name", name},
                           {"columns", cols},
                           {"primary_key", t->schema().primary_key()},
                           {"update_set", t->schema().update_set()},
                           {"num_groups", t->group_count()}});
  }
  const auto path = dir_ / kCatalogFile;
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << "\n";
    if (!out) throw Error(ErrorCode::kIoFailure, "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

Table& Engine::create_table(TableSchema schema, std::uint32_t num_groups) {
  check_alive();
  if (num_groups == 0) throw Error(ErrorCode::kInvalidArgument, "num_groups must be >= 1");
  std::lock_guard lock(catalog_mu_);
  if (tables_.count(schema.name())) throw Error(ErrorCode::kDuplicateTable, schema.name());
  auto name = schema.name();
  auto table = std::make_unique<Table>(std::move(schema), num_groups);
  table->set_reader_lag(options_.propagation_delay);
  Table& ref = *table;
  tables_.emplace(std::move(name), std::move(table));
  persist_catalog();
  return ref;
}

Table* Engine::find_table(std::string_view name) {
  std::lock_guard lock(catalog_mu_);
  auto it = tables_.find(name);
  return it == tables_.end() ? nullptr : it->second.get();
}

Table& Engine::table(std::string_view name) {
  if (Table* t = find_table(name)) return *t;
  throw Error(ErrorCode::kUnknownTable, std::string(name));
}

const Table& Engine::table(std::string_view name) const {
  return const_cast<Engine*>(this)->table(name);
}

std::vector<const Table*> Engine::tables() const {
  std::lock_guard lock(catalog_mu_);
  std::vector<const Table*> out;
  for (const auto& [_, t] : tables_) out.push_back(t.get());
  return out;
}

std::map<std::string, Table*> Engine::table_map() {
  std::lock_guard lock(catalog_mu_);
  std::map<std::string, Table*> out;
  for (auto& [name, t] : tables_) out.emplace(name, t.get());
  return out;
}

Txn Engine::begin() {
  check_alive();
  Txn txn(this, next_txn_.fetch_add(1));
  log_->begin_txn(txn.id_);
  {
    std::lock_guard lock(catalog_mu_);
    for (const auto& [name, t] : tables_) txn.snapshot_.emplace(name, t->snapshot());
  }
  ++active_;
  return txn;
}

TableSnapshot Engine::olap_snapshot(const Table& table) const {
  return table.snapshot(options_.propagation_delay);
}

std::optional<Row> Engine::point_get(std::string_view name, Key key) {
  const Table& t = table(name);
  return t.point_get(key, t.snapshot());
}

query::AggregateResult Engine::aggregate(const query::AggregateQuery& q) {
  const Table& t = table(q.table);
  return query::aggregate(t, q, olap_snapshot(t));
}

Lsn Engine::commit(Txn& txn) {
  check_alive();
  if (txn.write_set_.empty()) {
    log_->finish_read_only(txn.id_);
    txn.state_ = TxnState::kCommitted;
    txn.snapshot_.clear();
    --active_;
    ++committed_;
    return 0;
  }

  std::lock_guard commit_lock(commit_mu_);

  // First committer wins: any key we wrote that changed after our snapshot
  // aborts us.
  for (const auto& op : txn.write_set_) {
    const RowGroup& group = op.table->group(op.group);
    Lsn modified = 0;
    {
      auto lock = group.lock_shared();
      modified = group.last_modified(op.key);
    }
    if (modified > txn.table_snapshot(*op.table).watermark(op.group)) {
      log_->rollback(txn.id_);
      txn.state_ = TxnState::kRolledBack;
      txn.snapshot_.clear();
      --active_;
      ++aborted_;
      throw Error(ErrorCode::kSecondWriterAborted,
                  op.table->name() + " key " + std::to_string(op.key) + " changed at lsn " +
                      std::to_string(modified));
    }
  }

  Lsn lsn = 0;
  try {
    lsn = log_->commit(txn.id_);
  } catch (...) {
    txn.state_ = TxnState::kRolledBack;
    txn.snapshot_.clear();
    --active_;
    ++aborted_;
    throw;
  }

  if (crash_next_commit_.exchange(false)) {
    crashed_ = true;
    txn.state_ = TxnState::kCommitted;
    --active_;
    throw Error(ErrorCode::kSimulatedCrash, "crash after commit record lsn " + std::to_string(lsn));
  }

  std::vector<Mutation> mutations;
  mutations.reserve(txn.write_set_.size());
  std::map<std::string, std::size_t> per_table;
  for (auto& op : txn.write_set_) {
    Mutation m;
    m.kind = op.kind;
    m.table = op.table;
    m.group = op.group;
    m.key = op.key;
    m.row = std::move(op.row);
    m.assignments = std::move(op.assignments);
    mutations.push_back(std::move(m));
    ++per_table[op.table->name()];
  }
  try {
    apply_mutations(mutations, lsn);
  } catch (const std::exception& e) {
    // The commit record is durable; recovery will redo these effects.
    std::fprintf(stderr, "htapstore: apply failed after commit lsn %llu: %s\n",
                 static_cast<unsigned long long>(lsn), e.what());
    std::abort();
  }

  txn.state_ = TxnState::kCommitted;
  txn.snapshot_.clear();
  --active_;
  ++committed_;

  std::lock_guard listeners_lock(listeners_mu_);
  for (const auto& [_, listener] : listeners_) {
    for (const auto& [table, n] : per_table) listener(table, n);
  }
  return lsn;
}

void Engine::rollback(Txn& txn) {
  log_->rollback(txn.id_);
  txn.state_ = TxnState::kRolledBack;
  txn.snapshot_.clear();
  txn.overlay_.clear();
  --active_;
  ++aborted_;
}

HybridResult Engine::run_hybrid(const HybridScript& script) {
  HybridResult out;
  Txn txn = begin();
  for (std::size_t i = 0; i < script.steps.size(); ++i) {
    const auto& stmt = script.steps[i];
    HybridResult::Step step;
    step.olap = is_olap(stmt);
    step.text = to_text(stmt);
    const auto t0 = Clock::now();
    try {
      step.result = txn.exec(stmt);
    } catch (const Error& e) {
      step.elapsed = Clock::now() - t0;
      out.steps.push_back(std::move(step));
      out.failed_step = i;
      out.error_code = e.code();
      out.error = e.what();
      txn.rollback();
      return out;
    }
    step.elapsed = Clock::now() - t0;
    out.steps.push_back(std::move(step));
  }
  const auto t0 = Clock::now();
  try {
    out.commit_lsn = txn.commit();
    out.committed = true;
  } catch (const Error& e) {
    out.failed_step = script.steps.size();
    out.error_code = e.code();
    out.error = e.what();
    if (txn.state() == TxnState::kActive) txn.rollback();
  }
  out.commit_elapsed = Clock::now() - t0;
  return out;
}

wal::CompressionStats Engine::compress_log() {
  check_alive();
  std::lock_guard commit_lock(commit_mu_);
  if (active_ > 0 || log_->has_active_txns()) {
    throw Error(ErrorCode::kActiveTxns, std::to_string(active_.load()) + " active");
  }
  log_->close();
  log_.reset();
  const auto stats = wal::compress_log(dir_ / kLogFile);
  log_ = std::make_unique<wal::LogManager>(dir_ / kLogFile, options_.durability);
  return stats;
}

std::vector<std::uint8_t> Engine::checkpoint_bytes() const {
  std::vector<std::uint8_t> out;
  for (const Table* t : tables()) {
    const auto bytes = checkpoint::encode_table(*t);
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

void Engine::write_checkpoint(const fs::path& path) const {
  const auto list = tables();
  checkpoint::write(path, list);
}

int Engine::add_commit_listener(CommitListener listener) {
  std::lock_guard lock(listeners_mu_);
  const int id = next_listener_++;
  listeners_.emplace(id, std::move(listener));
  return id;
}

void Engine::remove_commit_listener(int id) {
  std::lock_guard lock(listeners_mu_);
  listeners_.erase(id);
}

void Engine::crash_after_next_commit_record() { crash_next_commit_ = true; }

}  // namespace htap
