#include "htapstore/nearml.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace htap::nearml {

FeatureLayout::FeatureLayout(const FeatureConfig& config) {
  const std::size_t h = config.hash_buckets;
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    const std::size_t off = at;
    at += n;
    return off;
  };
  time_of_day = take(h);
  location = take(h);
  pv = take(1);
  buy = take(1);
  cart = take(1);
  favorite = take(1);
  duration_seconds = take(1);
  duration_hash = take(h);
  text_query = take(h);
  image_query = take(h);
  price_lo = take(1);
  price_hi = take(1);
  inventory = take(1);
  category = take(config.categories);
  subcategory = take(config.subcategories);
  style = take(h);
  dim = at;
}

std::uint32_t stable_hash(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

namespace {

void put_hashed(std::vector<double>& f, std::size_t offset, std::size_t buckets, std::string_view s) {
  if (s.empty() || buckets == 0) return;
  f[offset + stable_hash(s) % buckets] = 1.0;
}

double unit(double v, double max) {
  if (!(max > 0)) return 0;
  return std::clamp(v / max, 0.0, 1.0);
}

std::optional<double> parse_seconds(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace

SessionState extract_features(const SessionEvents& events, const Commodity& commodity,
                              const FeatureConfig& config) {
  if (events.t < 0) throw Error(ErrorCode::kInvalidArgument, "t must be >= 0");
  if (commodity.category < 0 || static_cast<std::size_t>(commodity.category) >= config.categories) {
    throw Error(ErrorCode::kInvalidArgument, "category " + std::to_string(commodity.category) +
                                                 " outside [0, " + std::to_string(config.categories) + ")");
  }
  if (commodity.subcategory < 0 ||
      static_cast<std::size_t>(commodity.subcategory) >= config.subcategories) {
    throw Error(ErrorCode::kInvalidArgument,
                "subcategory " + std::to_string(commodity.subcategory) + " outside [0, " +
                    std::to_string(config.subcategories) + ")");
  }
  const FeatureLayout L(config);
  const std::size_t h = config.hash_buckets;
  SessionState s{events, commodity, std::vector<double>(L.dim, 0.0)};
  auto& f = s.features;

  put_hashed(f, L.time_of_day, h, events.time_of_day);
  put_hashed(f, L.location, h, events.location);
  f[L.pv] = events.pv ? 1.0 : 0.0;
  f[L.buy] = events.buy ? 1.0 : 0.0;
  f[L.cart] = events.cart ? 1.0 : 0.0;
  f[L.favorite] = events.favorite ? 1.0 : 0.0;
  if (auto secs = parse_seconds(events.duration)) {
    f[L.duration_seconds] = unit(*secs, config.duration_max);
  } else {
    put_hashed(f, L.duration_hash, h, events.duration);
  }
  put_hashed(f, L.text_query, h, events.text_query);
  put_hashed(f, L.image_query, h, events.image_query);
  f[L.price_lo] = unit(commodity.price_lo, config.price_max);
  f[L.price_hi] = unit(commodity.price_hi, config.price_max);
  f[L.inventory] = unit(static_cast<double>(commodity.inventory), config.inventory_max);
  f[L.category + static_cast<std::size_t>(commodity.category)] = 1.0;
  f[L.subcategory + static_cast<std::size_t>(commodity.subcategory)] = 1.0;
  put_hashed(f, L.style, h, commodity.style);
  return s;
}

SessionState extract_features(const SessionEvents& events, const CommodityCatalog& catalog,
                              const FeatureConfig& config) {
  auto it = catalog.find(events.commodity_id);
  if (it == catalog.end()) {
    throw Error(ErrorCode::kUnknownCommodity, std::to_string(events.commodity_id));
  }
  return extract_features(events, it->second, config);
}

double compute_reward(const RewardComponents& c, const RewardWeights& w) {
  if (!std::isfinite(w.beta)) throw Error(ErrorCode::kNonFiniteInput, "beta");
  for (std::size_t j = 0; j < 6; ++j) {
    if (!std::isfinite(w.lambda[j])) throw Error(ErrorCode::kNonFiniteInput, "lambda" + std::to_string(j + 1));
    if (!std::isfinite(c.r[j])) throw Error(ErrorCode::kNonFiniteInput, "component " + std::to_string(j));
  }
  double r = w.beta;
  for (std::size_t j = 0; j < 6; ++j) r += w.lambda[j] * c.r[j];
  return r;
}

// ---------------------------------------------------------------------------
// Model / Recommender

std::optional<std::size_t> Model::index_of(CommodityId id) const {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

double Model::score_at(std::size_t index, const std::vector<double>& features) const {
  const auto& w = *rows[index];
  const std::size_t n = std::min(w.size(), features.size());
  return std::inner_product(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(n), features.begin(), 0.0);
}

double Model::score(CommodityId id, const std::vector<double>& features) const {
  auto idx = index_of(id);
  if (!idx) throw Error(ErrorCode::kUnknownCommodity, std::to_string(id));
  return score_at(*idx, features);
}

std::shared_ptr<const Model> make_model(std::vector<CommodityId> ids, std::size_t dim) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto m = std::make_shared<Model>();
  m->dim = dim;
  auto zeros = std::make_shared<const std::vector<double>>(dim, 0.0);
  m->rows.assign(ids.size(), zeros);
  m->ids = std::move(ids);
  return m;
}

Recommender::Recommender(std::vector<CommodityId> catalog, std::size_t dim, RecommenderConfig config)
    : config_(config), model_(make_model(std::move(catalog), dim)), rng_(config.seed) {
  if (!(config_.epsilon >= 0 && config_.epsilon <= 1)) {
    throw Error(ErrorCode::kInvalidArgument, "epsilon must be in [0, 1]");
  }
  if (!std::isfinite(config_.learning_rate) || config_.learning_rate < 0) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be finite and >= 0");
  }
}

std::shared_ptr<const Model> Recommender::model() const {
  std::lock_guard lock(model_mu_);
  return model_;
}

std::uint64_t Recommender::swap_model(std::shared_ptr<const Model> next) {
  std::lock_guard wlock(write_mu_);
  auto copy = std::make_shared<Model>(*next);
  std::lock_guard lock(model_mu_);
  copy->version = model_->version + 1;
  model_ = std::move(copy);
  return model_->version;
}

Action Recommender::recommend(const SessionState& state, std::size_t k) {
  const auto m = model();
  const std::size_t n = m->ids.size();
  if (n == 0) throw Error(ErrorCode::kEmptyCatalog, "no commodities to recommend");
  if (k == 0 || k > n) {
    throw Error(ErrorCode::kInvalidArgument, "k=" + std::to_string(k) + " with catalog size " + std::to_string(n));
  }
  std::vector<std::pair<double, std::size_t>> scored(n);
  for (std::size_t i = 0; i < n; ++i) scored[i] = {m->score_at(i, state.features), i};
  // ids are ascending, so index order breaks ties by id.
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });

  Action action;
  action.model_version = m->version;
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> picks(k);
  for (std::size_t i = 0; i < k; ++i) {
    picks[i] = scored[i].second;
    taken[picks[i]] = true;
  }
  if (config_.epsilon > 0 && k < n) {
    std::lock_guard lock(rng_mu_);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (std::size_t i = 0; i < k; ++i) {
      if (coin(rng_) >= config_.epsilon) continue;
      std::vector<std::size_t> unseen;
      for (std::size_t j = 0; j < n; ++j) {
        if (!taken[j]) unseen.push_back(j);
      }
      if (unseen.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, unseen.size() - 1);
      const std::size_t replacement = unseen[pick(rng_)];
      taken[picks[i]] = false;
      taken[replacement] = true;
      picks[i] = replacement;
    }
  }
  for (auto p : picks) action.items.push_back(m->ids[p]);
  return action;
}

void Recommender::observe(const SessionState& state, const Action& action, double reward) {
  if (!std::isfinite(reward)) throw Error(ErrorCode::kNonFiniteReward, std::to_string(reward));
  std::lock_guard wlock(write_mu_);
  auto next = std::make_shared<Model>(*model());
  const auto& x = state.features;
  for (CommodityId id : action.items) {
    auto idx = next->index_of(id);
    if (!idx) throw Error(ErrorCode::kUnknownCommodity, std::to_string(id));
    const double err = reward - next->score_at(*idx, x);
    auto row = std::make_shared<std::vector<double>>(*next->rows[*idx]);
    const std::size_t d = std::min(row->size(), x.size());
    for (std::size_t j = 0; j < d; ++j) (*row)[j] += config_.learning_rate * err * x[j];
    next->rows[*idx] = std::move(row);
  }
  std::lock_guard lock(model_mu_);
  next->version = model_->version;
  model_ = std::move(next);
}

// ---------------------------------------------------------------------------
// Table layouts and distillation

TableSchema sessions_schema(std::string name) {
  return TableSchema(std::move(name),
                     {{"session_key", ValueType::kInt64},
                      {"customer_id", ValueType::kInt64},
                      {"t", ValueType::kInt64},
                      {"time_of_day", ValueType::kString},
                      {"location", ValueType::kString},
                      {"pv", ValueType::kBool},
                      {"buy", ValueType::kBool},
                      {"cart", ValueType::kBool},
                      {"favorite", ValueType::kBool},
                      {"duration", ValueType::kString},
                      {"text_query", ValueType::kString},
                      {"image_query", ValueType::kString},
                      {"commodity_id", ValueType::kInt64}},
                     "session_key", {"session_key", "pv", "buy", "cart", "favorite", "duration"});
}

TableSchema commodity_schema(std::string name) {
  return TableSchema(std::move(name),
                     {{"commodity_id", ValueType::kInt64},
                      {"price_lo", ValueType::kFloat64},
                      {"price_hi", ValueType::kFloat64},
                      {"inventory", ValueType::kInt64},
                      {"category", ValueType::kInt64},
                      {"subcategory", ValueType::kInt64},
                      {"style", ValueType::kString}},
                     "commodity_id", {"commodity_id", "price_lo", "price_hi", "inventory"});
}

Row session_row(std::int64_t session_key, const SessionEvents& e) {
  return {session_key, e.customer_id, e.t, e.time_of_day, e.location, e.pv, e.buy,
          e.cart, e.favorite, e.duration, e.text_query, e.image_query, e.commodity_id};
}

SessionEvents session_from_row(const TableSchema& schema, const Row& row) {
  auto get = [&](const char* col) -> const Value& { return row[schema.column_index(col)]; };
  SessionEvents e;
  e.customer_id = std::get<std::int64_t>(get("customer_id"));
  e.t = std::get<std::int64_t>(get("t"));
  e.time_of_day = std::get<std::string>(get("time_of_day"));
  e.location = std::get<std::string>(get("location"));
  e.pv = std::get<bool>(get("pv"));
  e.buy = std::get<bool>(get("buy"));
  e.cart = std::get<bool>(get("cart"));
  e.favorite = std::get<bool>(get("favorite"));
  e.duration = std::get<std::string>(get("duration"));
  e.text_query = std::get<std::string>(get("text_query"));
  e.image_query = std::get<std::string>(get("image_query"));
  e.commodity_id = std::get<std::int64_t>(get("commodity_id"));
  return e;
}

Row commodity_row(const Commodity& c) {
  return {c.id, c.price_lo, c.price_hi, c.inventory, c.category, c.subcategory, c.style};
}

Commodity commodity_from_row(const TableSchema& schema, const Row& row) {
  auto get = [&](const char* col) -> const Value& { return row[schema.column_index(col)]; };
  Commodity c;
  c.id = std::get<std::int64_t>(get("commodity_id"));
  c.price_lo = std::get<double>(get("price_lo"));
  c.price_hi = std::get<double>(get("price_hi"));
  c.inventory = std::get<std::int64_t>(get("inventory"));
  c.category = std::get<std::int64_t>(get("category"));
  c.subcategory = std::get<std::int64_t>(get("subcategory"));
  c.style = std::get<std::string>(get("style"));
  return c;
}

void TrainingBatch::write_csv(std::ostream& out) const {
  out << "customer_id,t";
  for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
  out << ",label\n";
  char buf[32];
  for (const auto& s : samples) {
    out << s.customer_id << ',' << s.t;
    for (double v : s.features) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << ',' << s.label << '\n';
  }
}

TrainingBatch distill(const TableSnapshot& sessions, const TableSnapshot& commodities,
                      const FeatureConfig& config) {
  if (!sessions.table || !commodities.table) {
    throw Error(ErrorCode::kInvalidArgument, "distill needs snapshots bound to tables");
  }
  TrainingBatch batch;
  batch.dim = FeatureLayout(config).dim;
  const auto& sschema = sessions.table->schema();
  const auto& cschema = commodities.table->schema();
  for (const auto& [key, row] : sessions.table->materialize(sessions)) {
    const SessionEvents e = session_from_row(sschema, row);
    const auto crow = commodities.table->point_get(e.commodity_id, commodities);
    if (!crow) throw Error(ErrorCode::kUnknownCommodity, std::to_string(e.commodity_id));
    auto state = extract_features(e, commodity_from_row(cschema, *crow), config);
    batch.samples.push_back({e.customer_id, e.t, std::move(state.features), e.buy ? 1.0 : 0.0});
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Triggers

TriggerManager::TriggerManager(Engine& engine) : engine_(engine) {
  thread_ = std::thread([this] { worker(); });
  listener_id_ = engine_.add_commit_listener(
      [this](const std::string& table, std::size_t writes) { on_commit(table, writes); });
}

TriggerManager::~TriggerManager() {
  engine_.remove_commit_listener(listener_id_);
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

ChangeTrigger TriggerManager::register_trigger(const std::string& table, std::uint64_t threshold,
                                               RetrainCallback callback, Recommender* target) {
  if (!engine_.find_table(table)) throw Error(ErrorCode::kUnknownTable, table);
  if (threshold == 0) throw Error(ErrorCode::kInvalidThreshold, "threshold must be >= 1");
  std::lock_guard lock(mu_);
  Entry e;
  e.info = {next_id_++, table, threshold};
  e.callback = std::move(callback);
  e.target = target;
  const auto info = e.info;
  entries_.emplace(info.id, std::move(e));
  return info;
}

void TriggerManager::on_commit(const std::string& table, std::size_t writes) {
  std::lock_guard lock(mu_);
  bool queued = false;
  for (auto& [id, e] : entries_) {
    if (e.info.table != table) continue;
    e.writes += writes;
    const std::uint64_t due = e.writes / e.info.threshold;
    if (due == e.scheduled) continue;
    const Table* t = engine_.find_table(table);
    // Several crossings in one commit share one snapshot.
    const TableSnapshot snap = t->snapshot();
    while (e.scheduled < due) queue_.push_back({id, ++e.scheduled, snap});
    queued = true;
  }
  if (queued) cv_.notify_one();
}

void TriggerManager::worker() {
  std::unique_lock lock(mu_);
  for (;;) {
    cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
    if (queue_.empty()) return;  // stopping
    Job job = std::move(queue_.front());
    queue_.pop_front();
    running_job_ = true;
    auto& entry = entries_.at(job.trigger_id);
    RetrainCallback cb = entry.callback;
    Recommender* target = entry.target;
    lock.unlock();

    TriggerEvent ev{job.trigger_id, job.firing, job.snapshot.table, std::move(job.snapshot)};
    try {
      auto next = cb ? cb(ev) : nullptr;
      if (next && target) target->swap_model(std::move(next));
    } catch (const std::exception& ex) {
      std::fprintf(stderr, "htapstore: trigger %d firing %llu failed: %s\n", job.trigger_id,
                   static_cast<unsigned long long>(job.firing), ex.what());
    }
    ev.snapshot = TableSnapshot{};

    lock.lock();
    ++entries_.at(job.trigger_id).fired;
    running_job_ = false;
    if (queue_.empty()) idle_cv_.notify_all();
  }
}

void TriggerManager::drain() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && !running_job_; });
}

std::uint64_t TriggerManager::fired_count(int trigger_id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(trigger_id);
  return it == entries_.end() ? 0 : it->second.fired;
}

std::uint64_t TriggerManager::committed_writes(int trigger_id) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(trigger_id);
  return it == entries_.end() ? 0 : it->second.writes;
}

}  // namespace htap::nearml
