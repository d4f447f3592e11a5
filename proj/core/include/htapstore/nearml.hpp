#pragma once

// In-process online learning next to the store: session state features,
// weighted reward, a per-commodity linear recommender, and write-count
// triggers that retrain from a snapshot and swap the model in.

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "htapstore/engine.hpp"

namespace htap::nearml {

using CommodityId = std::int64_t;

/// Raw events of one customer session step, before encoding.
struct SessionEvents {
  std::int64_t customer_id = 0;
  std::int64_t t = 0;
  std::string time_of_day;  // portrait
  std::string location;
  bool pv = false;  // click feedback
  bool buy = false;
  bool cart = false;
  bool favorite = false;
  std::string duration;  // seconds when numeric, else hashed
  std::string text_query;
  std::string image_query;  // opaque reference
  CommodityId commodity_id = 0;
};

struct Commodity {
  CommodityId id = 0;
  double price_lo = 0;  // real-time price range
  double price_hi = 0;
  std::int64_t inventory = 0;
  std::int64_t category = 0;  // one-hot index
  std::int64_t subcategory = 0;
  std::string style;
};

using CommodityCatalog = std::map<CommodityId, Commodity>;

struct FeatureConfig {
  std::size_t hash_buckets = 16;
  std::size_t categories = 8;
  std::size_t subcategories = 16;
  double price_max = 1000.0;  // prices normalized over [0, price_max]
  double inventory_max = 10000.0;
  double duration_max = 600.0;  // seconds
};

/// Offsets of each feature inside the vector. Order: portrait, clicks,
/// queries, labels, commodity info.
struct FeatureLayout {
  explicit FeatureLayout(const FeatureConfig& config);

  std::size_t time_of_day, location;
  std::size_t pv, buy, cart, favorite, duration_seconds, duration_hash;
  std::size_t text_query, image_query;
  std::size_t price_lo, price_hi, inventory;
  std::size_t category, subcategory, style;
  std::size_t dim;
};

struct SessionState {
  SessionEvents events;
  Commodity commodity;
  std::vector<double> features;
};

// 32-bit FNV-1a; stable across platforms and runs.
std::uint32_t stable_hash(std::string_view s);

// Throws InvalidArgument for negative t or one-hot indices outside the
// configured cardinalities.
SessionState extract_features(const SessionEvents& events, const Commodity& commodity,
                              const FeatureConfig& config = {});
// Throws UnknownCommodity.
SessionState extract_features(const SessionEvents& events, const CommodityCatalog& catalog,
                              const FeatureConfig& config = {});

// Components in weight order: portrait, click, text, image, labels, item.
struct RewardComponents {
  std::array<double, 6> r{};
};

struct RewardWeights {
  double beta = 0;
  std::array<double, 6> lambda{};
};

// beta + sum lambda_j * r_j. Throws NonFiniteInput.
double compute_reward(const RewardComponents& c, const RewardWeights& w);

/// Immutable model version: one weight row per commodity, ids ascending.
struct Model {
  std::uint64_t version = 0;
  std::size_t dim = 0;
  std::vector<CommodityId> ids;
  std::vector<std::shared_ptr<const std::vector<double>>> rows;

  std::optional<std::size_t> index_of(CommodityId id) const;
  double score_at(std::size_t index, const std::vector<double>& features) const;
  double score(CommodityId id, const std::vector<double>& features) const;
};

// Zero weights for the given commodities.
std::shared_ptr<const Model> make_model(std::vector<CommodityId> ids, std::size_t dim);

struct RecommenderConfig {
  double learning_rate = 0.05;
  double epsilon = 0.1;
  std::uint64_t seed = 42;
};

struct Action {
  std::vector<CommodityId> items;
  std::uint64_t model_version = 0;
};

/// Linear scorer per commodity with epsilon-greedy top-k selection.
/// All methods are thread-safe; each call reads one model version.
class Recommender {
 public:
  Recommender(std::vector<CommodityId> catalog, std::size_t dim, RecommenderConfig config = {});

  // Throws EmptyCatalog, InvalidArgument (k == 0 or k > catalog size).
  Action recommend(const SessionState& state, std::size_t k);
  // One squared-error SGD step per recommended item. Throws NonFiniteReward.
  void observe(const SessionState& state, const Action& action, double reward);

  std::shared_ptr<const Model> model() const;
  std::uint64_t version() const { return model()->version; }
  // Installs `next` with version = current + 1; returns the new version.
  std::uint64_t swap_model(std::shared_ptr<const Model> next);
  const RecommenderConfig& config() const { return config_; }

 private:
  RecommenderConfig config_;
  mutable std::mutex model_mu_;  // guards the pointer, not the model
  std::shared_ptr<const Model> model_;
  std::mutex write_mu_;  // serializes observe and swap
  std::mutex rng_mu_;
  std::mt19937_64 rng_;
};

// Table layouts used by the data path. Sessions: one row per session step;
// click flags and duration are updatable. Commodities: price range and
// inventory are updatable, the rest is read-only.
TableSchema sessions_schema(std::string name = "sessions");
TableSchema commodity_schema(std::string name = "commodity");
Row session_row(std::int64_t session_key, const SessionEvents& e);
SessionEvents session_from_row(const TableSchema& schema, const Row& row);
Row commodity_row(const Commodity& c);
Commodity commodity_from_row(const TableSchema& schema, const Row& row);

struct Sample {
  std::int64_t customer_id = 0;
  std::int64_t t = 0;
  std::vector<double> features;
  double label = 0;  // buy flag
};

struct TrainingBatch {
  std::size_t dim = 0;
  std::vector<Sample> samples;

  // Header: customer_id,t,f0..f{dim-1},label
  void write_csv(std::ostream& out) const;
};

// Reads the sessions table at `sessions`, joins each row to its commodity at
// `commodities`, and encodes it. Samples are in session-key order. Throws
// UnknownCommodity.
TrainingBatch distill(const TableSnapshot& sessions, const TableSnapshot& commodities,
                      const FeatureConfig& config = {});

struct TriggerEvent {
  int trigger_id = 0;
  std::uint64_t firing = 0;  // 1-based ordinal
  const Table* table = nullptr;
  TableSnapshot snapshot;  // taken right after the crossing commit
};

// Returns a replacement model, or nullptr to keep the current one.
using RetrainCallback = std::function<std::shared_ptr<const Model>(const TriggerEvent&)>;

struct ChangeTrigger {
  int id = 0;
  std::string table;
  std::uint64_t threshold = 0;
};

/// Counts committed writes per watched table and fires callbacks on a worker
/// thread each time the count crosses a multiple of the threshold.
class TriggerManager {
 public:
  explicit TriggerManager(Engine& engine);
  ~TriggerManager();
  TriggerManager(const TriggerManager&) = delete;
  TriggerManager& operator=(const TriggerManager&) = delete;

  // Throws UnknownTable, InvalidThreshold. `target` receives returned models.
  ChangeTrigger register_trigger(const std::string& table, std::uint64_t threshold,
                                 RetrainCallback callback, Recommender* target = nullptr);

  // Blocks until every scheduled firing has run.
  void drain();
  std::uint64_t fired_count(int trigger_id) const;
  std::uint64_t committed_writes(int trigger_id) const;

 private:
  struct Entry {
    ChangeTrigger info;
    RetrainCallback callback;
    Recommender* target = nullptr;
    std::uint64_t writes = 0;
    std::uint64_t scheduled = 0;
    std::uint64_t fired = 0;
  };
  struct Job {
    int trigger_id;
    std::uint64_t firing;
    TableSnapshot snapshot;
  };

  void on_commit(const std::string& table, std::size_t writes);
  void worker();

  Engine& engine_;
  int listener_id_ = 0;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::map<int, Entry> entries_;
  std::deque<Job> queue_;
  bool running_job_ = false;
  bool stop_ = false;
  int next_id_ = 1;
  std::thread thread_;
};

}  // namespace htap::nearml
