#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "htapstore/engine.hpp"

namespace htap::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<unsigned> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("htapstore-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline EngineOptions fast_options() {
  EngineOptions o;
  o.durability = wal::Durability::kOsBuffer;
  return o;
}

// id (pk, updatable), qty int64 (updatable), price float64, tag string, flag bool.
inline TableSchema item_schema(std::string name = "items") {
  return TableSchema(std::move(name),
                     {{"id", ValueType::kInt64},
                      {"qty", ValueType::kInt64},
                      {"price", ValueType::kFloat64},
                      {"tag", ValueType::kString},
                      {"flag", ValueType::kBool}},
                     "id", {"id", "qty"});
}

inline Row item_row(Key id, std::int64_t qty, double price, std::string tag = "x", bool flag = false) {
  return {id, qty, price, std::move(tag), flag};
}

}  // namespace htap::testing
