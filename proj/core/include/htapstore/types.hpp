#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace htap {

using Lsn = std::uint64_t;
using TxnId = std::uint64_t;
using GroupId = std::uint32_t;
using Key = std::int64_t;

enum class ValueType : std::uint8_t { kInt64 = 0, kFloat64 = 1, kBool = 2, kString = 3 };

// Alternative index matches ValueType.
using Value = std::variant<std::int64_t, double, bool, std::string>;
using Row = std::vector<Value>;

inline ValueType type_of(const Value& v) { return static_cast<ValueType>(v.index()); }

std::string_view type_name(ValueType t);
std::string to_string(const Value& v);
std::ostream& operator<<(std::ostream& os, const Value& v);

// Widens integers for numeric comparisons; throws TypeMismatch for bool/string.
double as_double(const Value& v);

// Converts a literal to the column type. int64 -> float64 is the only
// implicit widening allowed.
Value coerce(const Value& v, ValueType to);

enum class ErrorCode {
  kDuplicateTable,
  kUnknownTable,
  kInvalidSchema,
  kDuplicateKey,
  kKeyNotFound,
  kNonUpdatableColumn,
  kUnknownColumn,
  kTypeMismatch,
  kOverflow,
  kIoFailure,
  kTxnNotActive,
  kSplitIncomplete,
  kActiveTxns,
  kCorruptLogHeader,
  kCorruptCheckpoint,
  kSecondWriterAborted,
  kParseError,
  kNonFiniteInput,
  kNonFiniteReward,
  kEmptyCatalog,
  kUnknownCommodity,
  kInvalidThreshold,
  kInvalidArgument,
  kSimulatedCrash,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace htap
