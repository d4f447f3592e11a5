#include "htapstore/types.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

namespace htap {

std::string_view type_name(ValueType t) {
  switch (t) {
    case ValueType::kInt64: return "int64";
    case ValueType::kFloat64: return "float64";
    case ValueType::kBool: return "bool";
    case ValueType::kString: return "utf8";
  }
  return "?";
}

std::string to_string(const Value& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::ostream& operator<<(std::ostream& os, const Value& v) {
  std::visit(
      [&os](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, bool>) {
          os << (x ? "true" : "false");
        } else if constexpr (std::is_same_v<T, std::string>) {
          os << '\'' << x << '\'';
        } else if constexpr (std::is_same_v<T, double>) {
          std::ostringstream tmp;
          tmp.precision(17);
          tmp << x;
          os << tmp.str();
        } else {
          os << x;
        }
      },
      v);
  return os;
}

double as_double(const Value& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw Error(ErrorCode::kTypeMismatch, "expected a numeric value, got " + to_string(v));
}

Value coerce(const Value& v, ValueType to) {
  const ValueType from = type_of(v);
  if (from == to) return v;
  if (from == ValueType::kInt64 && to == ValueType::kFloat64) {
    return static_cast<double>(std::get<std::int64_t>(v));
  }
  throw Error(ErrorCode::kTypeMismatch, "cannot use " + std::string(type_name(from)) + " value " +
                                            to_string(v) + " as " + std::string(type_name(to)));
}

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDuplicateTable: return "DuplicateTable";
    case ErrorCode::kUnknownTable: return "UnknownTable";
    case ErrorCode::kInvalidSchema: return "InvalidSchema";
    case ErrorCode::kDuplicateKey: return "DuplicateKey";
    case ErrorCode::kKeyNotFound: return "KeyNotFound";
    case ErrorCode::kNonUpdatableColumn: return "NonUpdatableColumn";
    case ErrorCode::kUnknownColumn: return "UnknownColumn";
    case ErrorCode::kTypeMismatch: return "TypeMismatch";
    case ErrorCode::kOverflow: return "Overflow";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kTxnNotActive: return "TxnNotActive";
    case ErrorCode::kSplitIncomplete: return "SplitIncomplete";
    case ErrorCode::kActiveTxns: return "ActiveTxns";
    case ErrorCode::kCorruptLogHeader: return "CorruptLogHeader";
    case ErrorCode::kCorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::kSecondWriterAborted: return "SecondWriterAborted";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kNonFiniteInput: return "NonFiniteInput";
    case ErrorCode::kNonFiniteReward: return "NonFiniteReward";
    case ErrorCode::kEmptyCatalog: return "EmptyCatalog";
    case ErrorCode::kUnknownCommodity: return "UnknownCommodity";
    case ErrorCode::kInvalidThreshold: return "InvalidThreshold";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSimulatedCrash: return "SimulatedCrash";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + detail), code_(code) {}

}  // namespace htap
