#pragma once

// Statements and the line-oriented HybridScript text form:
//
//   AGG MAX <table>.<col> [WHERE <col> BETWEEN <a> AND <b>]
//   UPDATE <table> SET <col>=<val>[, <col>=<val>...] WHERE <pk>=<k>
//   INSERT <table> VALUES (<v>, <v>, ...)
//   DELETE <table> WHERE <pk>=<k>
//   GET <table> WHERE <pk>=<k>
//
// Literals: integers, decimals (contain '.' or an exponent), true/false, and
// single-quoted strings ('' escapes a quote). Keywords are case-insensitive.
// Blank lines and lines starting with '#' or "--" are ignored.
//
// Multi-transaction scripts (crash sweeps) additionally use COMMIT and
// ROLLBACK lines to end a transaction.

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "htapstore/query.hpp"

namespace htap {

struct InsertStmt {
  std::string table;
  Row values;
};

struct UpdateStmt {
  std::string table;
  std::vector<std::pair<std::string, Value>> assignments;
  std::string key_column;
  Key key = 0;
};

struct DeleteStmt {
  std::string table;
  std::string key_column;
  Key key = 0;
};

struct GetStmt {
  std::string table;
  std::string key_column;
  Key key = 0;
};

struct AggStmt {
  query::AggregateQuery query;
};

using Statement = std::variant<InsertStmt, UpdateStmt, DeleteStmt, GetStmt, AggStmt>;

inline bool is_olap(const Statement& s) { return std::holds_alternative<AggStmt>(s); }
const std::string& statement_table(const Statement& s);
std::string to_text(const Statement& s);

// Parses one statement line; throws ParseError.
Statement parse_statement(std::string_view line);

/// Ordered OLTP/OLAP steps executed inside one transaction.
struct HybridScript {
  std::vector<Statement> steps;

  std::string to_text() const;
};

// Throws ParseError (with line number) or InvalidArgument for an empty script.
HybridScript parse_hybrid_script(std::string_view text);

struct ScriptTxn {
  std::vector<Statement> steps;
  bool commit = true;
};

// A script of several transactions; a trailing transaction without
// COMMIT/ROLLBACK is left uncommitted (never ends).
struct TxnScript {
  std::vector<ScriptTxn> txns;
  bool trailing_open = false;
};

TxnScript parse_txn_script(std::string_view text);
std::string to_text(const TxnScript& script);

}  // namespace htap
