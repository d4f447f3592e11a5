#include "htapstore/script.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

namespace htap {

namespace {

enum class TokKind { kIdent, kNumber, kString, kPunct };

struct Token {
  TokKind kind;
  std::string text;
};

[[noreturn]] void parse_error(const std::string& why) { throw Error(ErrorCode::kParseError, why); }

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_' || s[j] == '.')) ++j;
      out.push_back({TokKind::kIdent, std::string(s.substr(i, j - i))});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+') {
      std::size_t j = i + 1;
      while (j < s.size()) {
        const char d = s[j];
        const bool exp_sign = (d == '-' || d == '+') && (s[j - 1] == 'e' || s[j - 1] == 'E');
        if (std::isdigit(static_cast<unsigned char>(d)) || d == '.' || d == 'e' || d == 'E' || exp_sign) {
          ++j;
        } else {
          break;
        }
      }
      out.push_back({TokKind::kNumber, std::string(s.substr(i, j - i))});
      i = j;
    } else if (c == '\'') {
      std::string lit;
      std::size_t j = i + 1;
      for (;;) {
        if (j >= s.size()) parse_error("unterminated string literal");
        if (s[j] == '\'') {
          if (j + 1 < s.size() && s[j + 1] == '\'') {
            lit.push_back('\'');
            j += 2;
            continue;
          }
          break;
        }
        lit.push_back(s[j++]);
      }
      out.push_back({TokKind::kString, std::move(lit)});
      i = j + 1;
    } else if (c == '(' || c == ')' || c == ',' || c == '=') {
      out.push_back({TokKind::kPunct, std::string(1, c)});
      ++i;
    } else {
      parse_error(std::string("unexpected character '") + c + "'");
    }
  }
  return out;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

  bool done() const { return pos_ == toks_.size(); }

  const Token& next() {
    if (done()) parse_error("unexpected end of statement");
    return toks_[pos_++];
  }

  void keyword(std::string_view kw) {
    const auto& t = next();
    if (t.kind != TokKind::kIdent || upper(t.text) != kw) {
      parse_error("expected " + std::string(kw) + ", got '" + t.text + "'");
    }
  }

  bool peek_keyword(std::string_view kw) const {
    return !done() && toks_[pos_].kind == TokKind::kIdent && upper(toks_[pos_].text) == kw;
  }

  void punct(char p) {
    const auto& t = next();
    if (t.kind != TokKind::kPunct || t.text[0] != p) {
      parse_error(std::string("expected '") + p + "', got '" + t.text + "'");
    }
  }

  bool peek_punct(char p) const {
    return !done() && toks_[pos_].kind == TokKind::kPunct && toks_[pos_].text[0] == p;
  }

  std::string ident() {
    const auto& t = next();
    if (t.kind != TokKind::kIdent) parse_error("expected identifier, got '" + t.text + "'");
    return t.text;
  }

  Value literal() {
    const auto& t = next();
    switch (t.kind) {
      case TokKind::kString: return t.text;
      case TokKind::kIdent: {
        const auto u = upper(t.text);
        if (u == "TRUE") return true;
        if (u == "FALSE") return false;
        parse_error("expected literal, got '" + t.text + "'");
      }
      case TokKind::kNumber: return number(t.text);
      case TokKind::kPunct: break;
    }
    parse_error("expected literal, got '" + t.text + "'");
  }

  Key integer() {
    const auto v = literal();
    if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
    parse_error("expected integer key, got " + to_string(v));
  }

  void end() {
    if (!done()) parse_error("trailing tokens starting at '" + toks_[pos_].text + "'");
  }

  static Value number(const std::string& text) {
    const bool is_float = text.find_first_of(".eE") != std::string::npos;
    const char* first = text.data() + (text[0] == '+' ? 1 : 0);
    const char* last = text.data() + text.size();
    if (is_float) {
      double d = 0;
      auto [p, ec] = std::from_chars(first, last, d);
      if (ec != std::errc() || p != last) parse_error("bad number '" + text + "'");
      return d;
    }
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(first, last, i);
    if (ec != std::errc() || p != last) parse_error("bad integer '" + text + "'");
    return i;
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

std::string literal_text(const Value& v) {
  if (const auto* s = std::get_if<std::string>(&v)) {
    std::string out = "'";
    for (char c : *s) {
      out.push_back(c);
      if (c == '\'') out.push_back('\'');
    }
    return out + "'";
  }
  if (const auto* d = std::get_if<double>(&v)) {
    std::ostringstream os;
    os.precision(17);
    os << *d;
    auto text = os.str();
    if (text.find_first_of(".eEn") == std::string::npos) text += ".0";
    return text;
  }
  return to_string(v);
}

bool skippable(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  const auto rest = line.substr(i);
  return rest.empty() || rest[0] == '#' || rest.substr(0, 2) == "--";
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    start = nl + 1;
  }
  return out;
}

}  // namespace

const std::string& statement_table(const Statement& s) {
  return std::visit(
      [](const auto& st) -> const std::string& {
        using T = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<T, AggStmt>) {
          return st.query.table;
        } else {
          return st.table;
        }
      },
      s);
}

Statement parse_statement(std::string_view line) {
  Parser p(tokenize(line));
  const auto verb = upper(p.ident());
  if (verb == "AGG") {
    AggStmt st;
    st.query.fn = query::parse_fn(p.ident());
    const auto target = p.ident();
    const auto dot = target.find('.');
    if (dot == std::string::npos) parse_error("AGG target must be <table>.<column>");
    st.query.table = target.substr(0, dot);
    st.query.column = target.substr(dot + 1);
    if (p.peek_keyword("WHERE")) {
      p.keyword("WHERE");
      BetweenPredicate pred;
      pred.column = p.ident();
      p.keyword("BETWEEN");
      pred.lo = p.literal();
      p.keyword("AND");
      pred.hi = p.literal();
      st.query.predicate = std::move(pred);
    }
    p.end();
    return st;
  }
  if (verb == "UPDATE") {
    UpdateStmt st;
    st.table = p.ident();
    p.keyword("SET");
    do {
      if (!st.assignments.empty()) p.punct(',');
      auto col = p.ident();
      p.punct('=');
      st.assignments.emplace_back(std::move(col), p.literal());
    } while (p.peek_punct(','));
    p.keyword("WHERE");
    st.key_column = p.ident();
    p.punct('=');
    st.key = p.integer();
    p.end();
    return st;
  }
  if (verb == "INSERT") {
    InsertStmt st;
    st.table = p.ident();
    p.keyword("VALUES");
    p.punct('(');
    st.values.push_back(p.literal());
    while (p.peek_punct(',')) {
      p.punct(',');
      st.values.push_back(p.literal());
    }
    p.punct(')');
    p.end();
    return st;
  }
  if (verb == "DELETE" || verb == "GET") {
    std::string table = p.ident();
    p.keyword("WHERE");
    std::string col = p.ident();
    p.punct('=');
    const Key key = p.integer();
    p.end();
    if (verb == "DELETE") return DeleteStmt{std::move(table), std::move(col), key};
    return GetStmt{std::move(table), std::move(col), key};
  }
  parse_error("unknown statement '" + verb + "'");
}

std::string to_text(const Statement& s) {
  std::ostringstream os;
  std::visit(
      [&os](const auto& st) {
        using T = std::decay_t<decltype(st)>;
        if constexpr (std::is_same_v<T, AggStmt>) {
          os << "AGG " << query::fn_name(st.query.fn) << ' ' << st.query.table << '.'
             << st.query.column;
          if (st.query.predicate) {
            os << " WHERE " << st.query.predicate->column << " BETWEEN "
               << literal_text(st.query.predicate->lo) << " AND "
               << literal_text(st.query.predicate->hi);
          }
        } else if constexpr (std::is_same_v<T, UpdateStmt>) {
          os << "UPDATE " << st.table << " SET ";
          for (std::size_t i = 0; i < st.assignments.size(); ++i) {
            if (i) os << ", ";
            os << st.assignments[i].first << '=' << literal_text(st.assignments[i].second);
          }
          os << " WHERE " << st.key_column << '=' << st.key;
        } else if constexpr (std::is_same_v<T, InsertStmt>) {
          os << "INSERT " << st.table << " VALUES (";
          for (std::size_t i = 0; i < st.values.size(); ++i) {
            if (i) os << ", ";
            os << literal_text(st.values[i]);
          }
          os << ')';
        } else if constexpr (std::is_same_v<T, DeleteStmt>) {
          os << "DELETE " << st.table << " WHERE " << st.key_column << '=' << st.key;
        } else {
          os << "GET " << st.table << " WHERE " << st.key_column << '=' << st.key;
        }
      },
      s);
  return os.str();
}

std::string HybridScript::to_text() const {
  std::string out;
  for (const auto& s : steps) out += htap::to_text(s) + "\n";
  return out;
}

HybridScript parse_hybrid_script(std::string_view text) {
  HybridScript script;
  int lineno = 0;
  for (auto line : split_lines(text)) {
    ++lineno;
    if (skippable(line)) continue;
    try {
      script.steps.push_back(parse_statement(line));
    } catch (const Error& e) {
      parse_error("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (script.steps.empty()) throw Error(ErrorCode::kInvalidArgument, "hybrid script has no steps");
  return script;
}

TxnScript parse_txn_script(std::string_view text) {
  TxnScript script;
  ScriptTxn current;
  bool open = false;
  int lineno = 0;
  for (auto line : split_lines(text)) {
    ++lineno;
    if (skippable(line)) continue;
    Parser probe(tokenize(line));
    const auto word = upper(probe.ident());
    if (word == "COMMIT" || word == "ROLLBACK") {
      current.commit = word == "COMMIT";
      script.txns.push_back(std::move(current));
      current = ScriptTxn{};
      open = false;
      continue;
    }
    try {
      current.steps.push_back(parse_statement(line));
      open = true;
    } catch (const Error& e) {
      parse_error("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (open) {
    script.txns.push_back(std::move(current));
    script.trailing_open = true;
  }
  return script;
}

std::string to_text(const TxnScript& script) {
  std::string out;
  for (std::size_t i = 0; i < script.txns.size(); ++i) {
    for (const auto& s : script.txns[i].steps) out += to_text(s) + "\n";
    const bool last_open = script.trailing_open && i + 1 == script.txns.size();
    if (!last_open) out += script.txns[i].commit ? "COMMIT\n" : "ROLLBACK\n";
  }
  return out;
}

}  // namespace htap
