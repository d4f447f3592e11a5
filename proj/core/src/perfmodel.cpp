#include "htapstore/perfmodel.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

#include "htapstore/types.hpp"

namespace htap::perfmodel {

void validate(const TransferScenario& s) {
  auto positive = [](double v) { return std::isfinite(v) && v > 0; };
  if (s.n_apps == 0) throw Error(ErrorCode::kInvalidArgument, "n_apps must be >= 1");
  if (!positive(s.data_per_app)) throw Error(ErrorCode::kInvalidArgument, "data_per_app must be > 0");
  if (!positive(s.external_bandwidth_total)) {
    throw Error(ErrorCode::kInvalidArgument, "external bandwidth must be > 0");
  }
  if (!positive(s.neardata_bandwidth)) {
    throw Error(ErrorCode::kInvalidArgument, "near-data bandwidth must be > 0");
  }
}

double separate_latency(const TransferScenario& s) {
  validate(s);
  const double per_app = s.external_bandwidth_total / static_cast<double>(s.n_apps);
  return s.data_per_app / per_app;
}

double neardata_latency(const TransferScenario& s) {
  validate(s);
  return s.data_per_app / s.neardata_bandwidth;
}

double gap(const TransferScenario& s) { return separate_latency(s) / neardata_latency(s); }

double parse_bytes(std::string_view text) {
  std::string s;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  }
  if (s.size() >= 2 && (s.ends_with("/s") || s.ends_with("/S"))) s.resize(s.size() - 2);
  std::size_t i = 0;
  while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.')) ++i;
  double number = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + i, number);
  if (i == 0 || ec != std::errc() || p != s.data() + i) {
    throw Error(ErrorCode::kParseError, "bad byte quantity '" + std::string(text) + "'");
  }
  std::string unit = s.substr(i);
  for (auto& c : unit) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  double scale = 0;
  if (unit.empty() || unit == "B") scale = 1;
  else if (unit == "KB") scale = 1e3;
  else if (unit == "MB") scale = 1e6;
  else if (unit == "GB") scale = 1e9;
  else if (unit == "TB") scale = 1e12;
  else throw Error(ErrorCode::kParseError, "unknown unit '" + unit + "' in '" + std::string(text) + "'");
  return number * scale;
}

std::string format_bytes(double bytes) {
  static constexpr std::pair<double, const char*> kUnits[] = {
      {1e12, "TB"}, {1e9, "GB"}, {1e6, "MB"}, {1e3, "KB"}};
  std::ostringstream os;
  for (const auto& [scale, name] : kUnits) {
    if (bytes >= scale) {
      os << bytes / scale << name;
      return os.str();
    }
  }
  os << bytes << "B";
  return os.str();
}

}  // namespace htap::perfmodel
