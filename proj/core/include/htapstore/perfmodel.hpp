#pragma once

// Upper-bound model of application data-transfer latency. With separate
// OLTP/OLAP/ML systems every application pulls its data over a shared
// external link; with the near-data layout it reads in-process at a fixed
// memory bandwidth. Computation time is not modelled.

#include <cstdint>
#include <string>
#include <string_view>

namespace htap::perfmodel {

struct TransferScenario {
  std::uint64_t n_apps = 1;
  double data_per_app = 0;              // bytes
  double external_bandwidth_total = 0;  // bytes/s, shared by all apps
  double neardata_bandwidth = 0;        // bytes/s, per app
};

// Throws InvalidArgument unless every field is strictly positive and finite.
void validate(const TransferScenario& s);

double separate_latency(const TransferScenario& s);  // seconds
double neardata_latency(const TransferScenario& s);  // seconds
double gap(const TransferScenario& s);               // separate / neardata

// Byte quantities with decimal units: "1GB" = 1e9, "500MB" = 5e8, also
// B/KB/TB, optional "/s" suffix. Throws ParseError.
double parse_bytes(std::string_view text);
std::string format_bytes(double bytes);

}  // namespace htap::perfmodel
