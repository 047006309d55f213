#include <algorithm>
#include <cstdio>
#include <fstream>

#include "hyneter/io.hpp"

namespace hyneter {
namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fixed6(const std::optional<double>& v) { return v ? fixed6(*v) : std::string(); }

}  // namespace

std::string format_csv(std::span<const SweepRecord> records) {
  for (const SweepRecord& r : records) {
    if (r.factor != records.front().factor) {
      throw std::invalid_argument("emit_csv: records mix factors " + factor_name(records.front().factor) + " and " +
                                  factor_name(r.factor));
    }
  }
  std::vector<SweepRecord> rows(records.begin(), records.end());
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
  std::string out = "factor,value,param_count,final_loss,acc_total,acc_small,acc_medium,acc_large,ratio\n";
  for (const SweepRecord& r : rows) {
    out += factor_name(r.factor) + ',' + fixed6(r.value) + ',' + std::to_string(r.param_count) + ',' +
           fixed6(r.final_loss) + ',' + fixed6(r.acc_total) + ',' + fixed6(r.acc_small) + ',' + fixed6(r.acc_medium) +
           ',' + fixed6(r.acc_large) + ',' + fixed6(r.ratio_total_over_small) + '\n';
  }
  return out;
}

void emit_csv(std::span<const SweepRecord> records, const std::filesystem::path& path) {
  const std::string text = format_csv(records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write CSV '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("failed writing CSV '" + path.string() + "'");
}

}  // namespace hyneter
