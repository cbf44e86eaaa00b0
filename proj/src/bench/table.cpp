#include <algorithm>
#include <sstream>

#include "battta/bench.hpp"
#include "battta/json_util.hpp"

namespace battta::bench {

namespace {

template <typename Key>
void push_unique(std::vector<std::string>& v, const Key& k) {
  if (std::find(v.begin(), v.end(), k) == v.end()) v.push_back(k);
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string cell_text(const std::optional<double>& v) { return v ? fixed(*v) : std::string(); }

}  // namespace

void BenchmarkTable::add(Entry e) { entries_.push_back(std::move(e)); }

std::vector<std::string> BenchmarkTable::methods() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) push_unique(out, e.method);
  return out;
}

std::vector<std::string> BenchmarkTable::columns() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) push_unique(out, e.column());
  return out;
}

std::optional<double> BenchmarkTable::cell(const std::string& method, const std::string& column) const {
  std::vector<double> v;
  for (const auto& e : entries_)
    if (!e.failed && e.method == method && e.column() == column) v.push_back(e.accuracy);
  return mean_of(v);
}

std::optional<double> BenchmarkTable::mean(const std::string& method) const {
  std::vector<double> v;
  for (const auto& col : columns())
    if (auto c = cell(method, col)) v.push_back(*c);
  return mean_of(v);
}

std::optional<double> BenchmarkTable::zero_shot_mean(const std::string& method) const {
  std::vector<double> cols;
  for (const auto& col : columns()) {
    std::vector<double> v;
    for (const auto& e : entries_)
      if (!e.failed && e.method == method && e.column() == col) v.push_back(e.zero_shot);
    if (auto m = mean_of(v)) cols.push_back(*m);
  }
  return mean_of(cols);
}

std::optional<double> BenchmarkTable::gain(const std::string& method) const {
  auto m = mean(method), z = zero_shot_mean(method);
  if (!m || !z) return std::nullopt;
  return *m - *z;
}

std::optional<double> BenchmarkTable::source_drop(const std::string& method) const {
  std::vector<double> v;
  for (const auto& e : entries_)
    if (!e.failed && e.method == method && e.source_drop) v.push_back(*e.source_drop);
  return mean_of(v);
}

std::size_t BenchmarkTable::failures() const {
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const Entry& e) { return e.failed; }));
}

std::string BenchmarkTable::to_csv() const {
  const auto cols = columns();
  std::ostringstream o;
  o << "method";
  for (const auto& c : cols) o << ',' << c;
  o << ",mean,gain_vs_zero_shot,source_drop\n";
  for (const auto& m : methods()) {
    o << m;
    for (const auto& c : cols) o << ',' << cell_text(cell(m, c));
    o << ',' << cell_text(mean(m)) << ',' << cell_text(gain(m)) << ',' << cell_text(source_drop(m)) << '\n';
  }
  return o.str();
}

}  // namespace battta::bench
