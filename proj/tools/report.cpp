#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace segx::cli {
namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// first-seen order
template <class T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string markdown_report(std::span<const MetricsRecord> rows) {
  using Section = std::pair<std::string, std::string>;
  using RowKey = std::tuple<std::string, std::string, int>;
  std::vector<Section> sections;
  for (const auto& r : rows) push_unique(sections, Section{r.metric, r.scale});

  std::ostringstream out;
  std::set<std::string> digests;
  for (const auto& r : rows) digests.insert(r.config_digest);
  out << "# segx report\n\n";
  out << "config digest: ";
  bool first = true;
  for (const auto& d : digests) {
    out << (first ? "" : ", ") << '`' << d << '`';
    first = false;
  }
  out << "\n";

  for (const auto& [metric, scale] : sections) {
    std::vector<std::string> targets;
    std::vector<RowKey> keys;
    std::map<std::pair<RowKey, std::string>, double> cell;
    for (const auto& r : rows) {
      if (r.metric != metric || r.scale != scale) continue;
      push_unique(targets, r.target);
      RowKey k{r.source, r.attack, r.iter};
      push_unique(keys, k);
      cell[{k, r.target}] = r.value;
    }
    out << "\n## " << metric << ", scale " << scale << "\n\n| source | attack | iter |";
    for (const auto& t : targets) out << ' ' << t << " |";
    out << "\n|---|---|---:|";
    for (std::size_t i = 0; i < targets.size(); ++i) out << "---:|";
    out << "\n";
    for (const auto& k : keys) {
      out << "| " << std::get<0>(k) << " | " << std::get<1>(k) << " | " << std::get<2>(k) << " |";
      for (const auto& t : targets) {
        auto it = cell.find({k, t});
        out << ' ' << (it == cell.end() ? std::string("") : fixed2(it->second)) << " |";
      }
      out << "\n";
    }
  }
  return out.str();
}

std::string svg_report(std::span<const MetricsRecord> rows) {
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<std::pair<int, double>>> series;
  int max_iter = 1;
  for (const auto& r : rows) {
    Key k{r.source, r.attack, r.target, r.scale};
    push_unique(order, k);
    series[k].emplace_back(r.iter, r.value);
    max_iter = std::max(max_iter, r.iter);
  }

  const double W = 720, H = 420, left = 60, right = 220, top = 20, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  // x is log(1 + iter)
  auto xmap = [&](int it) { return left + pw * std::log1p(it) / std::log1p(max_iter); };
  auto ymap = [&](double v) { return top + ph * (1.0 - v / 100.0); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
  for (int v = 0; v <= 100; v += 20) {
    s << "<text x=\"" << left - 6 << "\" y=\"" << ymap(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  std::set<int> ticks;
  for (const auto& [k, pts] : series)
    for (const auto& p : pts) ticks.insert(p.first);
  for (int t : ticks) {
    s << "<text x=\"" << xmap(t) << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">attack iteration</text>\n";

  for (std::size_t i = 0; i < order.size(); ++i) {
    auto pts = series[order[i]];
    std::sort(pts.begin(), pts.end());
    const char* colour = kPalette[i % std::size(kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << colour << "\" points=\"";
    for (const auto& [it, v] : pts) s << fixed2(xmap(it)) << ',' << fixed2(ymap(v)) << ' ';
    s << "\"/>\n";
    for (const auto& [it, v] : pts) {
      s << "<circle cx=\"" << fixed2(xmap(it)) << "\" cy=\"" << fixed2(ymap(v)) << "\" r=\"2.5\" fill=\"" << colour << "\"/>\n";
    }
    const auto& [src, attack, target, scale] = order[i];
    s << "<text x=\"" << left + pw + 10 << "\" y=\"" << top + 12 + 14 * static_cast<double>(i) << "\" fill=\"" << colour
      << "\">" << src << " / " << attack << " -> " << target << (scale == "1" ? "" : " @" + scale) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace segx::cli
