#pragma once

// Aggregation across seeds (method x budget tables) and training-dynamics
// output (CSV plus a dual-axis SVG line chart).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "noteacher/io.hpp"
#include "noteacher/metrics.hpp"

namespace nt {

struct CompareCell {
  std::string method;
  std::string budget;
  std::vector<double> values;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single seed
};

inline void summarize(CompareCell& c) {
  if (c.values.empty()) throw DataError("compare: no values for " + c.method + " / " + c.budget);
  const double n = static_cast<double>(c.values.size());
  double s = 0.0;
  for (double v : c.values) s += v;
  c.mean = s / n;
  double ss = 0.0;
  for (double v : c.values) ss += (v - c.mean) * (v - c.mean);
  c.stddev = c.values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

struct CompareTable {
  std::string metric = "auroc";
  std::vector<std::string> methods;  // column order
  std::vector<std::string> budgets;  // row order
  std::vector<CompareCell> cells;

  [[nodiscard]] const CompareCell* find(const std::string& m, const std::string& b) const {
    for (const auto& c : cells)
      if (c.method == m && c.budget == b) return &c;
    return nullptr;
  }
};

inline std::string compare_csv(const CompareTable& t) {
  std::ostringstream out;
  out << "method,budget,n_seeds,mean_" << t.metric << ",std_" << t.metric << '\n';
  for (const auto& b : t.budgets)
    for (const auto& m : t.methods)
      if (const auto* c = t.find(m, b)) {
        out << m << ',' << b << ',' << c->values.size() << ',' << fmt(c->mean) << ',' << fmt(c->stddev) << '\n';
      }
  return out.str();
}

/// Budget rows, method columns, cells "mean ± std" scaled by 100.
inline std::string compare_text(const CompareTable& t) {
  auto cell = [](const CompareCell* c) {
    if (!c) return std::string("_");
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * c->mean << " ± " << 100.0 * c->stddev;
    return s.str();
  };
  std::vector<std::vector<std::string>> grid;
  grid.push_back({"Budget"});
  for (const auto& m : t.methods) grid.back().push_back(m);
  for (const auto& b : t.budgets) {
    grid.push_back({b});
    for (const auto& m : t.methods) grid.back().push_back(cell(t.find(m, b)));
  }
  // Column widths in code points; the plus-minus sign is two bytes in UTF-8.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80 ? 1 : 0;
    return w;
  };
  std::vector<std::size_t> widths(grid.front().size(), 0);
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], width(row[i]));
  std::ostringstream out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      if (i > 0) out << "  ";
      out << grid[r][i] << std::string(widths[i] - width(grid[r][i]), ' ');
    }
    out << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      out << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Dynamics

struct DynamicsRow {
  std::int64_t iter = 0;
  std::optional<double> not_f1, not_f2, mt_student, mt_teacher;
  std::int64_t not_disagreement = 0;
  std::int64_t mt_disagreement = 0;
};

/// Joins NoT and MT validation snapshots on iteration, recomputing AUROC
/// and disagreement at `tau`.
inline std::vector<DynamicsRow> dynamics_rows(const std::vector<ValSnapshot>& not_run,
                                              const std::vector<ValSnapshot>& mt_run, const Tensor& val_targets,
                                              double tau) {
  std::map<std::int64_t, const ValSnapshot*> mt;
  for (const auto& s : mt_run) mt[s.iter] = &s;
  std::vector<DynamicsRow> rows;
  for (const auto& a : not_run) {
    const auto it = mt.find(a.iter);
    if (it == mt.end()) continue;
    const ValSnapshot& b = *it->second;
    DynamicsRow r;
    r.iter = a.iter;
    r.not_f1 = mean_defined(per_label_auroc(a.post_a, val_targets));
    r.not_f2 = mean_defined(per_label_auroc(a.post_b, val_targets));
    r.mt_student = mean_defined(per_label_auroc(b.post_a, val_targets));
    r.mt_teacher = mean_defined(per_label_auroc(b.post_b, val_targets));
    r.not_disagreement = static_cast<std::int64_t>(disagreement_count(a.post_a, a.post_b, tau));
    r.mt_disagreement = static_cast<std::int64_t>(disagreement_count(b.post_a, b.post_b, tau));
    rows.push_back(r);
  }
  if (rows.empty()) throw DataError("dynamics: the two runs share no validation iterations");
  return rows;
}

inline std::string dynamics_csv(const std::vector<DynamicsRow>& rows) {
  std::ostringstream out;
  out << "iter,not_f1_auroc,not_f2_auroc,mt_student_auroc,mt_teacher_auroc,not_disagreement,mt_disagreement\n";
  for (const auto& r : rows) {
    out << r.iter << ',' << fmt(r.not_f1) << ',' << fmt(r.not_f2) << ',' << fmt(r.mt_student) << ','
        << fmt(r.mt_teacher) << ',' << r.not_disagreement << ',' << r.mt_disagreement << '\n';
  }
  return out.str();
}

namespace report_detail {

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string num(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

}  // namespace report_detail

/// AUROC of four networks on the left axis, disagreement counts on the right.
/// Every point carries its exact CSV value in a data-value attribute.
inline std::string dynamics_svg(const std::vector<DynamicsRow>& rows, const std::string& title) {
  using report_detail::num;
  const double W = 800, H = 450, L = 70, R = 70, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  const double x0 = static_cast<double>(rows.front().iter), x1 = static_cast<double>(rows.back().iter);
  double amin = 1.0, amax = 0.0;
  std::int64_t dmax = 1;
  for (const auto& r : rows) {
    for (const auto& v : {r.not_f1, r.not_f2, r.mt_student, r.mt_teacher})
      if (v) {
        amin = std::min(amin, *v);
        amax = std::max(amax, *v);
      }
    dmax = std::max({dmax, r.not_disagreement, r.mt_disagreement});
  }
  if (amin > amax) amin = 0.0, amax = 1.0;
  amin = std::floor(amin * 20.0) / 20.0;
  amax = std::ceil(amax * 20.0) / 20.0;
  if (amax <= amin) amax = amin + 0.05;
  auto sx = [&](double it) { return L + (x1 > x0 ? (it - x0) / (x1 - x0) : 0.5) * pw; };
  auto sa = [&](double a) { return T + (1.0 - (a - amin) / (amax - amin)) * ph; };
  auto sd = [&](double d) { return T + (1.0 - d / static_cast<double>(dmax)) * ph; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
    << report_detail::xml_escape(title) << "</text>\n";
  o << "<g id=\"axis-x\"><line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
    << "\" stroke=\"black\"/>";
  for (int i = 0; i <= 4; ++i) {
    const double it = x0 + (x1 - x0) * i / 4.0;
    o << "<text x=\"" << num(sx(it)) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">"
      << static_cast<std::int64_t>(std::llround(it)) << "</text>";
  }
  o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">iteration</text></g>\n";
  o << "<g id=\"axis-y-left\"><line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph
    << "\" stroke=\"black\"/>";
  for (int i = 0; i <= 4; ++i) {
    const double a = amin + (amax - amin) * i / 4.0;
    o << "<text x=\"" << L - 6 << "\" y=\"" << num(sa(a) + 4) << "\" text-anchor=\"end\">" << num(a) << "</text>";
  }
  o << "<text transform=\"translate(18," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">validation AUROC</text></g>\n";
  o << "<g id=\"axis-y-right\"><line x1=\"" << L + pw << "\" y1=\"" << T << "\" x2=\"" << L + pw << "\" y2=\""
    << T + ph << "\" stroke=\"black\"/>";
  for (int i = 0; i <= 4; ++i) {
    const double d = static_cast<double>(dmax) * i / 4.0;
    o << "<text x=\"" << L + pw + 6 << "\" y=\"" << num(sd(d) + 4) << "\">" << num(d) << "</text>";
  }
  o << "<text transform=\"translate(" << W - 14 << "," << T + ph / 2
    << ") rotate(90)\" text-anchor=\"middle\">disagreement count</text></g>\n";

  struct Series {
    const char* id;
    const char* color;
    const char* dash;
    bool right;
  };
  const Series series[] = {{"not_f1_auroc", "#1f77b4", "", false},      {"not_f2_auroc", "#17becf", "", false},
                           {"mt_student_auroc", "#d62728", "", false},  {"mt_teacher_auroc", "#ff7f0e", "", false},
                           {"not_disagreement", "#1f77b4", "6,4", true}, {"mt_disagreement", "#d62728", "6,4", true}};
  for (int s = 0; s < 6; ++s) {
    auto value = [&](const DynamicsRow& r) -> std::optional<double> {
      switch (s) {
        case 0: return r.not_f1;
        case 1: return r.not_f2;
        case 2: return r.mt_student;
        case 3: return r.mt_teacher;
        case 4: return static_cast<double>(r.not_disagreement);
        default: return static_cast<double>(r.mt_disagreement);
      }
    };
    o << "<g class=\"series\" id=\"" << series[s].id << "\" data-axis=\"" << (series[s].right ? "right" : "left")
      << "\"><polyline fill=\"none\" stroke=\"" << series[s].color << "\" stroke-width=\"1.5\"";
    if (*series[s].dash) o << " stroke-dasharray=\"" << series[s].dash << "\"";
    o << " points=\"";
    bool first = true;
    for (const auto& r : rows) {
      const auto v = value(r);
      if (!v) continue;
      o << (first ? "" : " ") << num(sx(double(r.iter))) << ',' << num(series[s].right ? sd(*v) : sa(*v));
      first = false;
    }
    o << "\"/>";
    for (const auto& r : rows) {
      const auto v = value(r);
      if (!v) continue;
      o << "<circle cx=\"" << num(sx(double(r.iter))) << "\" cy=\"" << num(series[s].right ? sd(*v) : sa(*v))
        << "\" r=\"2\" fill=\"" << series[s].color << "\" data-iter=\"" << r.iter << "\" data-value=\""
        << (s >= 4 ? std::to_string(static_cast<std::int64_t>(*v)) : fmt(*v)) << "\"/>";
    }
    o << "</g>\n";
  }
  o << "<g id=\"legend\">";
  for (int s = 0; s < 6; ++s) {
    const double y = T + 10 + 14 * s;
    o << "<line x1=\"" << L + 10 << "\" y1=\"" << y << "\" x2=\"" << L + 30 << "\" y2=\"" << y << "\" stroke=\""
      << series[s].color << "\"" << (*series[s].dash ? std::string(" stroke-dasharray=\"") + series[s].dash + "\"" : "")
      << "/><text x=\"" << L + 34 << "\" y=\"" << y + 4 << "\">" << series[s].id << "</text>";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

}  // namespace nt
