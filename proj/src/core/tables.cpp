#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "error.hpp"
#include "experiments.hpp"

namespace tlh {

TableFormat parse_table_format(const std::string& s) {
  if (s == "text" || s == "txt") return TableFormat::kText;
  if (s == "csv") return TableFormat::kCsv;
  if (s == "json") return TableFormat::kJson;
  throw ConfigError("unknown format '" + s + "' (expected text, csv or json)");
}

std::string format_seconds(double s) {
  if (!std::isfinite(s)) return "n/a";
  if (s == 0.0) return "0";
  const int magnitude = static_cast<int>(std::floor(std::log10(std::fabs(s))));
  const double unit = std::pow(10.0, magnitude - 1);
  const double rounded = std::round(s / unit) * unit;
  const int decimals = std::max(0, 1 - magnitude);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, rounded);
  return buf;
}

namespace {

std::string fixed1(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", *v);
  return buf;
}

std::string fixed1_or_na(const std::optional<double>& v) { return v ? fixed1(v) : "n/a"; }

std::string seconds_or_na(const std::optional<double>& v) { return v ? format_seconds(*v) : "n/a"; }

struct MeanAcc {
  double sum = 0.0;
  std::size_t n = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  std::optional<double> get() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

// Left-aligned text grid with a header block and a rule under it.
class TextTable {
 public:
  void header(std::vector<std::string> cells) { header_.push_back(std::move(cells)); }
  void row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }
  void rule() { rows_.push_back({}); }

  std::string render() const {
    std::vector<std::size_t> width;
    auto widen = [&](const std::vector<std::string>& r) {
      if (width.size() < r.size()) width.resize(r.size(), 0);
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    };
    for (const auto& r : header_) widen(r);
    for (const auto& r : rows_) widen(r);
    std::size_t total = 0;
    for (auto w : width) total += w + 2;
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& r) {
      if (r.empty()) {
        out << std::string(total, '-') << '\n';
        return;
      }
      std::string line;
      for (std::size_t i = 0; i < r.size(); ++i) {
        std::string cell = r[i];
        if (i > 0 && i + 1 <= r.size()) cell = std::string(width[i] - cell.size(), ' ') + cell;
        else cell += std::string(width[i] - cell.size(), ' ');
        line += cell + "  ";
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out << line << '\n';
    };
    for (const auto& r : header_) emit(r);
    out << std::string(total, '=') << '\n';
    for (const auto& r : rows_) emit(r);
    return out.str();
  }

 private:
  std::vector<std::vector<std::string>> header_;
  std::vector<std::vector<std::string>> rows_;
};

template <typename T>
std::vector<T> unique_sorted(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

std::vector<double> fractions_of(const std::vector<ExperimentRow>& rows) {
  std::vector<double> f;
  for (const auto& r : rows) f.push_back(r.f);
  return unique_sorted(f);
}

std::string train_images_label(const std::vector<ExperimentRow>& rows, double f) {
  for (const auto& r : rows) {
    if (r.f == f) return std::to_string(r.train_per_class);
  }
  return "?";
}

// One table per split fraction: rows are (species, CNN), column blocks are
// class counts.
void accuracy_tables(const std::vector<ExperimentRow>& rows, std::ostringstream& out) {
  std::vector<ExperimentRow> a_rows;
  for (const auto& r : rows) {
    if (r.kind == "A") a_rows.push_back(r);
  }
  if (a_rows.empty()) return;
  for (double f : fractions_of(a_rows)) {
    std::vector<std::pair<std::string, std::string>> keys;
    std::vector<std::size_t> ns;
    for (const auto& r : a_rows) {
      if (r.f != f) continue;
      const auto key = std::make_pair(r.group, r.backbone);
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
      ns.push_back(r.n_classes);
    }
    ns = unique_sorted(ns);

    out << "TA (%) of the proposed approach (P) against the baseline, " << train_images_label(a_rows, f)
        << " training images per class\n";
    TextTable t;
    std::vector<std::string> top = {"", "", ""};
    std::vector<std::string> sub = {"Species", "CNN", "Similarity"};
    for (auto n : ns) {
      top.insert(top.end(), {std::to_string(n) + " classes", "", "", ""});
      sub.insert(sub.end(), {"Baseline", "P", "Gain(pp)", "Gain(%)"});
    }
    t.header(top);
    t.header(sub);

    MeanAcc sim_avg;
    std::map<std::size_t, std::array<MeanAcc, 4>> col_avg;
    for (const auto& key : keys) {
      MeanAcc sim;
      std::vector<std::string> cells = {key.first, key.second, ""};
      for (auto n : ns) {
        const auto it = std::find_if(a_rows.begin(), a_rows.end(), [&](const ExperimentRow& r) {
          return r.f == f && r.group == key.first && r.backbone == key.second && r.n_classes == n;
        });
        if (it == a_rows.end()) {
          cells.insert(cells.end(), {"", "", "", ""});
          continue;
        }
        sim.add(it->similarity_pct);
        cells.insert(cells.end(), {fixed1(it->ta_baseline), fixed1(it->ta_proposed), fixed1(it->gain_pp),
                                   fixed1_or_na(it->gain_rel_pct)});
        auto& acc = col_avg[n];
        acc[0].add(it->ta_baseline);
        acc[1].add(it->ta_proposed);
        acc[2].add(it->gain_pp);
        acc[3].add(it->gain_rel_pct);
      }
      cells[2] = fixed1(sim.get());
      sim_avg.add(sim.get());
      t.row(cells);
    }
    t.rule();
    std::vector<std::string> avg = {"Average", "", fixed1(sim_avg.get())};
    for (auto n : ns) {
      for (const auto& a : col_avg[n]) avg.push_back(fixed1(a.get()));
    }
    t.row(avg);
    out << t.render() << '\n';
  }
}

// Training time: rows are (CNN, class count), column blocks are training-set
// sizes; each backbone ends with Average, reduction and speed-up rows.
void time_table(const std::vector<ExperimentRow>& rows, std::ostringstream& out) {
  std::vector<std::string> backbones;
  std::vector<double> fs = fractions_of(rows);
  bool any = false;
  for (const auto& r : rows) {
    if (std::find(backbones.begin(), backbones.end(), r.backbone) == backbones.end()) backbones.push_back(r.backbone);
    any = any || r.tt_baseline_s || r.tt_proposed_s;
  }
  if (!any) return;

  out << "Training time TT (s) of the proposed approach (P) against the baseline\n";
  TextTable t;
  std::vector<std::string> top = {"", ""};
  std::vector<std::string> sub = {"CNN", "Classes"};
  for (double f : fs) {
    top.insert(top.end(), {train_images_label(rows, f) + " train/class", ""});
    sub.insert(sub.end(), {"Baseline", "P"});
  }
  t.header(top);
  t.header(sub);
  for (const auto& bb : backbones) {
    std::vector<std::size_t> ns;
    for (const auto& r : rows) {
      if (r.backbone == bb) ns.push_back(r.n_classes);
    }
    ns = unique_sorted(ns);
    std::map<double, std::pair<MeanAcc, MeanAcc>> backbone_avg;
    for (auto n : ns) {
      std::vector<std::string> cells = {bb, std::to_string(n)};
      for (double f : fs) {
        MeanAcc b, p;
        for (const auto& r : rows) {
          if (r.backbone == bb && r.n_classes == n && r.f == f) {
            b.add(r.tt_baseline_s);
            p.add(r.tt_proposed_s);
          }
        }
        cells.push_back(seconds_or_na(b.get()));
        cells.push_back(seconds_or_na(p.get()));
        backbone_avg[f].first.add(b.get());
        backbone_avg[f].second.add(p.get());
      }
      t.row(cells);
    }
    std::vector<std::string> avg = {bb, "Average"};
    std::vector<std::string> red = {bb, "TT reduction (%)"};
    std::vector<std::string> spd = {bb, "Speed-up (x)"};
    for (double f : fs) {
      const auto b = backbone_avg[f].first.get();
      const auto p = backbone_avg[f].second.get();
      avg.push_back(seconds_or_na(b));
      avg.push_back(seconds_or_na(p));
      if (b && p && *b > 0.0) {
        red.push_back(fixed1(tt_reduction_pct(*b, *p)));
        spd.push_back(*p > 0.0 ? fixed1(*b / *p) : "n/a");
      } else {
        red.push_back("n/a");
        spd.push_back("n/a");
      }
      red.push_back("");
      spd.push_back("");
    }
    t.rule();
    t.row(avg);
    t.row(red);
    t.row(spd);
    t.rule();
  }
  out << t.render() << '\n';
}

// Species trained independently (A-type rows) against mixed-species (B-type) runs.
void mixed_table(const std::vector<ExperimentRow>& rows, std::ostringstream& out) {
  std::vector<ExperimentRow> b_rows;
  for (const auto& r : rows) {
    if (r.kind == "B") b_rows.push_back(r);
  }
  if (b_rows.empty()) return;
  for (double f : fractions_of(b_rows)) {
    out << "TA (%) for species trained independently or mixed, " << train_images_label(rows, f)
        << " training images per class\n";
    TextTable t;
    t.header({"Species", "CNN", "Baseline", "P", "Gain(pp)", "Gain(%)"});
    for (const char* block : {"Indep. (avg)", "Mixed"}) {
      const bool mixed = std::string(block) == "Mixed";
      std::vector<ExperimentRow> block_rows;
      std::vector<std::string> backbones;
      for (const auto& b : b_rows) {
        if (b.f != f) continue;
        if (std::find(backbones.begin(), backbones.end(), b.backbone) == backbones.end()) {
          backbones.push_back(b.backbone);
        }
      }
      for (const auto& bb : backbones) {
        std::vector<ExperimentRow> members;
        for (const auto& r : rows) {
          if (r.f != f || r.backbone != bb) continue;
          if (mixed && r.kind == "B") members.push_back(r);
          if (!mixed && r.kind == "A") members.push_back(r);
        }
        if (members.empty()) continue;
        const auto avg = average_row(members);
        t.row({block, bb, fixed1(avg.ta_baseline), fixed1(avg.ta_proposed), fixed1(avg.gain_pp),
               fixed1_or_na(avg.gain_rel_pct)});
        block_rows.push_back(avg);
      }
      if (block_rows.empty()) continue;
      const auto avg = average_row(block_rows);
      t.row({block, "Average", fixed1(avg.ta_baseline), fixed1(avg.ta_proposed), fixed1(avg.gain_pp),
             fixed1_or_na(avg.gain_rel_pct)});
      t.rule();
    }
    out << t.render() << '\n';
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <typename T>
std::string csv_int(const std::optional<T>& v) {
  return v ? std::to_string(*v) : "";
}

std::string csv_fraction(double f) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", f);
  return buf;
}

std::string emit_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "group,kind,backbone,n_classes,f,train_per_class,similarity_pct,TA_baseline,TA_baseline_std,TA_proposed,"
         "TA_proposed_std,gain_pp,gain_rel_pct,TT_baseline_s,TT_baseline_std,TT_proposed_s,TT_proposed_std,"
         "TT_reduction_pct,speedup,epochs_baseline,epochs_proposed,params_baseline,params_proposed,threads\n";
  for (const auto& r : report.rows) {
    out << csv_escape(r.group) << ',' << r.kind << ',' << csv_escape(r.backbone) << ',' << r.n_classes << ','
        << csv_fraction(r.f) << ',' << r.train_per_class << ',' << fixed1(r.similarity_pct) << ','
        << fixed1(r.ta_baseline) << ',' << fixed1(r.ta_baseline_std) << ',' << fixed1(r.ta_proposed) << ','
        << fixed1(r.ta_proposed_std) << ',' << fixed1(r.gain_pp) << ',' << fixed1(r.gain_rel_pct) << ','
        << fixed1(r.tt_baseline_s) << ',' << fixed1(r.tt_baseline_std) << ',' << fixed1(r.tt_proposed_s) << ','
        << fixed1(r.tt_proposed_std) << ',' << fixed1(r.tt_reduction_pct) << ',' << fixed1(r.speedup) << ','
        << fixed1(r.epochs_baseline) << ',' << fixed1(r.epochs_proposed) << ',' << csv_int(r.params_baseline) << ','
        << csv_int(r.params_proposed) << ',' << report.threads << '\n';
  }
  return out.str();
}

}  // namespace

ExperimentRow average_row(std::span<const ExperimentRow> rows) {
  ExperimentRow avg;
  avg.group = "Average";
  if (rows.empty()) return avg;
  avg.kind = rows.front().kind;
  avg.backbone = rows.front().backbone;
  avg.n_classes = rows.front().n_classes;
  avg.f = rows.front().f;
  avg.train_per_class = rows.front().train_per_class;
  auto mean = [&](std::optional<double> ExperimentRow::*field) {
    MeanAcc acc;
    for (const auto& r : rows) acc.add(r.*field);
    avg.*field = acc.get();
  };
  for (auto field : {&ExperimentRow::similarity_pct, &ExperimentRow::ta_baseline, &ExperimentRow::ta_baseline_std,
                     &ExperimentRow::ta_proposed, &ExperimentRow::ta_proposed_std, &ExperimentRow::gain_pp,
                     &ExperimentRow::gain_rel_pct, &ExperimentRow::tt_baseline_s, &ExperimentRow::tt_baseline_std,
                     &ExperimentRow::tt_proposed_s, &ExperimentRow::tt_proposed_std, &ExperimentRow::tt_reduction_pct,
                     &ExperimentRow::speedup, &ExperimentRow::epochs_baseline, &ExperimentRow::epochs_proposed,
                     &ExperimentRow::lr_baseline, &ExperimentRow::lr_proposed}) {
    mean(field);
  }
  return avg;
}

std::string emit_tables(const ExperimentReport& report, TableFormat format) {
  switch (format) {
    case TableFormat::kJson: return report_to_json(report).dump(2) + "\n";
    case TableFormat::kCsv: return emit_csv(report);
    case TableFormat::kText: break;
  }
  std::ostringstream out;
  accuracy_tables(report.rows, out);
  mixed_table(report.rows, out);
  time_table(report.rows, out);
  out << "threads: " << report.threads << ", repeats: " << report.repeats << ", seed: " << report.seed << '\n';
  out << "Similarity is the mean top-1 softmax confidence of the pretrained classifier (confidence similarity).\n";
  std::vector<std::string> warnings;
  for (const auto& r : report.rows) {
    for (const auto& w : r.warnings) {
      const auto line = r.group + " / " + r.backbone + ": " + w;
      if (std::find(warnings.begin(), warnings.end(), line) == warnings.end()) warnings.push_back(line);
    }
  }
  for (const auto& w : warnings) out << "note: " << w << '\n';
  return out.str();
}

}  // namespace tlh
