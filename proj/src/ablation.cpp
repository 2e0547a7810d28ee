#include "cirlab/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "cirlab/config.hpp"

namespace cirlab {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double pooled_std(const PresetResult& a, const PresetResult& b) {
  const std::size_t na = a.finals.size(), nb = b.finals.size();
  if (na + nb < 3) return 0.0;
  const double va = a.stddev * a.stddev, vb = b.stddev * b.stddev;
  return std::sqrt((static_cast<double>(na - 1) * va + static_cast<double>(nb - 1) * vb) /
                   static_cast<double>(na + nb - 2));
}

bool AblationReport::orderings_hold() const {
  for (const auto& o : orderings)
    if (!o.holds) return false;
  return true;
}

std::string AblationReport::to_string() const {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "table %d over %zu seed(s)\n", table_id, seeds.size());
  out += buf;
  for (const auto& p : presets) {
    std::snprintf(buf, sizeof(buf), "  %-18s mean=%.4f std=%.4f [", p.preset.c_str(), p.mean, p.stddev);
    out += buf;
    for (std::size_t i = 0; i < p.finals.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s%.4f", i ? " " : "", p.finals[i]);
      out += buf;
    }
    out += "]\n";
  }
  for (const auto& o : orderings) {
    std::snprintf(buf, sizeof(buf), "  %-52s %s (%.4f vs %.4f)\n", o.description.c_str(),
                  o.holds ? "holds" : "VIOLATED", o.lhs, o.rhs);
    out += buf;
  }
  out += orderings_hold() ? "  verdict: qualitative ordering holds\n" : "  verdict: ordering violated\n";
  return out;
}

std::string AblationReport::csv() const {
  std::string out = "preset";
  for (std::uint64_t s : seeds) out += ",seed" + std::to_string(s);
  out += ",mean,std\n";
  char buf[64];
  for (const auto& p : presets) {
    out += p.preset;
    for (double f : p.finals) {
      std::snprintf(buf, sizeof(buf), ",%.17g", f);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.17g,%.17g\n", p.mean, p.stddev);
    out += buf;
  }
  return out;
}

namespace {

const PresetResult& find(const AblationReport& r, const std::string& name) {
  for (const auto& p : r.presets)
    if (p.preset == name) return p;
  throw std::logic_error("ablation: missing preset " + name);
}

void push_check(AblationReport& r, const std::string& desc, bool holds, double lhs, double rhs) {
  r.orderings.push_back({desc, holds, lhs, rhs});
}

}  // namespace

AblationReport run_ablation(int table_id, const RunConfig& base, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("ablation: at least one seed required");
  AblationReport report;
  report.table_id = table_id;
  report.seeds = seeds;

  for (const std::string& name : table_presets(table_id)) {
    PresetResult result;
    result.preset = name;
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      apply_preset(cfg, name);
      cfg.seed = seed;
      cfg.stream.seed = 0;  // derive from the run seed: same stream for every preset at this seed
      result.finals.push_back(run_stream(cfg).final_accuracy);
    }
    result.mean = mean_of(result.finals);
    result.stddev = stddev_of(result.finals);
    report.presets.push_back(std::move(result));
  }

  switch (table_id) {
    case 1: {
      const auto& ft = find(report, "ft");
      const auto& bl = find(report, "baseline");
      const auto& ssl = find(report, "baseline_ssl");
      const auto& mlkd = find(report, "baseline_mlkd");
      const auto& full = find(report, "full");
      push_check(report, "ft < baseline", ft.mean < bl.mean, ft.mean, bl.mean);
      push_check(report, "baseline < baseline_mlkd", bl.mean < mlkd.mean, bl.mean, mlkd.mean);
      push_check(report, "baseline_mlkd <= full", mlkd.mean <= full.mean, mlkd.mean, full.mean);
      push_check(report, "baseline < baseline_ssl", bl.mean < ssl.mean, bl.mean, ssl.mean);
      const double gap = full.mean - ft.mean;
      const double bound = 2.0 * pooled_std(ft, full);
      push_check(report, "full - ft > 2 * pooled std", gap > bound, gap, bound);
      break;
    }
    case 2: {
      const auto& a = find(report, "fkd");
      const auto& b = find(report, "fkd_ema");
      const auto& c = find(report, "fkd_ema_clkd");
      const auto& d = find(report, "fkd_ema_clkd_mpm");
      push_check(report, "fkd <= fkd_ema", a.mean <= b.mean, a.mean, b.mean);
      push_check(report, "fkd_ema <= fkd_ema_clkd", b.mean <= c.mean, b.mean, c.mean);
      push_check(report, "fkd_ema_clkd <= +mpm", c.mean <= d.mean, c.mean, d.mean);
      break;
    }
    case 3: {
      const auto& k1 = find(report, "k1");
      const auto& k3 = find(report, "k3");
      push_check(report, "k1 <= k3", k1.mean <= k3.mean, k1.mean, k3.mean);
      break;
    }
    case 4: {
      const auto& fixed = find(report, "full_fixed_alpha");
      const auto& dyn = find(report, "full");
      const double bound = fixed.mean - 0.5 * pooled_std(fixed, dyn);
      push_check(report, "dynamic >= fixed - 0.5 * pooled std", dyn.mean >= bound, dyn.mean, bound);
      break;
    }
    default: throw std::invalid_argument("table id must be 1, 2, 3 or 4");
  }
  return report;
}

}  // namespace cirlab
