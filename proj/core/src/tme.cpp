#include "tmeseg/tme.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "tmeseg/counting.hpp"

namespace tmeseg {

const std::vector<CellGroup>& default_cell_groups() {
  static const std::vector<CellGroup> groups{
      {"fibroblast", {cls::fibroblast}},
      {"endothelial", {cls::endothelial}},
      {"lymphocyte", {cls::lymphocyte}},
      {"plasma_cell", {cls::plasma_cell}},
      {"myeloid_cell", {cls::myeloid_cell}},
      {"neutrophil", {cls::neutrophil}},
      {"eosinophil", {cls::eosinophil}},
      {"all_leukocytes",
       {cls::leukocyte, cls::lymphocyte, cls::plasma_cell, cls::myeloid_cell, cls::eosinophil, cls::neutrophil}},
  };
  return groups;
}

namespace {

struct ClassCount {
  std::uint64_t total = 0;
  std::uint64_t in_band = 0;
};

ClassCount count_with_band(const LabelRaster& mask, ClassId c, const BitMask& band) {
  const InstanceMap cc = connected_components(class_mask(mask, c), Connectivity::eight);
  ClassCount out;
  out.total = cc.count();
  for (const auto& [id, a] : cc.attrs) {
    const int x = static_cast<int>(std::lround(a.cx));
    const int y = static_cast<int>(std::lround(a.cy));
    if (band.contains(x, y) && band(x, y)) ++out.in_band;
  }
  return out;
}

}  // namespace

SlideMetrics slide_metrics(const LabelRaster& mask, double mpp, double margin_um, const std::vector<CellGroup>& groups,
                           int workers) {
  if (!(mpp > 0.0) || !std::isfinite(mpp)) throw usage_error("slide_metrics: mpp must be positive");
  if (!(margin_um > 0.0)) throw usage_error("slide_metrics: margin must be positive");
  SlideMetrics m;
  m.mpp = mpp;
  m.margin_um = margin_um;

  BitMask tumor(mask.width(), mask.height(), 0);
  for (std::size_t i = 0; i < tumor.size(); ++i) {
    tumor[i] = (mask[i] == cls::epithelial_tissue || mask[i] == cls::epithelial_cell_nucleus) ? 1 : 0;
  }
  m.tumor_region_px = count_set(tumor);
  m.tumor_cell_count = count_by_components(mask, cls::epithelial_cell_nucleus);
  const BitMask band = distance_band(tumor, margin_um, mpp, workers);
  m.band_area_px = count_set(band);
  m.band_area_mm2 = static_cast<double>(m.band_area_px) * mpp * mpp / 1e6;

  std::map<ClassId, ClassCount> per_class;
  for (const auto& g : groups) {
    for (ClassId c : g.classes) {
      if (!per_class.contains(c)) per_class[c] = count_with_band(mask, c, band);
    }
  }
  for (const auto& g : groups) {
    GroupMetrics gm;
    gm.name = g.name;
    for (ClassId c : g.classes) {
      gm.count += per_class[c].total;
      gm.band_count += per_class[c].in_band;
    }
    if (m.band_area_px > 0) gm.band_density_mm2 = static_cast<double>(gm.band_count) / m.band_area_mm2;
    if (m.tumor_cell_count > 0) {
      const auto tumor_n = static_cast<double>(m.tumor_cell_count);
      gm.in_tumor_ratio = static_cast<double>(gm.count) / tumor_n;
      if (gm.band_density_mm2) gm.peripheral_ratio = *gm.band_density_mm2 / tumor_n;
    }
    m.groups.push_back(std::move(gm));
  }
  return m;
}

nlohmann::json to_json(const SlideMetrics& m) {
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::json doc{{"mpp", m.mpp},
                     {"margin_um", m.margin_um},
                     {"tumor_cell_count", m.tumor_cell_count},
                     {"tumor_region_px", m.tumor_region_px},
                     {"band_area_px", m.band_area_px},
                     {"band_area_mm2", m.band_area_mm2},
                     {"density_unit", "cells per mm^2 of margin band"}};
  auto& groups = doc["groups"] = nlohmann::json::array();
  for (const auto& g : m.groups) {
    groups.push_back({{"name", g.name},
                      {"count", g.count},
                      {"band_count", g.band_count},
                      {"in_tumor_ratio", opt(g.in_tumor_ratio)},
                      {"band_density_mm2", opt(g.band_density_mm2)},
                      {"peripheral_ratio", opt(g.peripheral_ratio)}});
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

namespace {

// Doubled midranks of the pooled sample (integers), with tie group sizes.
struct PooledRanks {
  std::vector<std::int64_t> rank2;  // parallel to the pooled input order
  std::vector<std::size_t> tie_sizes;
};

PooledRanks pooled_ranks(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size() + b.size();
  std::vector<double> v(n);
  std::copy(a.begin(), a.end(), v.begin());
  std::copy(b.begin(), b.end(), v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  PooledRanks r;
  r.rank2.resize(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && v[order[j]] == v[order[i]]) ++j;
    // ranks i+1..j, midrank (i+1+j)/2, doubled.
    const auto mid2 = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) r.rank2[order[k]] = mid2;
    r.tie_sizes.push_back(j - i);
    i = j;
  }
  return r;
}

// P(|2U - 2mu| >= |2U_obs - 2mu|) for the group of size m drawn from the
// pooled doubled ranks, by dynamic programming over doubled rank sums.
double exact_two_sided(const std::vector<std::int64_t>& rank2, std::size_t m, std::int64_t other, std::int64_t u2_obs) {
  std::int64_t max_sum = 0;
  {
    std::vector<std::int64_t> sorted = rank2;
    std::sort(sorted.rbegin(), sorted.rend());
    for (std::size_t i = 0; i < m; ++i) max_sum += sorted[i];
  }
  const auto width = static_cast<std::size_t>(max_sum + 1);
  std::vector<std::vector<long double>> ways(m + 1, std::vector<long double>(width, 0.0L));
  ways[0][0] = 1.0L;
  for (std::int64_t r : rank2) {
    for (std::size_t k = m; k >= 1; --k) {
      const auto& prev = ways[k - 1];
      auto& cur = ways[k];
      for (std::size_t s = width; s-- > static_cast<std::size_t>(r);) {
        if (prev[s - static_cast<std::size_t>(r)] != 0.0L) cur[s] += prev[s - static_cast<std::size_t>(r)];
      }
    }
  }
  const std::int64_t mu2 = static_cast<std::int64_t>(m) * other;
  const std::int64_t base = static_cast<std::int64_t>(m * (m + 1));
  const std::int64_t obs = std::llabs(u2_obs - mu2);
  long double hit = 0.0L, total = 0.0L;
  for (std::size_t s = 0; s < width; ++s) {
    const long double w = ways[m][s];
    if (w == 0.0L) continue;
    total += w;
    const std::int64_t u2 = static_cast<std::int64_t>(s) - base;
    if (std::llabs(u2 - mu2) >= obs) hit += w;
  }
  return static_cast<double>(std::min(1.0L, hit / total));
}

}  // namespace

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, std::size_t exact_max) {
  if (a.empty() || b.empty()) throw data_error("mann_whitney_u: both samples must be non-empty");
  for (double v : a) {
    if (std::isnan(v)) throw data_error("mann_whitney_u: NaN in sample");
  }
  for (double v : b) {
    if (std::isnan(v)) throw data_error("mann_whitney_u: NaN in sample");
  }
  const auto na = static_cast<std::int64_t>(a.size());
  const auto nb = static_cast<std::int64_t>(b.size());
  const PooledRanks pr = pooled_ranks(a, b);
  std::int64_t r2a = 0;
  for (std::size_t i = 0; i < a.size(); ++i) r2a += pr.rank2[i];
  const std::int64_t u2a = r2a - na * (na + 1);

  MannWhitneyResult out;
  out.u = static_cast<double>(u2a) / 2.0;
  if (std::min(a.size(), b.size()) <= exact_max) {
    out.exact = true;
    if (a.size() <= b.size()) {
      out.p_value = exact_two_sided(pr.rank2, a.size(), nb, u2a);
    } else {
      const std::int64_t u2b = 2 * na * nb - u2a;
      out.p_value = exact_two_sided(pr.rank2, b.size(), na, u2b);
    }
    return out;
  }

  const auto n = static_cast<double>(na + nb);
  double tie_term = 0.0;
  for (std::size_t t : pr.tie_sizes) {
    const auto tt = static_cast<double>(t);
    tie_term += tt * tt * tt - tt;
  }
  const double nab = static_cast<double>(na) * static_cast<double>(nb);
  const double var = nab / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) {
    out.p_value = 1.0;
    return out;
  }
  const double diff = std::max(0.0, std::fabs(out.u - nab / 2.0) - 0.5);
  out.p_value = std::min(1.0, std::erfc(diff / std::sqrt(var) / std::sqrt(2.0)));
  return out;
}

// ---------------------------------------------------------------------------
// Cases

std::map<std::string, std::optional<double>> flatten(const SlideMetrics& m) {
  std::map<std::string, std::optional<double>> out;
  for (const auto& g : m.groups) {
    out["in_tumor." + g.name] = g.in_tumor_ratio;
    out["peripheral." + g.name] = g.peripheral_ratio;
  }
  return out;
}

CaseRecord make_case(std::string case_id, std::span<const SlideMetrics> slides, std::map<std::string, bool> mutated) {
  CaseRecord c;
  c.case_id = std::move(case_id);
  c.mutated = std::move(mutated);
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& s : slides) {
    for (const auto& [name, v] : flatten(s)) {
      auto& a = acc[name];
      if (v) {
        a.first += *v;
        ++a.second;
      }
    }
  }
  for (const auto& [name, a] : acc) {
    c.metrics[name] = a.second > 0 ? std::optional<double>(a.first / static_cast<double>(a.second)) : std::nullopt;
  }
  return c;
}

std::vector<AssociationCell> association_table(std::span<const CaseRecord> cases, std::span<const std::string> genes,
                                               std::vector<std::string> metrics, std::size_t min_group) {
  if (metrics.empty()) {
    std::set<std::string> all;
    for (const auto& c : cases) {
      for (const auto& [name, v] : c.metrics) all.insert(name);
    }
    metrics.assign(all.begin(), all.end());
  }
  std::vector<AssociationCell> out;
  for (const auto& metric : metrics) {
    for (const auto& gene : genes) {
      AssociationCell cell;
      cell.metric = metric;
      cell.gene = gene;
      std::vector<double> mut, wt;
      for (const auto& c : cases) {
        const auto m = c.metrics.find(metric);
        const auto g = c.mutated.find(gene);
        if (m == c.metrics.end() || !m->second || g == c.mutated.end()) continue;
        (g->second ? mut : wt).push_back(*m->second);
      }
      // Sorting makes the test independent of case order.
      std::sort(mut.begin(), mut.end());
      std::sort(wt.begin(), wt.end());
      cell.n_mutated = mut.size();
      cell.n_wildtype = wt.size();
      if (mut.size() < min_group || wt.size() < min_group) {
        cell.status = AssociationStatus::insufficient_n;
      } else {
        cell.test = mann_whitney_u(mut, wt);
        const double mu = static_cast<double>(mut.size()) * static_cast<double>(wt.size()) / 2.0;
        cell.direction = cell.test->u > mu ? "enriched" : cell.test->u < mu ? "depleted" : "none";
      }
      out.push_back(std::move(cell));
    }
  }
  return out;
}

nlohmann::json to_json(const std::vector<AssociationCell>& t) {
  auto rows = nlohmann::json::array();
  for (const auto& c : t) {
    nlohmann::json r{{"metric", c.metric},
                     {"gene", c.gene},
                     {"n_mutated", c.n_mutated},
                     {"n_wildtype", c.n_wildtype},
                     {"status", c.status == AssociationStatus::ok ? "ok" : "insufficient_n"}};
    if (c.test) {
      r["u"] = c.test->u;
      r["p_value"] = c.test->p_value;
      r["exact"] = c.test->exact;
      r["direction"] = c.direction;
    } else {
      r["u"] = nullptr;
      r["p_value"] = nullptr;
      r["direction"] = nullptr;
    }
    rows.push_back(std::move(r));
  }
  return nlohmann::json{{"schema_version", 1}, {"p_values", "nominal"}, {"rows", rows}};
}

std::string to_csv(const std::vector<AssociationCell>& t) {
  std::string out = "metric,gene,n_mutated,n_wildtype,u,p_value,direction,status\n";
  for (const auto& c : t) {
    const std::string status = c.status == AssociationStatus::ok ? "ok" : "insufficient_n";
    if (c.test) {
      out += fmt::format("{},{},{},{},{},{:.17g},{},{}\n", c.metric, c.gene, c.n_mutated, c.n_wildtype, c.test->u,
                         c.test->p_value, c.direction, status);
    } else {
      out += fmt::format("{},{},{},{},,,,{}\n", c.metric, c.gene, c.n_mutated, c.n_wildtype, status);
    }
  }
  return out;
}

}  // namespace tmeseg
