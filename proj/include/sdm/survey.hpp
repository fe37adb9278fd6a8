#pragma once

#include "sdm/core.hpp"
#include "sdm/csv.hpp"
#include "sdm/grid.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace sdm {

// Repeat-visit site-occupancy design: K disjoint regions (cell index sets) each
// surveyed T times with per-visit detection covariates.
struct SurveyDesign {
  std::vector<std::vector<Index>> regions;
  int visits = 1;
  std::vector<Matrix> detection;  // per region, visits x dz (no intercept column)

  Index num_regions() const { return static_cast<Index>(regions.size()); }
  Index detection_dim() const { return detection.empty() ? 0 : detection.front().cols(); }

  void validate(Index grid_size) const {
    if (visits < 1) throw ValidationError("survey design needs at least one visit");
    if (detection.size() != regions.size()) {
      throw ValidationError("survey design: detection covariates missing for some regions");
    }
    std::set<Index> used;
    for (std::size_t k = 0; k < regions.size(); ++k) {
      if (regions[k].empty()) {
        throw ValidationError("survey region " + std::to_string(k) + " is empty");
      }
      for (Index i : regions[k]) {
        if (i < 0 || i >= grid_size) {
          throw ValidationError("survey region " + std::to_string(k) + " references a cell outside the grid");
        }
        if (!used.insert(i).second) {
          throw ValidationError("survey regions overlap at cell index " + std::to_string(i));
        }
      }
      if (detection[k].rows() != visits || detection[k].cols() != detection_dim()) {
        throw ValidationError("survey region " + std::to_string(k) + ": detection covariates have wrong shape");
      }
      if (!detection[k].allFinite()) throw ValidationError("non-finite detection covariate");
    }
  }
};

// K x T detection/non-detection matrix.
struct SurveyData {
  Matrix y;

  Index num_regions() const { return y.rows(); }

  // S_i = 1 iff region i was never detected.
  std::vector<int> s_flags() const {
    std::vector<int> s(static_cast<std::size_t>(y.rows()));
    for (Index i = 0; i < y.rows(); ++i) s[static_cast<std::size_t>(i)] = y.row(i).sum() == 0 ? 1 : 0;
    return s;
  }

  void validate(const SurveyDesign& design) const {
    if (y.rows() != design.num_regions() || (y.rows() > 0 && y.cols() != design.visits)) {
      throw ValidationError("survey data shape does not match the design");
    }
    for (Index i = 0; i < y.rows(); ++i) {
      for (Index j = 0; j < y.cols(); ++j) {
        if (y(i, j) != 0.0 && y(i, j) != 1.0) {
          throw ValidationError("survey data must be binary (region " + std::to_string(i) + ")");
        }
      }
    }
  }
};

// Distance-sampling survey area: a grid of cells with the perpendicular distance
// of each cell to the transect and half-normal scale covariates.
struct DsArea {
  CovariateGrid grid;
  Vector distance;
  Matrix scale;  // cells x ds (no intercept column)

  void validate() const {
    if (distance.size() != grid.size() || scale.rows() != grid.size()) {
      throw ValidationError("distance-sampling area arrays disagree with the grid");
    }
    if (!(distance.array() >= 0).all() || !distance.allFinite()) {
      throw ValidationError("distances must be finite and nonnegative");
    }
  }
};

struct DsPoint {
  Index cell = 0;
  double distance = 0.0;
  Vector scale;
};

struct DsData {
  std::vector<DsPoint> points;
  Vector omega;  // half-normal log-scale coefficients (intercept first)
};

// ---------------------------------------------------------------------------
// CSV ingestion.

inline std::map<long long, Index> cell_index_by_id(const CovariateGrid& grid) {
  std::map<long long, Index> out;
  for (Index i = 0; i < grid.size(); ++i) out[grid.ids()[static_cast<std::size_t>(i)]] = i;
  return out;
}

// regions CSV: region_id, cell_id
// survey CSV:  region_id, visit, y, detection covariates...
inline std::pair<SurveyDesign, SurveyData> load_survey(const std::string& regions_path,
                                                       const std::string& survey_path,
                                                       const CovariateGrid& grid) {
  const auto ids = cell_index_by_id(grid);
  const csv::Table rt = csv::read_file(regions_path);
  const auto r_region = rt.require_column("region_id");
  const auto r_cell = rt.require_column("cell_id");
  std::map<long long, std::vector<Index>> members;
  for (std::size_t row = 0; row < rt.rows.size(); ++row) {
    const long long region = csv::to_integer(rt, row, r_region);
    const long long cell = csv::to_integer(rt, row, r_cell);
    auto it = ids.find(cell);
    if (it == ids.end()) {
      throw ValidationError(rt.where(row, r_cell) + ": unknown cell id " + std::to_string(cell));
    }
    members[region].push_back(it->second);
  }

  const csv::Table st = csv::read_file(survey_path);
  const auto s_region = st.require_column("region_id");
  const auto s_visit = st.require_column("visit");
  const auto s_y = st.require_column("y");
  std::vector<std::size_t> zcols;
  for (std::size_t j = 0; j < st.header.size(); ++j) {
    if (j != s_region && j != s_visit && j != s_y) zcols.push_back(j);
  }
  int visits = 0;
  for (std::size_t row = 0; row < st.rows.size(); ++row) {
    const long long v = csv::to_integer(st, row, s_visit);
    if (v < 1) throw ValidationError(st.where(row, s_visit) + ": visits are numbered from 1");
    visits = std::max<int>(visits, static_cast<int>(v));
  }

  SurveyDesign design;
  design.visits = std::max(visits, 1);
  std::map<long long, Index> region_row;
  for (const auto& [rid, cells] : members) {
    region_row[rid] = design.num_regions();
    design.regions.push_back(cells);
    design.detection.push_back(Matrix::Constant(design.visits, static_cast<Index>(zcols.size()), kNaN));
  }
  SurveyData data;
  data.y = Matrix::Constant(design.num_regions(), design.visits, kNaN);
  for (std::size_t row = 0; row < st.rows.size(); ++row) {
    const long long rid = csv::to_integer(st, row, s_region);
    auto it = region_row.find(rid);
    if (it == region_row.end()) {
      throw ValidationError(st.where(row, s_region) + ": region has no cells in the regions file");
    }
    const Index k = it->second;
    const Index j = static_cast<Index>(csv::to_integer(st, row, s_visit)) - 1;
    if (!std::isnan(data.y(k, j))) {
      throw ValidationError(st.where(row, s_visit) + ": duplicate (region, visit)");
    }
    data.y(k, j) = static_cast<double>(csv::to_integer(st, row, s_y));
    for (std::size_t a = 0; a < zcols.size(); ++a) {
      design.detection[static_cast<std::size_t>(k)](j, static_cast<Index>(a)) = csv::to_double(st, row, zcols[a]);
    }
  }
  if (!data.y.allFinite()) throw ValidationError(survey_path + ": some (region, visit) pairs are missing");
  design.validate(grid.size());
  data.validate(design);
  return {std::move(design), std::move(data)};
}

// DS area CSV is a grid CSV with an extra `distance` column and scale
// covariates prefixed `u_`.
inline DsArea load_ds_area(const std::string& path, GridSchema schema = {}) {
  const csv::Table t = csv::read_file(path);
  const auto c_d = t.require_column("distance");
  std::vector<std::size_t> ucols;
  if (schema.habitat.empty()) {
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      const auto& h = t.header[j];
      if (h == schema.id || h == schema.presence || h == schema.weight || h == schema.lon ||
          h == schema.lat || h == "distance") {
        continue;
      }
      if (h.rfind("u_", 0) == 0) {
        ucols.push_back(j);
      } else if (h.rfind(schema.bias_prefix, 0) == 0) {
        schema.bias.push_back(h);
      } else if (h.rfind(schema.access_prefix, 0) == 0) {
        schema.access.push_back(h);
      } else {
        schema.habitat.push_back(h);
      }
    }
  }
  DsArea area;
  area.grid = load_grid(t, schema);
  const Index m = area.grid.size();
  area.distance.resize(m);
  area.scale.resize(m, static_cast<Index>(ucols.size()));
  for (Index i = 0; i < m; ++i) {
    const auto row = static_cast<std::size_t>(i);
    area.distance(i) = csv::to_double(t, row, c_d);
    if (area.distance(i) < 0) throw ValidationError(t.where(row, c_d) + ": negative distance");
    for (std::size_t a = 0; a < ucols.size(); ++a) area.scale(i, static_cast<Index>(a)) = csv::to_double(t, row, ucols[a]);
  }
  area.validate();
  return area;
}

// DS detections CSV: point_id, cell_id, distance, scale covariates (u_*).
inline DsData load_ds_points(const std::string& path, const DsArea& area) {
  const auto ids = cell_index_by_id(area.grid);
  const csv::Table t = csv::read_file(path);
  t.require_column("point_id");
  const auto c_cell = t.require_column("cell_id");
  const auto c_d = t.require_column("distance");
  std::vector<std::size_t> ucols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (t.header[j].rfind("u_", 0) == 0) ucols.push_back(j);
  }
  if (static_cast<Index>(ucols.size()) != area.scale.cols()) {
    throw ValidationError(path + ": scale covariates do not match the survey area");
  }
  DsData data;
  for (std::size_t row = 0; row < t.rows.size(); ++row) {
    DsPoint pt;
    const long long cell = csv::to_integer(t, row, c_cell);
    auto it = ids.find(cell);
    if (it == ids.end()) throw ValidationError(t.where(row, c_cell) + ": unknown cell id");
    pt.cell = it->second;
    pt.distance = csv::to_double(t, row, c_d);
    if (pt.distance < 0) throw ValidationError(t.where(row, c_d) + ": negative distance");
    pt.scale.resize(static_cast<Index>(ucols.size()));
    for (std::size_t a = 0; a < ucols.size(); ++a) pt.scale(static_cast<Index>(a)) = csv::to_double(t, row, ucols[a]);
    data.points.push_back(std::move(pt));
  }
  return data;
}

}  // namespace sdm
