#pragma once

#include "sdm/core.hpp"
#include "sdm/csv.hpp"

#include <algorithm>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sdm {

// One grid cell as seen by a single-location evaluator.
struct Cell {
  long long id = 0;
  double lon = kNaN;
  double lat = kNaN;
  double w = 1.0;
  Vector x;  // habitat features
  Vector z;  // bias features
  Vector v;  // accessibility features
  long long presence_count = 0;
};

// Affine map x_std = (x - center) / scale applied column-wise to a feature block.
struct FeatureTransform {
  Vector center;
  Vector scale;

  bool empty() const { return center.size() == 0; }

  static FeatureTransform identity(Index k) {
    return {Vector::Zero(k), Vector::Ones(k)};
  }

  // Coefficients fitted on standardized features -> coefficients on the original scale.
  std::pair<double, Vector> to_original(double intercept, const Vector& slopes) const {
    if (empty()) return {intercept, slopes};
    Vector orig = slopes.cwiseQuotient(scale);
    return {intercept - orig.dot(center), orig};
  }

  std::pair<double, Vector> to_standardized(double intercept, const Vector& slopes) const {
    if (empty()) return {intercept, slopes};
    return {intercept + slopes.dot(center), slopes.cwiseProduct(scale)};
  }

  Matrix apply(const Matrix& raw) const {
    if (empty()) return raw;
    return (raw.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array();
  }
};

struct FeatureNames {
  std::vector<std::string> x;
  std::vector<std::string> z;
  std::vector<std::string> v;
};

// Computes the population-sd standardizing transform of each column. Constant
// columns keep scale 1 so they stay collinear with the intercept rather than
// turning into NaN.
inline FeatureTransform fit_standardizer(const Matrix& raw) {
  const Index k = raw.cols();
  FeatureTransform t{Vector::Zero(k), Vector::Ones(k)};
  if (raw.rows() == 0) return t;
  for (Index j = 0; j < k; ++j) {
    const double mean = raw.col(j).mean();
    const double var = (raw.col(j).array() - mean).square().mean();
    t.center(j) = mean;
    t.scale(j) = var > 0 ? std::sqrt(var) : 1.0;
  }
  return t;
}

// The discretized study area. Feature blocks are stored column-major as
// matrices (one row per cell) and shared between copies, so replicating a grid
// with new presence counts is cheap.
class CovariateGrid {
 public:
  struct Features {
    std::vector<long long> ids;
    Vector lon, lat;
    Vector w;
    Matrix x, z, v;
    FeatureNames names;
    FeatureTransform x_transform, z_transform, v_transform;
  };

  CovariateGrid() = default;

  // Builds and validates a grid. `area` <= 0 means "sum of weights".
  CovariateGrid(Vector w, Matrix x, Vector counts, double area = 0.0, Matrix z = {},
                Matrix v = {}) {
    auto f = std::make_shared<Features>();
    const Index m = w.size();
    f->w = std::move(w);
    f->x = std::move(x);
    f->z = z.size() == 0 ? Matrix(m, 0) : std::move(z);
    f->v = v.size() == 0 ? Matrix(m, 0) : std::move(v);
    f->ids.resize(static_cast<std::size_t>(m));
    for (Index i = 0; i < m; ++i) f->ids[static_cast<std::size_t>(i)] = i;
    f->lon = Vector::Constant(m, kNaN);
    f->lat = Vector::Constant(m, kNaN);
    features_ = std::move(f);
    counts_ = std::move(counts);
    area_ = area > 0 ? area : features_->w.sum();
    validate();
  }

  CovariateGrid(std::shared_ptr<const Features> features, Vector counts, double area)
      : features_(std::move(features)), counts_(std::move(counts)), area_(area) {
    validate();
  }

  Index size() const { return features_ ? features_->w.size() : 0; }
  Index p() const { return features_->x.cols(); }
  Index q() const { return features_->z.cols(); }
  Index r() const { return features_->v.cols(); }
  double area() const { return area_; }

  const Vector& weights() const { return features_->w; }
  const Matrix& habitat() const { return features_->x; }
  const Matrix& bias() const { return features_->z; }
  const Matrix& access() const { return features_->v; }
  const Vector& counts() const { return counts_; }
  const Vector& lon() const { return features_->lon; }
  const Vector& lat() const { return features_->lat; }
  const std::vector<long long>& ids() const { return features_->ids; }
  const FeatureNames& names() const { return features_->names; }
  const FeatureTransform& habitat_transform() const { return features_->x_transform; }
  const FeatureTransform& bias_transform() const { return features_->z_transform; }
  const FeatureTransform& access_transform() const { return features_->v_transform; }
  const std::shared_ptr<const Features>& features() const { return features_; }

  double total_presence() const { return counts_.sum(); }

  Cell cell(Index i) const {
    Cell c;
    c.id = features_->ids[static_cast<std::size_t>(i)];
    c.lon = features_->lon(i);
    c.lat = features_->lat(i);
    c.w = features_->w(i);
    c.x = features_->x.row(i).transpose();
    c.z = features_->z.row(i).transpose();
    c.v = features_->v.row(i).transpose();
    c.presence_count = static_cast<long long>(counts_(i));
    return c;
  }

  // Same cells and features, different presence counts.
  CovariateGrid with_counts(Vector counts) const {
    return CovariateGrid(features_, std::move(counts), area_);
  }

  // Restriction to a subset of cells (area becomes the subset's weight sum).
  CovariateGrid subset(const std::vector<Index>& cells) const {
    auto f = std::make_shared<Features>();
    const Index k = static_cast<Index>(cells.size());
    f->w.resize(k);
    f->lon.resize(k);
    f->lat.resize(k);
    f->x.resize(k, p());
    f->z.resize(k, q());
    f->v.resize(k, r());
    Vector c(k);
    for (Index a = 0; a < k; ++a) {
      const Index i = cells[static_cast<std::size_t>(a)];
      f->ids.push_back(features_->ids[static_cast<std::size_t>(i)]);
      f->w(a) = features_->w(i);
      f->lon(a) = features_->lon(i);
      f->lat(a) = features_->lat(i);
      f->x.row(a) = features_->x.row(i);
      f->z.row(a) = features_->z.row(i);
      f->v.row(a) = features_->v.row(i);
      c(a) = counts_(i);
    }
    f->names = features_->names;
    f->x_transform = features_->x_transform;
    f->z_transform = features_->z_transform;
    f->v_transform = features_->v_transform;
    const double area = f->w.sum();
    return CovariateGrid(std::move(f), std::move(c), area);
  }

  // Standardizes every feature block (mean 0, population sd 1) and records the
  // transforms so fitted coefficients can be mapped back to the original scale.
  CovariateGrid standardized() const {
    auto f = std::make_shared<Features>(*features_);
    f->x_transform = fit_standardizer(f->x);
    f->z_transform = fit_standardizer(f->z);
    f->v_transform = fit_standardizer(f->v);
    f->x = f->x_transform.apply(f->x);
    f->z = f->z_transform.apply(f->z);
    f->v = f->v_transform.apply(f->v);
    return CovariateGrid(std::move(f), counts_, area_);
  }

  void set_metadata(std::vector<long long> ids, Vector lon, Vector lat, FeatureNames names) {
    auto f = std::make_shared<Features>(*features_);
    f->ids = std::move(ids);
    f->lon = std::move(lon);
    f->lat = std::move(lat);
    f->names = std::move(names);
    features_ = std::move(f);
    validate();
  }

 private:
  void validate() const {
    const Index m = size();
    if (m < 1) throw ValidationError("grid must contain at least one cell");
    const auto& f = *features_;
    if (f.x.rows() != m || f.z.rows() != m || f.v.rows() != m || counts_.size() != m ||
        f.lon.size() != m || f.lat.size() != m || static_cast<Index>(f.ids.size()) != m) {
      throw ValidationError("grid arrays disagree on the number of cells");
    }
    for (Index i = 0; i < m; ++i) {
      if (!(f.w(i) > 0) || !std::isfinite(f.w(i))) {
        std::ostringstream os;
        os << "cell " << f.ids[static_cast<std::size_t>(i)] << ": weight must be positive and finite, got "
           << f.w(i);
        throw ValidationError(os.str());
      }
      if (!(counts_(i) >= 0) || counts_(i) != std::floor(counts_(i))) {
        std::ostringstream os;
        os << "cell " << f.ids[static_cast<std::size_t>(i)]
           << ": presence count must be a nonnegative integer, got " << counts_(i);
        throw ValidationError(os.str());
      }
    }
    if (!f.x.allFinite() || !f.z.allFinite() || !f.v.allFinite()) {
      throw ValidationError("grid features must be finite");
    }
    const double sw = f.w.sum();
    if (std::abs(sw - area_) > 1e-9 * std::max(1.0, std::abs(area_))) {
      std::ostringstream os;
      os.precision(17);
      os << "sum of quadrature weights " << sw << " does not match area " << area_;
      throw ValidationError(os.str());
    }
  }

  std::shared_ptr<const Features> features_;
  Vector counts_;
  double area_ = 0.0;
};

struct PresenceSet {
  std::vector<Index> indices;  // cells with presence_count >= 1
  long long n = 0;             // total number of presence points
};

inline PresenceSet presence_set(const CovariateGrid& grid) {
  PresenceSet s;
  for (Index i = 0; i < grid.size(); ++i) {
    const double c = grid.counts()(i);
    if (c >= 1) {
      s.indices.push_back(i);
      s.n += static_cast<long long>(c);
    }
  }
  return s;
}

// Pseudo-responses zeta_i = presence_count_i / w_i that turn the point-process
// score into a weighted Poisson-regression score.
inline Vector pseudo_responses(const CovariateGrid& grid) {
  return grid.counts().cwiseQuotient(grid.weights());
}

// Column mapping for load_grid.
struct GridSchema {
  std::string id = "id";
  std::string presence = "presence";
  std::string weight = "w";
  std::string lon = "lon";
  std::string lat = "lat";
  std::string bias_prefix = "z_";
  std::string access_prefix = "v_";
  // Explicit column lists; when empty, columns are assigned by prefix and all
  // remaining numeric columns are habitat features.
  std::vector<std::string> habitat;
  std::vector<std::string> bias;
  std::vector<std::string> access;
  // Study-area size used for uniform weights when the file has no weight column.
  std::optional<double> area;
  bool standardize = true;
};

inline CovariateGrid load_grid(const csv::Table& t, const GridSchema& schema) {
  const std::size_t c_id = t.require_column(schema.id);
  const std::size_t c_pres = t.require_column(schema.presence);
  const auto c_w = t.column(schema.weight);
  const auto c_lon = t.column(schema.lon);
  const auto c_lat = t.column(schema.lat);
  if (!c_w && !schema.area) {
    throw ParseError(t.source + ": no '" + schema.weight +
                     "' column and no study area given for uniform weights");
  }

  auto starts_with = [](const std::string& s, const std::string& pre) {
    return !pre.empty() && s.rfind(pre, 0) == 0;
  };

  std::vector<std::size_t> cx, cz, cv;
  FeatureNames names;
  auto resolve = [&](const std::vector<std::string>& list, std::vector<std::size_t>& cols,
                     std::vector<std::string>& out) {
    for (const auto& name : list) {
      cols.push_back(t.require_column(name));
      out.push_back(name);
    }
  };
  if (!schema.habitat.empty() || !schema.bias.empty() || !schema.access.empty()) {
    resolve(schema.habitat, cx, names.x);
    resolve(schema.bias, cz, names.z);
    resolve(schema.access, cv, names.v);
  } else {
    std::set<std::size_t> reserved{c_id, c_pres};
    if (c_w) reserved.insert(*c_w);
    if (c_lon) reserved.insert(*c_lon);
    if (c_lat) reserved.insert(*c_lat);
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      if (reserved.count(j)) continue;
      const std::string& h = t.header[j];
      if (starts_with(h, schema.bias_prefix)) {
        cz.push_back(j);
        names.z.push_back(h);
      } else if (starts_with(h, schema.access_prefix)) {
        cv.push_back(j);
        names.v.push_back(h);
      } else {
        cx.push_back(j);
        names.x.push_back(h);
      }
    }
  }

  const Index m = static_cast<Index>(t.rows.size());
  if (m == 0) throw ValidationError(t.source + ": no data rows");
  Vector w(m), counts(m), lon = Vector::Constant(m, kNaN), lat = Vector::Constant(m, kNaN);
  Matrix x(m, static_cast<Index>(cx.size())), z(m, static_cast<Index>(cz.size())),
      v(m, static_cast<Index>(cv.size()));
  std::vector<long long> ids(static_cast<std::size_t>(m));
  std::unordered_set<long long> seen;

  for (Index i = 0; i < m; ++i) {
    const auto row = static_cast<std::size_t>(i);
    const long long id = csv::to_integer(t, row, c_id);
    if (!seen.insert(id).second) {
      throw ValidationError(t.where(row, c_id) + ": duplicate id " + std::to_string(id));
    }
    ids[row] = id;
    const long long pc = csv::to_integer(t, row, c_pres);
    if (pc < 0) {
      throw ValidationError(t.where(row, c_pres) + ": negative presence count");
    }
    counts(i) = static_cast<double>(pc);
    if (c_w) {
      w(i) = csv::to_double(t, row, *c_w);
      if (!(w(i) > 0)) {
        throw ValidationError(t.where(row, *c_w) + ": weight must be positive, got " +
                              t.rows[row][*c_w]);
      }
    } else {
      w(i) = *schema.area / static_cast<double>(m);
    }
    if (c_lon) lon(i) = csv::to_double(t, row, *c_lon);
    if (c_lat) lat(i) = csv::to_double(t, row, *c_lat);
    for (std::size_t a = 0; a < cx.size(); ++a) x(i, static_cast<Index>(a)) = csv::to_double(t, row, cx[a]);
    for (std::size_t a = 0; a < cz.size(); ++a) z(i, static_cast<Index>(a)) = csv::to_double(t, row, cz[a]);
    for (std::size_t a = 0; a < cv.size(); ++a) v(i, static_cast<Index>(a)) = csv::to_double(t, row, cv[a]);
  }

  const double area = c_w ? (schema.area ? *schema.area : w.sum()) : *schema.area;
  CovariateGrid grid(std::move(w), std::move(x), std::move(counts), area, std::move(z), std::move(v));
  grid.set_metadata(std::move(ids), std::move(lon), std::move(lat), std::move(names));
  return schema.standardize ? grid.standardized() : grid;
}

inline CovariateGrid load_grid(const std::string& path, const GridSchema& schema = {}) {
  return load_grid(csv::read_file(path), schema);
}

}  // namespace sdm
