#pragma once

#include "sdm/core.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace sdm::cli {

using json = nlohmann::ordered_json;

inline constexpr const char* kToolVersion = "1.0.0";

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Round-trip formatting; NaN becomes an empty field.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

inline Vector vector_from(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Index>(i)) = a[i].is_null() ? kNaN : a[i].get<double>();
  return v;
}

inline json versions() {
  return {{"sdm", kToolVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__}};
}

// A table destined for one CSV file. Rows are already formatted.
struct Table {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Run output: tables plus free-form files, all stamped with the hash of the
// manifest. The hash leaves out where the files went and how many threads
// produced them, so reruns elsewhere stamp the same hash.
class RunOutput {
 public:
  explicit RunOutput(std::string dir) : dir_(std::move(dir)) {}

  json manifest = json::object();
  json run = json::object();  // not hashed
  std::vector<Table> tables;
  std::vector<std::pair<std::string, std::string>> files;  // name, body after the header comment

  std::string hash() const { return hex64(fnv1a64(manifest.dump())); }

  std::string write() {
    std::filesystem::create_directories(dir_);
    const std::string h = hash();
    json outputs = json::array();
    for (const auto& t : tables) {
      std::ostringstream os;
      os << "# manifest " << h << '\n';
      for (std::size_t j = 0; j < t.header.size(); ++j) os << (j ? "," : "") << t.header[j];
      os << '\n';
      for (const auto& r : t.rows) {
        for (std::size_t j = 0; j < r.size(); ++j) os << (j ? "," : "") << quote(r[j]);
        os << '\n';
      }
      put(t.file, os.str());
      outputs.push_back(t.file);
    }
    for (const auto& [name, body] : files) {
      put(name, body);
      outputs.push_back(name);
    }
    json m = manifest;
    m["manifest_hash"] = h;
    m["run"] = run;
    m["outputs"] = outputs;
    put("manifest.json", m.dump(2) + "\n");
    return h;
  }

  const std::string& dir() const { return dir_; }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
      if (c == '"') out += '"';
      out += c;
    }
    return out + "\"";
  }

  void put(const std::string& name, const std::string& body) const {
    const auto path = std::filesystem::path(dir_) / name;
    std::ofstream out(path, std::ios::binary);
    out << body;
    if (!out) throw Error("cannot write '" + path.string() + "'");
  }

  std::string dir_;
};

inline json read_manifest(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "manifest.json";
  if (!std::filesystem::exists(path)) throw ConfigError("no fit manifest at '" + path.string() + "'");
  try {
    return json::parse(read_bytes(path.string()));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Raster export.

struct Raster {
  Index width = 0, height = 0;
  std::vector<Index> pixel;  // raster position of each cell
};

// Cells with coordinates are placed on the lattice of their distinct lon/lat
// values, north up. Without coordinates cells fill rows of ceil(sqrt(m)).
inline Raster layout(const Vector& lon, const Vector& lat) {
  const Index m = lon.size();
  Raster r;
  r.pixel.resize(static_cast<std::size_t>(m));
  if (m > 0 && lon.allFinite() && lat.allFinite()) {
    std::vector<double> xs(lon.data(), lon.data() + m), ys(lat.data(), lat.data() + m);
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(ys.begin(), ys.end(), std::greater<>());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    r.width = static_cast<Index>(xs.size());
    r.height = static_cast<Index>(ys.size());
    for (Index i = 0; i < m; ++i) {
      const auto cx = std::lower_bound(xs.begin(), xs.end(), lon(i)) - xs.begin();
      const auto cy = std::lower_bound(ys.begin(), ys.end(), lat(i), std::greater<>()) - ys.begin();
      r.pixel[static_cast<std::size_t>(i)] = cy * r.width + cx;
    }
    return r;
  }
  r.width = std::max<Index>(1, static_cast<Index>(std::ceil(std::sqrt(static_cast<double>(m)))));
  r.height = (m + r.width - 1) / r.width;
  for (Index i = 0; i < m; ++i) r.pixel[static_cast<std::size_t>(i)] = i;
  return r;
}

// Min-max scaling to gray levels 1..255; 0 is reserved for pixels without a
// cell. A constant map is a single mid-gray.
inline std::vector<int> gray_levels(const Vector& values) {
  double lo = kInf, hi = -kInf;
  for (Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values(i))) continue;
    lo = std::min(lo, values(i));
    hi = std::max(hi, values(i));
  }
  std::vector<int> out(static_cast<std::size_t>(values.size()), 0);
  for (Index i = 0; i < values.size(); ++i) {
    const double v = values(i);
    if (!std::isfinite(v)) continue;
    out[static_cast<std::size_t>(i)] = hi > lo ? 1 + static_cast<int>(std::lround((v - lo) / (hi - lo) * 254.0)) : 128;
  }
  return out;
}

inline std::string pgm(const Raster& r, const std::vector<int>& levels, const std::string& hash) {
  std::vector<int> px(static_cast<std::size_t>(r.width * r.height), 0);
  for (std::size_t i = 0; i < levels.size(); ++i) px[static_cast<std::size_t>(r.pixel[i])] = levels[i];
  std::ostringstream os;
  os << "P2\n# manifest " << hash << '\n' << r.width << ' ' << r.height << "\n255\n";
  // at most 17 values per line keeps lines under 70 characters
  for (Index y = 0; y < r.height; ++y) {
    for (Index x = 0; x < r.width; ++x) {
      os << px[static_cast<std::size_t>(y * r.width + x)];
      os << ((x + 1 == r.width || (x + 1) % 17 == 0) ? '\n' : ' ');
    }
  }
  return os.str();
}

}  // namespace sdm::cli
