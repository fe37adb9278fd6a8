#include "sdm/cli/app.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace sdm;
using sdm::cli::json;

namespace {

const std::string kFixture = std::string(SDM_TEST_DATA) + "/synthetic_p1.csv";

// values from the 1e-3 lattice search recorded with the fixture
constexpr double kFixtureTheta0 = 0.508;
constexpr double kFixtureTheta1 = 0.704;

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli sdm_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sdm");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  Cli r;
  r.code = sdm::cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  r.out = o.str();
  r.err = e.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("sdm_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& body) const {
    std::ofstream(path(name)) << body;
    return path(name);
  }

  fs::path dir_;
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::map<std::string, double> estimates(const std::string& dir, const std::string& column = "estimate") {
  const auto t = csv::read_file(dir + "/coefficients.csv");
  std::map<std::string, double> out;
  const auto c = t.require_column(column), f = t.require_column("fit"), p = t.require_column("parameter");
  for (std::size_t r = 0; r < t.rows.size(); ++r) out[t.rows[r][f] + ":" + t.rows[r][p]] = csv::to_double(t, r, c);
  return out;
}

std::map<std::string, std::string> read_files(const std::string& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) out[e.path().filename().string()] = slurp(e.path().string());
  }
  return out;
}

}  // namespace

TEST_F(CliTest, FitPppOnFixtureMatchesOracle) {
  const auto r = sdm_cli({"fit", "--method", "ppp", "--grid", kFixture, "--standardize", "false", "--out", path("f")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = estimates(path("f"));
  EXPECT_NEAR(e.at("ppp:theta0"), kFixtureTheta0, 2e-3);
  EXPECT_NEAR(e.at("ppp:x1"), kFixtureTheta1, 2e-3);
  // standardized fit reports the same model on the original scale
  ASSERT_EQ(sdm_cli({"fit", "--method", "ppp", "--grid", kFixture, "--out", path("s")}).code, 0);
  const auto o = estimates(path("s"), "original_scale");
  EXPECT_NEAR(o.at("ppp:theta0"), e.at("ppp:theta0"), 1e-8);
  EXPECT_NEAR(o.at("ppp:x1"), e.at("ppp:x1"), 1e-8);
}

TEST_F(CliTest, BetaMaxentEmitsSevenRowTable) {
  const auto r = sdm_cli({"fit", "--method", "beta-maxent", "--grid", kFixture, "--out", path("f")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = csv::read_file(path("f/beta_selection.csv"));
  ASSERT_EQ(t.rows.size(), 7u);
  const std::vector<double> grid{-1, -1.0 / 3, -0.2, 0, 0.2, 1.0 / 3, 1};
  int selected = 0;
  for (std::size_t k = 0; k < 7; ++k) {
    EXPECT_DOUBLE_EQ(csv::to_double(t, k, 0), grid[k]);
    selected += t.rows[k][t.require_column("selected")] == "true";
  }
  EXPECT_EQ(selected, 1);
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
  const auto ini = write("run.ini", "; comment\n[data]\ngrid = " + kFixture +
                                        "\nstandardize = false\n[model]\nmethod = beta\nbeta = 0.3\n[run]\nout = " +
                                        path("f") + "\n");
  ASSERT_EQ(sdm_cli({"fit", "--config", ini}).code, 0);
  EXPECT_TRUE(estimates(path("f")).count("beta(0.3):theta0") || estimates(path("f")).size() == 2);
  const auto beta_fit = estimates(path("f"));
  ASSERT_EQ(sdm_cli({"fit", "--config", ini, "--method", "ppp"}).code, 0);
  const auto ppp_fit = estimates(path("f"));
  EXPECT_NEAR(ppp_fit.at("ppp:x1"), kFixtureTheta1, 2e-3);
  EXPECT_EQ(beta_fit.count("ppp:x1"), 0u);
  const json m = json::parse(slurp(path("f/manifest.json")));
  EXPECT_EQ(m["config"]["model.method"], "ppp");
  EXPECT_EQ(m["config"]["model.beta"], "0.3");
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(sdm_cli({"fit", "--bogus", "1"}).code, 2);
  EXPECT_EQ(sdm_cli({"fit", "--method", "nope", "--grid", kFixture}).code, 2);
  EXPECT_EQ(sdm_cli({"fit", "--method", "beta", "--grid", kFixture}).code, 2);  // beta missing
  EXPECT_EQ(sdm_cli({"fit", "--method", "ppp", "--grid", path("missing.csv")}).code, 2);
  EXPECT_EQ(sdm_cli({"fit", "--config", write("a.ini", "[model]\nmethd = ppp\n")}).code, 2);
  EXPECT_EQ(sdm_cli({"fit", "--config", write("b.ini", "method = ppp\n")}).code, 2);
  EXPECT_EQ(sdm_cli({"map", "--fit", path("nowhere")}).code, 2);
  EXPECT_EQ(sdm_cli({}).code, 2);

  const auto bad = write("bad.csv", "id,presence,x1\n1,1,0.5\n2,0,abc\n");
  EXPECT_EQ(sdm_cli({"fit", "--method", "ppp", "--grid", bad, "--area", "2", "--out", path("o")}).code, 3);
  const auto neg = write("neg.csv", "id,presence,w,x1\n1,-1,1,0.5\n2,0,1,1\n");
  EXPECT_EQ(sdm_cli({"fit", "--method", "ppp", "--grid", neg, "--out", path("o")}).code, 3);

  // presences on a face of the feature hull: Maxent reports separation
  const auto sep = write("sep.csv", "id,presence,w,x1\n1,1,1,1\n2,1,1,1\n3,0,1,0\n4,0,1,0\n");
  const auto r = sdm_cli({"fit", "--method", "maxent", "--grid", sep, "--standardize", "false", "--out", path("s")});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_TRUE(fs::exists(path("s/coefficients.csv")));
}

TEST_F(CliTest, EveryCsvStartsWithManifestHash) {
  ASSERT_EQ(sdm_cli({"fit", "--method", "ql-ppp", "--grid", kFixture, "--out", path("f")}).code, 0);
  ASSERT_EQ(sdm_cli({"map", "--fit", path("f")}).code, 0);
  ASSERT_EQ(sdm_cli({"evaluate", "--fit", path("f")}).code, 0);
  for (const auto& d : {path("f"), path("f/map"), path("f/evaluate")}) {
    json m = json::parse(slurp(d + "/manifest.json"));
    const std::string h = m["manifest_hash"];
    // the hash covers the manifest without its own hash, run block and outputs list
    m.erase("manifest_hash");
    m.erase("run");
    m.erase("outputs");
    std::uint64_t f = 0xcbf29ce484222325ULL;
    for (unsigned char c : m.dump()) f = (f ^ c) * 0x100000001b3ULL;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f));
    EXPECT_EQ(h, buf);
    int csvs = 0;
    for (const auto& [name, body] : read_files(d)) {
      if (name.size() < 4 || name.substr(name.size() - 4) != ".csv") continue;
      ++csvs;
      EXPECT_EQ(body.substr(0, body.find('\n')), "# manifest " + h) << d << "/" << name;
    }
    EXPECT_GE(csvs, 1);
  }
}

TEST_F(CliTest, ByteIdenticalReruns) {
  auto run_all = [&] {
    EXPECT_EQ(sdm_cli({"simulate", "--truth-beta", "-1,0.5,-0.3", "--truth-alpha", "0.4", "--truth-tau", "0.2,-0.5",
                       "--cells", "225", "--survey-regions", "20", "--seed", "11", "--out", path("sim")})
                  .code,
              0);
    EXPECT_EQ(sdm_cli({"fit", "--method", "ucdf", "--ucdf-tau", "1.5", "--cdf", "exp", "--grid", path("sim/grid.csv"),
                       "--out", path("fit")})
                  .code,
              0);
    EXPECT_EQ(sdm_cli({"map", "--fit", path("fit")}).code, 0);
    EXPECT_EQ(sdm_cli({"study", "--truth-beta", "-1,0.5", "--cells", "300", "--replicates", "8", "--estimators",
                       "ppp,beta", "--beta", "0.2", "--out", path("study")})
                  .code,
              0);
    std::map<std::string, std::string> all;
    for (const auto* d : {"sim", "fit", "fit/map", "study"}) {
      for (auto& [k, v] : read_files(path(d))) all[std::string(d) + "/" + k] = v;
    }
    return all;
  };
  const auto a = run_all();
  fs::remove_all(path("sim"));
  fs::remove_all(path("fit"));
  fs::remove_all(path("study"));
  const auto b = run_all();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_TRUE(a.count("fit/map/map.pgm"));
  for (const auto& [k, v] : a) EXPECT_EQ(v, b.at(k)) << k;
}

TEST_F(CliTest, ConstantIntensityMapIsSingleGray) {
  std::string g = "id,presence,w,lon,lat\n";
  for (int i = 0; i < 16; ++i) {
    g += std::to_string(i + 1) + "," + std::to_string(i % 3) + ",1," + std::to_string(i % 4) + "," +
         std::to_string(i / 4) + "\n";
  }
  ASSERT_EQ(sdm_cli({"fit", "--method", "ppp", "--grid", write("g.csv", g), "--out", path("f")}).code, 0);
  ASSERT_EQ(sdm_cli({"map", "--fit", path("f")}).code, 0);
  std::istringstream in(slurp(path("f/map/map.pgm")));
  std::string magic, comment;
  std::getline(in, magic);
  std::getline(in, comment);
  int w = 0, h = 0, maxv = 0;
  in >> w >> h >> maxv;
  EXPECT_EQ(magic, "P2");
  EXPECT_EQ(w, 4);
  EXPECT_EQ(h, 4);
  EXPECT_EQ(maxv, 255);
  std::set<int> levels;
  for (int v; in >> v;) levels.insert(v);
  EXPECT_EQ(levels.size(), 1u);
}

TEST_F(CliTest, MonotoneGradientGivesMonotoneRamp) {
  std::string g = "id,presence,w,lon,lat,x1\n";
  for (int i = 0; i < 30; ++i) {
    g += std::to_string(i + 1) + "," + std::to_string(i / 6) + ",1," + std::to_string(i) + ",0," +
         std::to_string(0.1 * i) + "\n";
  }
  ASSERT_EQ(sdm_cli({"fit", "--method", "ppp", "--grid", write("g.csv", g), "--out", path("f")}).code, 0);
  ASSERT_EQ(sdm_cli({"map", "--fit", path("f")}).code, 0);
  std::istringstream in(slurp(path("f/map/map.pgm")));
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  int w = 0, h = 0, maxv = 0;
  in >> w >> h >> maxv;
  ASSERT_EQ(w, 30);
  ASSERT_EQ(h, 1);
  std::vector<int> px;
  for (int v; in >> v;) px.push_back(v);
  ASSERT_EQ(px.size(), 30u);
  for (std::size_t i = 1; i < px.size(); ++i) EXPECT_LE(px[i - 1], px[i]);
  EXPECT_EQ(px.front(), 1);
  EXPECT_EQ(px.back(), 255);
}

TEST_F(CliTest, CsvRescalingReproducesPgmBytes) {
  ASSERT_EQ(sdm_cli({"simulate", "--truth-beta", "-0.5,0.8,-0.6", "--cells", "400", "--seed", "3", "--out",
                     path("sim")})
                .code,
            0);
  // drop some cells so the raster has holes
  std::string g;
  {
    std::istringstream in(slurp(path("sim/grid.csv")));
    std::string line;
    int k = 0;
    while (std::getline(in, line)) {
      if (line[0] == '#' || k++ == 0 || (k % 7) != 0) g += line + "\n";
    }
  }
  ASSERT_EQ(sdm_cli({"fit", "--method", "cc-logit", "--mu", "0.2", "--grid", write("g.csv", g), "--out", path("f")})
                .code,
            0);
  ASSERT_EQ(sdm_cli({"map", "--fit", path("f")}).code, 0);

  const std::string csv_text = slurp(path("f/map/map.csv"));
  const auto t = csv::read_file(path("f/map/map.csv"));
  std::vector<double> lon, lat, v;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    lon.push_back(csv::to_double(t, r, 1));
    lat.push_back(csv::to_double(t, r, 2));
    v.push_back(csv::to_double(t, r, 3));
  }
  std::set<double> xs(lon.begin(), lon.end());
  std::set<double, std::greater<>> ys(lat.begin(), lat.end());
  const auto lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
  const int W = static_cast<int>(xs.size()), H = static_cast<int>(ys.size());
  std::vector<int> px(static_cast<std::size_t>(W * H), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto cx = std::distance(xs.begin(), xs.find(lon[i]));
    const auto cy = std::distance(ys.begin(), ys.find(lat[i]));
    px[static_cast<std::size_t>(cy * W + cx)] = 1 + static_cast<int>(std::lround((v[i] - lo) / (hi - lo) * 254.0));
  }
  std::ostringstream os;
  os << "P2\n" << csv_text.substr(0, csv_text.find('\n')) << "\n" << W << ' ' << H << "\n255\n";
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      os << px[static_cast<std::size_t>(y * W + x)] << ((x + 1 == W || (x + 1) % 17 == 0) ? '\n' : ' ');
    }
  }
  EXPECT_EQ(os.str(), slurp(path("f/map/map.pgm")));
  EXPECT_NE(os.str().find(" 0 "), std::string::npos);  // the holes

  // presence sidecar lists exactly the cells with counts
  const auto pres = csv::read_file(path("f/map/presence.csv"));
  const auto grid = csv::read_file(path("g.csv"));
  std::size_t n = 0;
  for (std::size_t r = 0; r < grid.rows.size(); ++r) n += csv::to_double(grid, r, 1) > 0;
  EXPECT_EQ(pres.rows.size(), n);
}

TEST_F(CliTest, EvaluateMatchesFitAuc) {
  ASSERT_EQ(sdm_cli({"fit", "--method", "maxent", "--grid", kFixture, "--out", path("f")}).code, 0);
  ASSERT_EQ(sdm_cli({"evaluate", "--fit", path("f")}).code, 0);
  const auto m = csv::read_file(path("f/metrics.csv"));
  const auto e = csv::read_file(path("f/evaluate/evaluation.csv"));
  EXPECT_EQ(e.rows[0][0], "auc");
  EXPECT_NEAR(csv::to_double(e, 0, 1), csv::to_double(m, 0, m.require_column("auc")), 1e-12);
  // Maxent and the PPP MLE rank cells identically
  ASSERT_EQ(sdm_cli({"fit", "--method", "ppp", "--grid", kFixture, "--out", path("p")}).code, 0);
  const auto mp = csv::read_file(path("p/metrics.csv"));
  EXPECT_NEAR(csv::to_double(mp, 0, mp.require_column("auc")), csv::to_double(m, 0, m.require_column("auc")), 1e-12);
}

TEST_F(CliTest, SimulatedIntegratedDataRoundTrip) {
  const auto sim = sdm_cli({"simulate", "--truth-beta", "-0.5,0.6,-0.4", "--truth-alpha", "0.8", "--truth-tau",
                            "0.3,-0.7", "--truth-omega", "0.5", "--cells", "4000", "--survey-regions", "300",
                            "--cells-per-region", "3", "--ds-cells", "2000", "--seed", "5", "--out", path("sim")});
  ASSERT_EQ(sim.code, 0) << sim.err;
  const auto r = sdm_cli({"fit", "--method", "integrated", "--grid", path("sim/grid.csv"), "--standardize", "false",
                          "--regions", path("sim/regions.csv"), "--survey", path("sim/survey.csv"),
                          "--fisher-replicates", "0", "--out", path("f")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = estimates(path("f"));
  const auto se = estimates(path("f"), "std_error");
  const std::map<std::string, double> truth{{"integrated:beta0", -0.5}, {"integrated:x1", 0.6},
                                            {"integrated:x2", -0.4},    {"integrated:alpha_v_1", 0.8},
                                            {"integrated:tau0", 0.3},   {"integrated:tau1", -0.7}};
  for (const auto& [k, v] : truth) EXPECT_LT(std::abs(e.at(k) - v), 4 * se.at(k)) << k;

  const auto d = sdm_cli({"fit", "--method", "ds", "--ds-area", path("sim/ds_area.csv"), "--ds-points",
                          path("sim/ds_points.csv"), "--standardize", "false", "--out", path("d")});
  ASSERT_EQ(d.code, 0) << d.err;
  const auto de = estimates(path("d"));
  const auto dse = estimates(path("d"), "std_error");
  EXPECT_LT(std::abs(de.at("ds:x1") - 0.6), 4 * dse.at("ds:x1"));
  EXPECT_LT(std::abs(de.at("ds:omega0") - 0.5), 4 * dse.at("ds:omega0"));
}

TEST_F(CliTest, StudyZeroReplicatesIsValidationError) {
  const auto r = sdm_cli({"study", "--truth-beta", "-1,0.5", "--replicates", "0", "--out", path("s")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("replicates"), std::string::npos);
  EXPECT_EQ(sdm_cli({"study", "--truth-beta", "-1,0.5", "--out", path("s")}).code, 2);
}

TEST_F(CliTest, StudyMleCoverage) {
  const auto r = sdm_cli({"study", "--truth-beta", "-2.3,0.5,-0.3", "--cells", "2000", "--replicates", "200",
                          "--seed", "2024", "--out", path("s")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto t = csv::read_file(path("s/study.csv"));
  ASSERT_EQ(t.rows.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(t.rows[k][t.require_column("failures")], "0");
    const double cov = csv::to_double(t, k, t.require_column("coverage"));
    EXPECT_GE(cov, 0.90) << t.rows[k][1];
    EXPECT_LE(cov, 0.99) << t.rows[k][1];
  }
  EXPECT_EQ(csv::read_file(path("s/replicates.csv")).rows.size(), 200u);
}

TEST_F(CliTest, StudyIndependentOfWorkers) {
  std::vector<std::string> args{"study", "--truth-beta", "-0.5,0.6", "--truth-alpha", "0.8", "--truth-tau", "0.3,-0.7",
                                "--cells", "300", "--survey-regions", "40", "--replicates", "12", "--estimators",
                                "integrated,ppp", "--contamination", "0.1"};
  auto a = args, b = args;
  a.insert(a.end(), {"--workers", "1", "--out", path("a")});
  b.insert(b.end(), {"--workers", "4", "--out", path("b")});
  ASSERT_EQ(sdm_cli(a).code, 0);
  ASSERT_EQ(sdm_cli(b).code, 0);
  EXPECT_EQ(slurp(path("a/study.csv")), slurp(path("b/study.csv")));
  EXPECT_EQ(slurp(path("a/replicates.csv")), slurp(path("b/replicates.csv")));
}
