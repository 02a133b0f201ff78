#include "hbloc/experiment.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>

namespace fs = std::filesystem;
using namespace hbloc;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("hbloc_cli_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

fs::path write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

/// Runs the command line tool and returns its exit status.
int run_cli(const std::string& args) {
  const std::string cmd = std::string(HBLOC_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string capture_error(const std::string& text) {
  try {
    parse_config(text, "test.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

const std::string kSmallPlanar = R"({
  "name": "small",
  "seed": 11,
  "forward": {"kind": "planar"},
  "hypermodel": {"family": "inverse_gamma", "beta": 3.0, "theta0": 1e-5},
  "noise": {"fraction": 0.05},
  "mcmc": {"sample_size": 100, "thinning": 2, "store_alpha": true}
})";

std::map<std::string, std::string> artifact_hashes(const fs::path& run) {
  std::map<std::string, std::string> out;
  const auto manifest = read_json(run / "manifest.json");
  for (const auto& a : manifest["artifacts"]) out[a["path"]] = a["fnv1a64"];
  return out;
}

}  // namespace

TEST(Config, PresetsParse) {
  for (const char* name : {"planar-gamma", "planar-invgamma", "sphere"}) {
    const auto c = load_config(fs::path(HBLOC_PRESETS) / (std::string(name) + ".json"));
    EXPECT_EQ(c.name, name);
  }
  const auto g = load_config(fs::path(HBLOC_PRESETS) / "planar-gamma.json");
  EXPECT_EQ(g.hm.r, 1.0);
  EXPECT_EQ(g.hm.beta, 3.0);
  EXPECT_EQ(g.hm.theta0, 1e-7);
  EXPECT_EQ(g.ias_iterations, 15);
  EXPECT_EQ(g.chain.sample_size, 50000);
  const auto ig = load_config(fs::path(HBLOC_PRESETS) / "planar-invgamma.json");
  EXPECT_EQ(ig.hm.r, -1.0);
  EXPECT_EQ(ig.hm.theta0, 1e-5);
  const auto s = load_config(fs::path(HBLOC_PRESETS) / "sphere.json");
  EXPECT_EQ(s.kind, ForwardKind::sphere);
  EXPECT_EQ(s.hm.beta, 1.55);
  EXPECT_EQ(s.hm.theta0, 1e-7);
}

TEST(Config, ErrorsCarryLineColumnAndPointer) {
  const std::string text =
      "{\n"
      "  \"forward\": {\"kind\": \"planar\"},\n"
      "  \"hypermodel\": {\"family\": \"gamma\", \"beta\": -2, \"theta0\": 1e-7}\n"
      "}\n";
  const std::string msg = capture_error(text);
  EXPECT_NE(msg.find("test.json:3:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("/hypermodel/beta"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":3:45:"), std::string::npos) << msg;
}

TEST(Config, UnknownKeysAndWrongTypesAreRejected) {
  EXPECT_NE(capture_error(R"({"forward": {"kind": "planar"}, "hypermodel": {"family": "gamma", "beta": 3, "theta0": 1e-7}, "colour": 1})")
                .find("/colour"),
            std::string::npos);
  EXPECT_NE(capture_error(R"({"forward": {"kind": "planar"}, "hypermodel": {"family": "gamma", "beta": "3", "theta0": 1e-7}})")
                .find("/hypermodel/beta"),
            std::string::npos);
  EXPECT_NE(capture_error(R"({"forward": {"kind": "torus"}, "hypermodel": {"family": "gamma", "beta": 3, "theta0": 1e-7}})")
                .find("/forward/kind"),
            std::string::npos);
  EXPECT_NE(capture_error(R"({"hypermodel": {"family": "gamma", "beta": 3, "theta0": 1e-7}})").find("forward"), std::string::npos);
  EXPECT_NE(capture_error(R"({"forward": {"kind": "planar"}, "hypermodel": {"family": "generalized", "beta": 3, "theta0": 1e-7}})")
                .find("/hypermodel"),
            std::string::npos);
  EXPECT_NE(capture_error(R"({"forward": {"kind": "planar"}, "hypermodel": {"family": "gamma", "beta": 3, "theta0": 1e-7},
                              "mcmc": {"sample_size": 10, "discard": 10}})")
                .find("/mcmc/discard"),
            std::string::npos);
}

TEST(Config, InvalidJsonReportsPosition) {
  const std::string msg = capture_error("{\n  \"seed\": 1,\n  \"forward\": {\"kind\": \"planar\",}\n}");
  EXPECT_NE(msg.find("test.json:3:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("invalid JSON"), std::string::npos) << msg;
}

TEST(Config, SphereLayeringIsValidated) {
  const std::string msg = capture_error(R"({
    "forward": {"kind": "sphere", "sphere": {"radii": [0.078, 0.08, 0.085, 0.09], "conductivities": [0.33, 1, 0.0042, 0.33],
                "resolution": 2}},
    "hypermodel": {"family": "gamma", "beta": 1.55, "theta0": 1e-7}})");
  EXPECT_NE(msg.find("degenerate layering"), std::string::npos) << msg;
  EXPECT_NE(msg.find("/forward/sphere"), std::string::npos) << msg;
}

TEST(Config, OverridesApplyBeforeValidation) {
  const auto c = parse_config(kSmallPlanar, "x", ".", {{"seed", 99}});
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.chain.seed, 99u);
  EXPECT_THROW(parse_config(kSmallPlanar, "x", ".", {{"noise", {{"fraction", 0}}}}), ConfigError);
}

TEST(Experiment, PlanarRoiHas324Groups) {
  const auto c = parse_config(kSmallPlanar);
  const ForwardModel f = build_forward(c, true);
  EXPECT_EQ(f.roi_groups.size(), 324u);
  EXPECT_EQ(f.M.rows(), 100);
  EXPECT_EQ(f.M.cols(), 1800);
  EXPECT_NEAR(f.truth_depth, 0.035, 1e-15);
}

TEST(Experiment, ZeroDataGiveZeroEstimate) {
  const auto c = parse_config(kSmallPlanar);
  const ForwardModel f = build_forward(c, false);
  const Dataset d{Vector::Zero(f.M.rows()), 1e-7};
  const auto run = fresh_dir("zero");
  const IasResult r = run_map(c, f, d);
  EXPECT_EQ(r.state.alpha.cwiseAbs().maxCoeff(), 0.0);
  write_map(run, f, r);
  EXPECT_TRUE(read_json(run / "map" / "estimate.json")["zero_estimate"].get<bool>());
}

TEST(Experiment, LocalizationMeasuresTangentialAndDepthErrors) {
  ForwardModel f;
  f.geometry.kind = ForwardKind::sphere;
  f.geometry.outer_radius = 0.09;
  f.geometry.locations = {Vec3(0, 0, 0.05), Vec3(0.01, 0, 0.07)};
  f.geometry.depth = Vector(2);
  f.geometry.depth << 0.04, 0.09 - std::hypot(0.01, 0.07);
  f.truth_location = Vec3(0, 0, 0.06);
  f.truth_depth = 0.03;
  const Localization l = localize((Vector(2) << 1.0, 2.0).finished(), f);
  EXPECT_EQ(l.group, 1);
  EXPECT_NEAR(l.horizontal_error, 0.01, 1e-15);
  EXPECT_NEAR(l.depth_error, std::abs(0.09 - std::hypot(0.01, 0.07) - 0.03), 1e-15);
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("exit");
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("simulate --seed notanumber --out " + dir.string()), 2);
  EXPECT_EQ(run_cli("simulate --out " + (dir / "none").string()), 2);
  EXPECT_EQ(run_cli("simulate --preset no-such-preset --out " + dir.string()), 2);
  const auto bad = write_text(dir / "bad.json", R"({"forward": {"kind": "planar"}, "hypermodel": {"family": "gamma"}})");
  EXPECT_EQ(run_cli("simulate --config " + bad.string() + " --out " + (dir / "r").string()), 2);
  const auto good = write_text(dir / "good.json", kSmallPlanar);
  EXPECT_EQ(run_cli("map --config " + good.string() + " --out " + (dir / "nodata").string()), 1);
  EXPECT_EQ(run_cli("summarize --config " + good.string() + " --out " + (dir / "empty").string()), 1);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("--version"), 0);
}

TEST(Cli, LockedRunDirectoryIsRefused) {
  const auto dir = fresh_dir("lock");
  const auto cfg = write_text(dir / "c.json", kSmallPlanar);
  const auto run = dir / "run";
  fs::create_directories(run);
  write_text(run / ".lock", "");
  EXPECT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + run.string()), 1);
  fs::remove(run / ".lock");
  EXPECT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + run.string()), 0);
  EXPECT_FALSE(fs::exists(run / ".lock"));
}

TEST(Cli, PlanarPipelineIsDeterministicAndFullyManifested) {
  const auto dir = fresh_dir("pipeline");
  const auto cfg = write_text(dir / "c.json", kSmallPlanar);
  std::vector<std::map<std::string, std::string>> hashes;
  for (const char* name : {"a", "b"}) {
    const auto run = dir / name;
    const std::string base = "--config " + cfg.string() + " --out " + run.string();
    ASSERT_EQ(run_cli("simulate " + base), 0);
    ASSERT_EQ(run_cli("map --out " + run.string()), 0);
    const auto t0 = std::chrono::steady_clock::now();
    ASSERT_EQ(run_cli("mcmc --out " + run.string()), 0);
    EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 10.0);
    ASSERT_EQ(run_cli("leadfield --out " + run.string()), 0);
    ASSERT_EQ(run_cli("summarize --out " + run.string()), 0);

    std::set<std::string> on_disk;
    for (const auto& e : fs::recursive_directory_iterator(run))
      if (e.is_regular_file()) on_disk.insert(fs::relative(e.path(), run).generic_string());
    auto h = artifact_hashes(run);
    for (const auto& p : on_disk)
      if (p != "manifest.json") EXPECT_TRUE(h.count(p)) << p;
    for (const auto& [p, v] : h) {
      EXPECT_TRUE(on_disk.count(p)) << p;
      EXPECT_EQ(v, file_hash(run / p)) << p;
    }
    h.erase("config.json");  // records the run directory
    hashes.push_back(h);

    const auto summary = read_json(run / "mcmc" / "summary.json");
    EXPECT_EQ(summary["groups"].size(), 324u);
    EXPECT_EQ(summary["samples"].get<int>(), 100);
    const auto report = read_json(run / "summary" / "report.json");
    EXPECT_TRUE(report.contains("map"));
    EXPECT_TRUE(report.contains("cm"));
    EXPECT_EQ(report["map"]["layers"]["energy"].size(), 9u);
    EXPECT_TRUE(fs::exists(run / "mcmc" / "trace.csv"));
    EXPECT_TRUE(fs::exists(run / "map" / "slices" / "layer_08.csv"));
  }
  EXPECT_EQ(hashes[0], hashes[1]);

  ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --seed 12 --out " + (dir / "c").string()), 0);
  ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --seed 12 --out " + (dir / "c").string()), 0);
  // A different seed in an existing run is caught before the estimate is computed.
  EXPECT_EQ(run_cli("map --out " + (dir / "a").string() + " --seed 5"), 2);
}

TEST(Cli, SphereLeadFieldExport) {
  const auto dir = fresh_dir("sphere");
  const auto cfg = write_text(dir / "s.json", R"({
    "forward": {"kind": "sphere",
                "sphere": {"radii": [0.09], "conductivities": [0.33], "resolution": 3, "electrodes": 8, "sensors": 10},
                "source": {"position": [0, 0.02, 0.03]}},
    "hypermodel": {"family": "gamma", "beta": 1.55, "theta0": 1e-7}})");
  const auto run = dir / "run";
  ASSERT_EQ(run_cli("leadfield --config " + cfg.string() + " --out " + run.string()), 0);
  const auto e = read_matrix_binary(run / "leadfield" / "electric.bin");
  const auto m = read_matrix_binary(run / "leadfield" / "magnetic.bin");
  const auto src = read_csv(run / "leadfield" / "sources.csv");
  EXPECT_EQ(e.data.rows(), 8);
  EXPECT_EQ(m.data.rows(), 10);
  EXPECT_EQ(e.data.cols(), src.column("x").size());
  EXPECT_EQ(m.data.cols(), e.data.cols());
  EXPECT_LT(read_json(run / "leadfield" / "kirchhoff.json")["relative"].get<double>(), 1e-10);
  const auto first = file_hash(run / "leadfield" / "electric.bin");
  ASSERT_EQ(run_cli("leadfield --out " + run.string()), 0);
  EXPECT_EQ(file_hash(run / "leadfield" / "electric.bin"), first);
}

TEST(Cli, MeshFileForwardModel) {
  const auto dir = fresh_dir("mesh");
  fem::SphereOptions o;
  o.resolution = 3;
  o.electrodes = 12;
  o.sensors = 0;
  write_json(dir / "head.json", fem::mesh_to_json(fem::make_sphere_mesh(o)));
  const auto cfg = write_text(dir / "m.json", R"({
    "seed": 3,
    "forward": {"kind": "mesh", "mesh": "head.json", "modality": "eeg",
                "source": {"position": [0.01, 0.0, 0.03], "support_radius": 0.03}, "roi_radius": 0.03},
    "hypermodel": {"family": "gamma", "beta": 1.55, "theta0": 1e-7},
    "mcmc": {"sample_size": 50}})");
  const auto run = dir / "run";
  ASSERT_EQ(run_cli("simulate --config " + cfg.string() + " --out " + run.string()), 0);
  EXPECT_EQ(read_csv(run / "data" / "b.csv").column("b").size(), 12);
  // The stored configuration resolves the mesh without the original directory.
  ASSERT_EQ(run_cli("map --out " + run.string()), 0);
  ASSERT_EQ(run_cli("mcmc --out " + run.string()), 0);
  ASSERT_EQ(run_cli("leadfield --out " + run.string()), 0);
  EXPECT_FALSE(fs::exists(run / "leadfield" / "magnetic.bin"));

  const auto missing = write_text(dir / "missing.json", R"({"forward": {"kind": "mesh", "mesh": "nope.json"},
    "hypermodel": {"family": "gamma", "beta": 1.55, "theta0": 1e-7}})");
  EXPECT_EQ(run_cli("leadfield --config " + missing.string() + " --out " + (dir / "r2").string()), 2);
  std::string msg;
  try {
    load_config(missing);
  } catch (const ConfigError& e) {
    msg = e.what();
  }
  EXPECT_NE(msg.find("/forward/mesh"), std::string::npos) << msg;
}
