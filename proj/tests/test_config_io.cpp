#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "kwt/commands.hpp"

using namespace kwt;

namespace {
run_config parse(const std::string& s) {
  std::istringstream is(s);
  return run_config::parse(is, "test");
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}
}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse("# comment\nprofile.rho = 1.7  # trailing\n\nstable.alphas = 0.5, 1.25\n");
  EXPECT_EQ(c.num("profile.rho"), 1.7);
  EXPECT_TRUE(c.is_explicit("profile.rho"));
  EXPECT_FALSE(c.is_explicit("profile.method"));
  EXPECT_EQ(c.str("profile.method"), "direct");
  EXPECT_EQ(c.list("stable.alphas"), (std::vector<double>{0.5, 1.25}));
  EXPECT_FALSE(c.flag("family.enabled"));
  EXPECT_FALSE(c.is_set("grid.x_min"));
  EXPECT_EQ(c.resolved().at("profile.rho"), "1.7");
}

TEST(Config, UnknownKeyIsHardError) {
  EXPECT_THROW(parse("profile.rhoo = 1.5\n"), parameter_error);
  EXPECT_THROW(parse("rho = 1.5\n"), parameter_error);
  EXPECT_THROW(parse("profile.rho 1.5\n"), parameter_error);
  EXPECT_THROW(parse("profile.rho = 1.5\nprofile.rho = 1.6\n"), parameter_error);
}

TEST(Config, MalformedValues) {
  EXPECT_THROW(parse("profile.rho = abc\n").num("profile.rho"), parameter_error);
  EXPECT_THROW(parse("evolve.steps = 2.5\n").integer("evolve.steps"), parameter_error);
  EXPECT_THROW(parse("family.enabled = maybe\n").flag("family.enabled"), parameter_error);
  EXPECT_THROW(parse("stable.alphas = 1,,2\n").list("stable.alphas"), parameter_error);
  EXPECT_THROW(run_config::load("/nonexistent/kwt.cfg"), io_error);
}

TEST(Config, GridFallback) {
  const auto c = parse("grid.n = 300\n");
  const auto g = config_grid(c, {1e-3, 1e3, 100});
  EXPECT_EQ(g.n, 300u);
  EXPECT_EQ(g.x_min, 1e-3);
  EXPECT_THROW(config_grid(parse("grid.x_min = 5\ngrid.x_max = 1\n"), {}), parameter_error);
}

TEST(ProfileIo, RoundTripWithSidecar) {
  const auto d = fresh_dir("kwt_profile_io");
  profile_solution s;
  s.rho = 1.5;
  s.phi = grid_measure::from_function({1e-3, 1e3, 64}, [](double x) { return std::pow(x, -1.5) / (1 + 1 / x); });
  s.residual_strong = 1e-7;
  s.residual_weak = std::nan("");
  s.path.method = "direct";
  output_dir out(d.string());
  write_profile(out, "p.csv", s);
  EXPECT_EQ(out.files(), (std::vector<std::string>{"p.csv", "p.json"}));
  const auto back = read_profile((d / "p.csv").string());
  EXPECT_EQ(back.rho, 1.5);
  EXPECT_EQ(back.phi.density, s.phi.density);
  EXPECT_EQ(back.residual_strong, 1e-7);
  EXPECT_TRUE(std::isnan(back.residual_weak));
  EXPECT_EQ(back.norm, normalization::rho_norm_one);
}

TEST(ProfileIo, BrokenSidecarIsIoError) {
  const auto d = fresh_dir("kwt_profile_bad");
  write_measure_csv((d / "p.csv").string(), grid_measure::from_function({1e-3, 1e3, 32}, [](double) { return 1.0; }));
  EXPECT_THROW(read_profile((d / "p.csv").string()), io_error);
  std::ofstream((d / "p.json").string()) << "{ not json";
  EXPECT_THROW(read_profile((d / "p.csv").string()), io_error);
  std::ofstream((d / "p.json").string()) << R"({"rho": 0.5, "normalization": "mass_one", "solver": {"method": "direct"},
    "residual_weak": null, "residual_strong": null})";
  EXPECT_THROW(read_profile((d / "p.csv").string()), io_error);
}

TEST(Commands, ExitCodesAndManifest) {
  const auto d = fresh_dir("kwt_cmd");
  std::ostringstream log;
  {
    std::ofstream((d / "ok.cfg").string()) << "stable.alphas = 1\nstable.samples = 1024\n";
    run_request rq{"stable", (d / "ok.cfg").string(), (d / "ok").string(), 2, ""};
    EXPECT_EQ(run_command(rq, log), exit_ok);
    std::ifstream mf((d / "ok" / "manifest.json").string());
    const auto m = json::parse(mf);
    EXPECT_EQ(m.at("exit_code"), 0);
    EXPECT_EQ(m.at("config").at("stable.alphas"), "1");
    EXPECT_TRUE(m.contains("timestamps"));
    EXPECT_TRUE(std::filesystem::exists(d / "ok" / "stable_alpha_1.csv"));
  }
  std::ofstream((d / "unknown.cfg").string()) << "stable.alpha = 1\n";
  EXPECT_EQ(run_command({"stable", (d / "unknown.cfg").string(), (d / "u").string(), 1, ""}, log), exit_parameter);
  std::ofstream((d / "empty.cfg").string()) << "stable.alphas = \n";
  EXPECT_EQ(run_command({"stable", (d / "empty.cfg").string(), (d / "e").string(), 1, ""}, log), exit_parameter);
  std::ofstream((d / "alpha2.cfg").string()) << "stable.alphas = 2\n";
  EXPECT_EQ(run_command({"stable", (d / "alpha2.cfg").string(), (d / "a").string(), 1, ""}, log), exit_parameter);
  std::ofstream((d / "rho.cfg").string()) << "profile.rho = 0.9\n";
  EXPECT_EQ(run_command({"profile", (d / "rho.cfg").string(), (d / "r").string(), 1, ""}, log), exit_parameter);
  EXPECT_EQ(run_command({"verify", "", (d / "v").string(), 1, (d / "none.csv").string()}, log), exit_io);
  EXPECT_EQ(run_command({"stable", (d / "missing.cfg").string(), (d / "m").string(), 1, ""}, log), exit_io);
  EXPECT_EQ(run_command({"frobnicate", "", (d / "f").string(), 1, ""}, log), exit_parameter);
  set_threads(1);
}
