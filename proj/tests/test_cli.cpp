#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::map<std::string, std::string> kv;
  double num(const std::string& key) const {
    const auto it = kv.find(key);
    EXPECT_NE(it, kv.end()) << key << " missing in:\n" << out;
    return it == kv.end() ? 0.0 : std::stod(it->second);
  }
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run wave(const std::string& args) {
  const std::string cmd = quote(WAVE_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  Run r{-1, {}, {}};
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::istringstream is(r.out);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) r.kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("wave_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string out(const std::string& sub = "out") const { return quote((dir_ / sub).string()); }
  fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  fs::path config_with(const std::string& from, const std::string& to) const {
    std::string text = slurp(fs::path(WAVE_SOURCE_DIR) / "configs" / "wave-default.ini");
    const auto at = text.find(from);
    EXPECT_NE(at, std::string::npos) << from;
    text.replace(at, from.size(), to);
    return write("custom.ini", text);
  }

  fs::path dir_;
};

const std::string kData = quote(std::string(WAVE_SOURCE_DIR) + "/data/synthetic_fit.csv");

}  // namespace

TEST_F(Cli, SweepThresholds) {
  const auto r = wave("--out " + out() + " sweep");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NEAR(r.num("threshold_dl5mm_Nm"), 0.12, 1e-12);
  EXPECT_NEAR(r.num("threshold_dl10mm_Nm"), 0.24, 1e-12);
  EXPECT_NEAR(r.num("threshold_dl15mm_Nm"), 0.36, 1e-12);
  EXPECT_NEAR(r.num("asymptote_Nm_per_rad"), 0.72, 1e-12);
  for (const char* f : {"sweep_dl5mm.csv", "sweep_dl10mm.csv", "sweep_dl15mm.csv",
                        "sweep_summary.txt", "sweep.svg"})
    EXPECT_TRUE(fs::exists(path("out") / f)) << f;
  const std::string csv = slurp(path("out") / "sweep_dl5mm.csv");
  EXPECT_EQ(csv.rfind("tau_Nm,deflection_deg,stiffness_Nm_per_rad,state\n0,0,inf,RIGID\n", 0), 0u);
  EXPECT_NE(csv.find(",COMPLIANT\n"), std::string::npos);
}

TEST_F(Cli, SweepStiffSpring) {
  const auto r = wave("--out " + out() + " sweep --k-s 2.4");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NEAR(r.num("threshold_dl5mm_Nm"), 0.36, 1e-12);
  EXPECT_NEAR(r.num("threshold_dl10mm_Nm"), 0.72, 1e-12);
  EXPECT_NEAR(r.num("threshold_dl15mm_Nm"), 1.08, 1e-12);
  EXPECT_NEAR(r.num("asymptote_Nm_per_rad"), 2.16, 1e-12);
}

TEST_F(Cli, SweepUsageErrors) {
  EXPECT_EQ(wave("--out " + out() + " sweep --dl ''").code, 2);
  EXPECT_EQ(wave("--out " + out() + " sweep --points x").code, 2);
  EXPECT_EQ(wave("--out " + out() + " sweep --dl 40").code, 3);
}

TEST_F(Cli, ImpactAtRest) {
  const auto lo = wave("--out " + out() + " impact --mode low");
  const auto hi = wave("--out " + out() + " impact --mode high");
  ASSERT_EQ(lo.code, 0) << lo.out;
  ASSERT_EQ(hi.code, 0) << hi.out;
  EXPECT_EQ(lo.num("motor_torque_peak_Nm"), 0.0);
  EXPECT_EQ(hi.num("motor_torque_peak_Nm"), 0.0);
  EXPECT_GT(lo.num("peak_deflection_deg"), hi.num("peak_deflection_deg"));
  EXPECT_LT(std::abs(lo.num("final_theta_change_deg")), 0.1);
  EXPECT_LT(lo.num("energy_max_relative_error"), 5e-3);
  const std::string csv = slurp(path("out") / "impact_low_at_rest.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "t_s,theta_deg,theta_cmd_deg,omega_deg_s,x_mm,delta_l_mm,tau_ext_Nm,"
            "tau_restoring_Nm,motor_torque_Nm,motor_current_proxy_mA,mode");
}

TEST_F(Cli, ImpactWhileRotatingIsByteStable) {
  const auto a = wave("--out " + out("a") + " impact --mode high --case rotating");
  const auto b = wave("--out " + out("b") + " impact --mode high --case rotating");
  ASSERT_EQ(a.code, 0) << a.out;
  const double motor = a.num("motor_torque_peak_Nm");
  EXPECT_GT(motor, 0.0);
  EXPECT_LT(motor, 1.0);
  EXPECT_EQ(a.out, b.out);
  const auto low = wave("--out " + out("c") + " impact --mode low --case rotating");
  EXPECT_LT(low.num("motor_torque_peak_Nm"), motor);
  EXPECT_EQ(slurp(path("a") / "impact_high_rotating.csv"),
            slurp(path("b") / "impact_high_rotating.csv"));
}

TEST_F(Cli, TrackOrderings) {
  auto max_err = [&](const std::string& load, const std::string& mode) {
    const auto r = wave("--out " + out() + " track --kind sinusoid --load " + load + " --mode " + mode);
    EXPECT_EQ(r.code, 0) << r.out;
    return r.num("max_err_deg");
  };
  EXPECT_GT(max_err("vertical", "high"), max_err("lateral", "high"));
  EXPECT_GT(max_err("vertical", "low"), max_err("lateral", "low"));
  EXPECT_LT(max_err("none", "high"), 0.5);

  const auto lo = wave("--out " + out() + " track --kind step --load vertical --mode low");
  const auto hi = wave("--out " + out() + " track --kind step --load vertical --mode high");
  EXPECT_GT(lo.num("settle_time_s"), hi.num("settle_time_s"));
  EXPECT_TRUE(fs::exists(path("out") / "track_step_vertical_low.csv"));
}

TEST_F(Cli, TrackZeroAmplitude) {
  const auto cfg = config_with("amplitude = 30", "amplitude = 0");
  const auto r = wave("--config " + quote(cfg.string()) + " --out " + out() +
                      " track --kind sinusoid --mode low");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LT(r.num("max_err_deg"), 1e-9);
}

TEST_F(Cli, ContactAgreesWithStaticModel) {
  const auto lo = wave("--out " + out() + " contact --mode low");
  const auto hi = wave("--out " + out() + " contact --mode high");
  ASSERT_EQ(lo.code, 0) << lo.out;
  ASSERT_EQ(hi.code, 0) << hi.out;
  EXPECT_LT(lo.num("contact_force_N"), hi.num("contact_force_N"));
  for (const auto* r : {&lo, &hi}) {
    const double f = r->num("contact_force_N");
    const double qs = r->num("quasi_static_force_N");
    EXPECT_LT(std::abs(f - qs) / qs, 0.02);
  }
}

TEST_F(Cli, FitBundledData) {
  const auto r = wave("--out " + out() + " fit " + kData);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.kv.at("converged"), "true");
  EXPECT_EQ(r.kv.at("rank_deficient"), "true");
  EXPECT_NEAR(r.num("asymptote_Nm_per_rad"), 800.0 * 0.03 * 0.03 / 0.9, 0.02 * 0.8);
  for (const char* f : {"fit_report.txt", "fit_curve.csv", "fit.svg"})
    EXPECT_TRUE(fs::exists(path("out") / f)) << f;
}

TEST_F(Cli, FitWithPinnedFriction) {
  const auto r = wave("--out " + out() + " fit " + kData + " --fix mu=0.9,tau_f=0.05");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.kv.at("rank_deficient"), "false");
  EXPECT_NEAR(r.num("k_s_N_per_mm"), 0.8, 0.02 * 0.8);
  EXPECT_NEAR(r.num("delta_l_mm"), 10.0, 0.02 * 10.0);
  EXPECT_EQ(r.num("mu"), 0.9);
}

TEST_F(Cli, FitRejectsBadInput) {
  const auto header = write("h.csv", "tau_Nm,theta\n0.1,0\n");
  const auto r = wave("--out " + out() + " fit " + quote(header.string()));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("'theta'"), std::string::npos) << r.out;

  std::string rigid = "tau_Nm,theta_deg\n";
  for (int i = 0; i < 12; ++i) rigid += std::to_string(0.01 * i) + ",0\n";
  EXPECT_EQ(wave("--out " + out() + " fit " + quote(write("r.csv", rigid).string())).code, 3);
  EXPECT_EQ(wave("--out " + out() + " fit " + quote(path("none.csv").string())).code, 3);
  EXPECT_EQ(wave("--out " + out() + " fit " + kData + " --fix bogus=1").code, 2);
  EXPECT_EQ(wave("--out " + out() + " fit " + kData + " --bounds mu=0.9:0.5").code, 3);
}

TEST_F(Cli, SynthThenFitRoundTrip) {
  const auto file = path("s.csv");
  const auto s = wave("--seed 4 --out " + out() + " synth --output " + quote(file.string()));
  ASSERT_EQ(s.code, 0) << s.out;
  const auto again = path("s2.csv");
  wave("--seed 4 --out " + out() + " synth --output " + quote(again.string()));
  EXPECT_EQ(slurp(file), slurp(again));
  const auto r = wave("--out " + out() + " fit " + quote(file.string()));
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST_F(Cli, SelfLock) {
  const auto r = wave("--out " + out() + " selflock");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.kv.at("verdict"), "LOCKING");
  EXPECT_NEAR(r.num("lead_angle_deg"), 3.65, 0.01);
  EXPECT_EQ(wave("--out " + out() + " selflock --mu-f 0.02").kv.at("verdict"), "NOT LOCKING");
  EXPECT_EQ(wave("--out " + out() + " selflock --mu-f -1").code, 3);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(wave("").code, 2);
  EXPECT_EQ(wave("frobnicate").code, 2);
  EXPECT_EQ(wave("--help").code, 0);
  EXPECT_EQ(wave("--out " + out() + " impact --mode medium").code, 2);

  const auto starts = config_with("thread_starts = 1", "thread_starts = 0");
  EXPECT_EQ(wave("--config " + quote(starts.string()) + " --out " + out() + " sweep").code, 3);

  const auto typo = config_with("kp = 2", "kq = 2");
  const auto r = wave("--config " + quote(typo.string()) + " --out " + out() + " sweep");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("line "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("kq"), std::string::npos) << r.out;

  EXPECT_EQ(wave("--config " + quote(path("missing.ini").string()) + " sweep").code, 3);
}

TEST_F(Cli, SaturationExitsFourWithPartialSeries) {
  const auto cfg = config_with("impulse_peak = 2", "impulse_peak = 20");
  const auto r = wave("--config " + quote(cfg.string()) + " --out " + out() + " impact --mode low");
  EXPECT_EQ(r.code, 4) << r.out;
  const std::string csv = slurp(path("out") / "impact_low_at_rest.csv");
  ASSERT_FALSE(csv.empty());
  const auto last = csv.substr(csv.rfind('\n', csv.size() - 2) + 1);
  EXPECT_EQ(last.substr(last.rfind(',') + 1), "SATURATED\n");
}

TEST_F(Cli, DtFlagChangesResolution) {
  const auto coarse = wave("--dt 1 --out " + out() + " impact");
  const auto fine = wave("--out " + out() + " impact");
  ASSERT_EQ(coarse.code, 0) << coarse.out;
  EXPECT_LT(coarse.num("samples"), fine.num("samples"));
  EXPECT_EQ(wave("--dt 0 --out " + out() + " impact").code, 3);
}

TEST_F(Cli, RerunsAreByteIdentical) {
  for (const char* sub : {"a", "b"})
    ASSERT_EQ(wave("--out " + out(sub) + " track --kind step --load lateral").code, 0);
  for (const auto& entry : fs::directory_iterator(path("a")))
    EXPECT_EQ(slurp(entry.path()), slurp(path("b") / entry.path().filename()))
        << entry.path().filename();
}
