#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include <esde/random.hpp>

#include "io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / "esde_cli_test" / info->name();
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = dir_ / name;
        std::ofstream(p) << text;
        return p;
    }

    int run(const std::string& args) const {
        const std::string cmd = std::string(ESDE_CLI_PATH) + " " + args + " > " +
                                (dir_ / "stdout.txt").string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string out(const std::string& name) const { return (dir_ / name).string(); }

    static json load(const fs::path& p) {
        std::ifstream in(p);
        return json::parse(in);
    }

    fs::path dir_;
};

std::string single_neuron(const std::string& sigma = "0.1") {
    return "[run]\nseed = 3\nT = 3\nsamples = 10\n\n[model]\nK = 1\ni0 = 1.5\nsigma1 = " + sigma +
           "\n";
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<esde::SpikeTrains> poisson_batch(double rate, std::size_t n, std::uint64_t seed) {
    std::vector<esde::SpikeTrains> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> t;
        double now = 0.0;
        for (std::uint64_t k = 0;; ++k) {
            now += -std::log(esde::counter_uniform(esde::sample_seed(seed, i), esde::streams::generic, k)) / rate;
            if (now > 1.0) {
                break;
            }
            t.push_back(now);
        }
        out.push_back({t});
    }
    return out;
}

} // namespace

TEST_F(CliTest, SimulateWithoutIntensityWritesHeaderOnly) {
    const auto cfg = write("c.ini", single_neuron() + "psi = 1e6\n");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + out("o")), 0);
    EXPECT_EQ(slurp(dir_ / "o" / "spikes.csv"), "sample_id,neuron_id,spike_time\n");
}

TEST_F(CliTest, SimulateIsReproducibleFromResolvedConfig) {
    const auto cfg = write("c.ini", single_neuron());
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + out("a")), 0);
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + out("b")), 0);
    ASSERT_EQ(run("simulate --config " + out("a/config.ini") + " --out " + out("c")), 0);
    const std::string a = slurp(dir_ / "a" / "spikes.csv");
    EXPECT_GT(a.size(), 40u);
    EXPECT_EQ(a, slurp(dir_ / "b" / "spikes.csv"));
    EXPECT_EQ(a, slurp(dir_ / "c" / "spikes.csv"));
    EXPECT_EQ(slurp(dir_ / "a" / "config.ini"), slurp(dir_ / "c" / "config.ini"));
}

TEST_F(CliTest, SimulateSummaryReportsRefractoryGaps) {
    const auto cfg = write("c.ini", single_neuron());
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + out("o")), 0);
    const json s = load(dir_ / "o" / "summary.json");
    EXPECT_TRUE(s["refractory_ok"].get<bool>());
    EXPECT_GE(s["min_gap"].get<double>(), s["refractory_bound"].get<double>());
    EXPECT_EQ(s["events_per_sample"].size(), 10u);
    EXPECT_TRUE(s["assumptions"]["pass"].get<bool>());
}

TEST_F(CliTest, SeedFlagOverridesConfig) {
    const auto cfg = write("c.ini", single_neuron());
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + out("a") + " --seed 3"), 0);
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --out " + out("b") + " --seed 4"), 0);
    EXPECT_NE(slurp(dir_ / "a" / "spikes.csv"), slurp(dir_ / "b" / "spikes.csv"));
    EXPECT_EQ(load(dir_ / "b" / "summary.json")["seed"].get<std::uint64_t>(), 4u);
}

TEST_F(CliTest, UnknownKeyIsUsageErrorWithLine) {
    const auto cfg = write("c.ini", "[run]\nseed = 1\n[model]\nbogus = 3\n");
    EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + out("o")), 2);
    EXPECT_NE(slurp(dir_ / "stdout.txt").find(":4"), std::string::npos);
}

TEST_F(CliTest, MalformedNumberIsUsageError) {
    const auto cfg = write("c.ini", "[model]\nmu1 = abc\n");
    EXPECT_EQ(run("simulate --config " + cfg.string() + " --out " + out("o")), 2);
}

TEST_F(CliTest, GradcheckDeterministicPasses) {
    const auto cfg = write("c.ini", single_neuron("0") +
                                        "[gradcheck]\nrtol = 1e-3\n[solver]\ndt = 1e-3\n");
    ASSERT_EQ(run("gradcheck --config " + cfg.string() + " --out " + out("o")), 0);
    const json r = load(dir_ / "o" / "report.json");
    EXPECT_GT(r["checked"].get<int>(), 0);
    EXPECT_EQ(r["failed"].get<int>(), 0);
}

TEST_F(CliTest, GradcheckStochasticPasses) {
    const auto cfg =
        write("c.ini", single_neuron("0.25") + "[gradcheck]\nrtol = 1e-2\n");
    ASSERT_EQ(run("gradcheck --config " + cfg.string() + " --out " + out("o")), 0);
    const json r = load(dir_ / "o" / "report.json");
    EXPECT_EQ(r["failed"].get<int>(), 0);
    EXPECT_TRUE(r["pass"].get<bool>());
}

TEST_F(CliTest, GradcheckReportsBrokenAssumption) {
    const auto cfg = write("c.ini", single_neuron() + "reset = to_zero\n");
    EXPECT_EQ(run("gradcheck --config " + cfg.string() + " --out " + out("o")), 1);
    const json r = load(dir_ / "o" / "report.json");
    EXPECT_FALSE(r["assumptions"]["pass"].get<bool>());
    EXPECT_FALSE(r["assumptions"]["commutation_ok"].get<bool>());
}

TEST_F(CliTest, KernelIdenticalSetsAreNotRejected) {
    esde::cli::write_spike_csv(dir_ / "x.csv", poisson_batch(2.0, 32, 1));
    const auto cfg = write("c.ini", "[run]\nseed = 1\n");
    ASSERT_EQ(run("kernel --config " + cfg.string() + " --out " + out("o") + " " + out("x.csv") + " " +
                  out("x.csv")),
              0);
    const json k = load(dir_ / "o" / "kernel.json");
    EXPECT_GE(k["p_value"].get<double>(), 0.5);
    EXPECT_LE(k["mmd"].get<double>(), 0.0);
    EXPECT_GE(k["gram_min_eigenvalue"].get<double>(), -1e-10);
}

TEST_F(CliTest, KernelSeparatesPoissonRates) {
    esde::cli::write_spike_csv(dir_ / "x.csv", poisson_batch(0.5, 64, 1));
    esde::cli::write_spike_csv(dir_ / "y.csv", poisson_batch(5.0, 64, 2));
    const auto cfg = write("c.ini", "[run]\nseed = 1\n");
    ASSERT_EQ(run("kernel --config " + cfg.string() + " --out " + out("o") + " " + out("x.csv") + " " +
                  out("y.csv")),
              0);
    EXPECT_LE(load(dir_ / "o" / "kernel.json")["p_value"].get<double>(), 0.01);
}

TEST_F(CliTest, KernelEmptyFileIsUsageError) {
    write("empty.csv", "");
    esde::cli::write_spike_csv(dir_ / "x.csv", poisson_batch(2.0, 4, 1));
    const auto cfg = write("c.ini", "[run]\nseed = 1\n");
    EXPECT_EQ(run("kernel --config " + cfg.string() + " --out " + out("o") + " " + out("empty.csv") +
                  " " + out("x.csv")),
              2);
}

TEST_F(CliTest, KernelSingletonBatchIsUsageError) {
    esde::cli::write_spike_csv(dir_ / "x.csv", poisson_batch(2.0, 1, 1));
    esde::cli::write_spike_csv(dir_ / "y.csv", poisson_batch(2.0, 4, 2));
    const auto cfg = write("c.ini", "[run]\nseed = 1\n");
    EXPECT_EQ(run("kernel --config " + cfg.string() + " --out " + out("o") + " " + out("x.csv") + " " +
                  out("y.csv")),
              2);
}

TEST_F(CliTest, TrainZeroLearningRateIsFlat) {
    const auto cfg = write("c.ini", "[train]\nexperiment = input_current\n[input_current]\n"
                                    "sample_size = 8\nsteps = 3\nlr = 0\n");
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + out("o")), 0);
    std::ifstream in(dir_ / "o" / "params.csv");
    std::string header;
    std::getline(in, header);
    std::string line;
    std::string first;
    int rows = 0;
    while (std::getline(in, line)) {
        const std::string value = line.substr(line.find(',') + 1);
        if (rows++ == 0) {
            first = value;
        }
        EXPECT_EQ(value, first);
    }
    EXPECT_EQ(rows, 4);
}

TEST_F(CliTest, TrainZeroStepsWritesInitialSnapshot) {
    const auto cfg = write("c.ini", "[train]\nexperiment = input_current\n[input_current]\n"
                                    "sample_size = 8\nsteps = 0\n");
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + out("o")), 0);
    std::ifstream in(dir_ / "o" / "train.csv");
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 2);
    EXPECT_EQ(load(dir_ / "o" / "summary.json")["steps"].get<int>(), 0);
}

TEST_F(CliTest, TrainExitCodeFollowsAcceptance) {
    const std::string base = "[train]\nexperiment = input_current\n[input_current]\n"
                             "sample_size = 16\nsteps = 2\ninit_low = 1.55\ninit_high = 1.55\n"
                             "[acceptance]\n";
    const auto pass = write("pass.ini", base + "max_final_param_error = 0.15\n");
    const auto fail = write("fail.ini", base + "max_final_param_error = 1e-9\n");
    EXPECT_EQ(run("train --config " + pass.string() + " --out " + out("p")), 0);
    EXPECT_TRUE(load(dir_ / "p" / "summary.json")["acceptance"]["pass"].get<bool>());
    EXPECT_EQ(run("train --config " + fail.string() + " --out " + out("f")), 1);
}
