// Command-line driver: train one config, run a directory of configs, or
// generate a synthetic LIBSVM file.
//
//   hetsgd train --config run.conf [--out dir] [--key=value ...]
//   hetsgd suite --configs dir [--out dir]
//   hetsgd gen-data --synthetic --rows N --dim D --classes K --out file
//
// Exit codes: 0 ok, 1 usage or config error, 2 run failure.
// HETSGD_LOG_LEVEL selects verbosity (trace, debug, info, warn, error, off).

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "hetsgd/harness.hpp"

namespace fs = std::filesystem;
using namespace hetsgd;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRunFailure = 2;

void configureLogging() {
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  if (const char* env = std::getenv("HETSGD_LOG_LEVEL")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept "off" when asked for
    if (level != spdlog::level::off || std::string(env) == "off") {
      spdlog::set_level(level);
      return;
    }
    spdlog::warn("ignoring unknown HETSGD_LOG_LEVEL '{}'", env);
  }
  spdlog::set_level(spdlog::level::info);
}

void logRun(const SuiteEntry& e) {
  if (!e.ok) {
    spdlog::error("{}: {}", e.name, e.error);
    return;
  }
  const auto& s = e.metrics.samples;
  spdlog::info("{}: loss {:.6f} -> {:.6f} in {:.0f} ms, {} epochs{}", e.name, s.front().loss, s.back().loss,
               e.metrics.trainingWallMs, e.metrics.epochsCompleted, e.metrics.budgetExpired ? " (budget hit)" : "");
  try {
    const auto share = updateRatio(e.metrics);
    const auto util = utilizationProxy(e.metrics);
    for (std::size_t w = 0; w < share.size(); ++w)
      spdlog::debug("  worker {}: update share {:.3f}, utilization {:.3f}", w, share[w], util[w]);
  } catch (const UndefinedRatioError&) {
  }
}

int runSuite(const std::vector<RunConfig>& configs, const fs::path& out) {
  const SuiteResult res = runExperimentSuite(configs, out, [](const std::string& name, std::size_t i, std::size_t n) {
    spdlog::info("[{}/{}] running {}", i + 1, n, name);
  });
  for (const auto& e : res.runs) logRun(e);
  spdlog::info("results written to {}", out.string());
  return res.failures() == 0 ? kOk : kRunFailure;
}

int cmdTrain(const std::string& configPath, const std::vector<std::string>& overrides, const fs::path& out) {
  KeyValues kv = loadKeyValues(configPath);
  applyOverrides(kv, overrides);
  return runSuite({parseRunConfig(kv)}, out);
}

int cmdSuite(const fs::path& dir, const fs::path& out) {
  if (!fs::is_directory(dir)) throw ConfigError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".conf") files.push_back(entry.path());
  std::ranges::sort(files);
  if (files.empty()) throw ConfigError("no .conf files in '" + dir.string() + "'");
  std::vector<RunConfig> configs;
  for (const auto& f : files) {
    KeyValues kv = loadKeyValues(f.string());
    if (!kv.count("name")) kv["name"] = f.stem().string();
    configs.push_back(parseRunConfig(kv));
  }
  return runSuite(configs, out);
}

struct GenOptions {
  bool synthetic = false;
  std::size_t rows = 20000;
  std::size_t dim = 54;
  std::size_t classes = 2;
  double separation = 2.0;
  std::uint64_t seed = 0;
  std::string labels = "zero_one";
  std::string out;
};

int cmdGenData(const GenOptions& g) {
  if (!g.synthetic) throw ConfigError("gen-data currently supports only --synthetic");
  const LabelMapping mapping = g.labels == "plus_minus_one" ? LabelMapping::PlusMinusOne
                               : g.labels == "one_based"    ? LabelMapping::OneBased
                                                            : LabelMapping::ZeroOne;
  if (mapping == LabelMapping::PlusMinusOne && g.classes != 2)
    throw ConfigError("plus_minus_one labels need exactly 2 classes");
  const Dataset ds = syntheticBlobs(g.rows, g.dim, g.classes, g.separation, g.seed);
  writeLibsvm(ds, g.out, mapping);
  spdlog::info("wrote {} rows x {} features to {}", ds.size(), ds.dim(), g.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  configureLogging();
  CLI::App app{"Heterogeneous asynchronous SGD experiments"};
  app.require_subcommand(1);

  std::string configPath;
  std::string outDir = "results";
  auto* train = app.add_subcommand("train", "Run one configuration; extra --key=value flags override it");
  train->add_option("--config", configPath, "key=value config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", outDir, "output directory for CSV files");
  train->allow_extras();

  std::string configsDir;
  auto* suite = app.add_subcommand("suite", "Run every .conf file in a directory");
  suite->add_option("--configs", configsDir, "directory of config files")->required();
  suite->add_option("--out", outDir, "output directory for CSV files");

  GenOptions gen;
  auto* genData = app.add_subcommand("gen-data", "Write a synthetic dataset in LIBSVM format");
  genData->add_flag("--synthetic", gen.synthetic, "Gaussian blobs");
  genData->add_option("--rows", gen.rows)->check(CLI::PositiveNumber);
  genData->add_option("--dim", gen.dim)->check(CLI::PositiveNumber);
  genData->add_option("--classes", gen.classes)->check(CLI::Range(2, 1 << 20));
  genData->add_option("--separation", gen.separation)->check(CLI::NonNegativeNumber);
  genData->add_option("--seed", gen.seed);
  genData->add_option("--labels", gen.labels)->check(CLI::IsMember({"zero_one", "plus_minus_one", "one_based"}));
  genData->add_option("--out", gen.out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmdTrain(configPath, train->remaining(), outDir);
    if (*suite) return cmdSuite(configsDir, outDir);
    if (*genData) return cmdGenData(gen);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const ParseError& e) {
    spdlog::error("config: {}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRunFailure;
  }
  return kUsage;
}
