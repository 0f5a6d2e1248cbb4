#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "support.hpp"

namespace agroforge::testing {

inline const std::vector<std::string>& fixture_dataset_ids() {
  static const std::vector<std::string> kIds = {"cotton",     "plantvillage", "plantdoc",
                                                "fruits100",  "early_weed",   "farm_insects"};
  return kIds;
}

// Runs ingest through assemble on the fixtures with mock backends, writing
// under work. Returns the first failing step's result, or the assemble result.
inline CliResult run_fixture_pipeline(const std::filesystem::path& work, const std::string& seed,
                                      const std::string& mix = "10,35,35") {
  const auto f = fixture_dir();
  std::filesystem::create_directories(work / "pools");
  std::vector<std::string> train, holdout;
  for (const auto& id : fixture_dataset_ids()) {
    std::string base = (work / id).string();
    auto r = run_cli({"--seed", seed, "ingest", "--manifest", (f / "manifests" / (id + ".json")).string(), "--out",
                      base + ".json", "--holdout-fraction", "0.2", "--train-out", base + ".train.json",
                      "--holdout-out", base + ".holdout.json"});
    if (r.code != 0) return r;
    train.push_back(base + ".train.json");
    holdout.push_back(base + ".holdout.json");
  }
  auto with_catalogs = [&](std::vector<std::string> args, const std::vector<std::string>& catalogs) {
    args.push_back("--catalog");
    args.insert(args.end(), catalogs.begin(), catalogs.end());
    return args;
  };
  const std::string pools = (work / "pools").string();
  std::vector<std::vector<std::string>> steps = {
      with_catalogs({"knowledge", "verify", "--kb", (f / "knowledge").string()}, train),
      with_catalogs({"--seed", seed, "synth-desc", "--backend", (f / "backends/mock_vlm.json").string(), "--out",
                     pools + "/descriptions.jsonl"},
                    train),
      with_catalogs({"--seed", seed, "synth-conv", "--descriptions", pools + "/descriptions.jsonl", "--kb",
                     (f / "knowledge").string(), "--backend", (f / "backends/mock_llm.json").string(), "--out",
                     pools + "/complex.jsonl", "--failures-out", (work / "conv_failures.jsonl").string()},
                    train),
      with_catalogs({"--seed", seed, "synth-simple", "--out", pools + "/simple.jsonl"}, train),
      {"--seed", seed, "assemble", "--pools", pools, "--mix", mix, "--out", (work / "corpus.jsonl").string()},
  };
  CliResult last;
  for (const auto& step : steps) {
    last = run_cli(step);
    if (last.code != 0) return last;
  }
  return last;
}

}  // namespace agroforge::testing
