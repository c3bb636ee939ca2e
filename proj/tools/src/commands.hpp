#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace dcnet::cli {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string init;
  std::string checkpoint;  // positional, eval/attack/export-csv
};

struct GradcheckFlags {
  bool all_kinds = false;
  bool force_knee = false;
  std::size_t batch = 2;
};

int run_train(const CommonOptions& opts, bool adversarial);
int run_eval(const CommonOptions& opts);
int run_gradcheck(const CommonOptions& opts, const GradcheckFlags& flags);
int run_attack(const CommonOptions& opts);
int run_export_csv(const CommonOptions& opts);

}  // namespace dcnet::cli
