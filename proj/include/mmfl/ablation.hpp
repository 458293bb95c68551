#pragma once

#include <string>
#include <vector>

#include "mmfl/config.hpp"
#include "mmfl/engine.hpp"

namespace mmfl {

struct AblationRow {
  std::string name;  // "MF", "MF+MIM", "MF+FW", "MF+FW+MIM"
  bool use_fw = false;
  bool use_mim = false;
};

// The four module combinations, in table order.
std::vector<AblationRow> ablation_grid();

struct AblationCell {
  std::string row;
  std::string scenario;
  ExperimentLog log;
  double micro_f1 = 0.0;  // final "both" row
};

struct AblationTable {
  std::vector<std::string> rows;
  std::vector<std::string> scenarios;
  std::vector<AblationCell> cells;  // row-major: rows x scenarios

  const AblationCell& at(std::size_t row, std::size_t scenario) const;
};

// Every combination on every scenario with the base config's seed. Data is
// generated once per scenario and shared by the four rows. With output_dir
// set, each run logs under <output_dir>/<scenario>/<row>/ and the table goes
// to <output_dir>/ablation.csv.
AblationTable run_ablation(const ExperimentConfig& base);

std::string ablation_to_csv(const AblationTable& table);

}  // namespace mmfl
