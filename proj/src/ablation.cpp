#include "mmfl/ablation.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmfl/error.hpp"

namespace mmfl {

std::vector<AblationRow> ablation_grid() {
  return {{"MF", false, false}, {"MF+MIM", false, true}, {"MF+FW", true, false}, {"MF+FW+MIM", true, true}};
}

const AblationCell& AblationTable::at(std::size_t row, std::size_t scenario) const {
  if (row >= rows.size() || scenario >= scenarios.size()) throw ValidationError("ablation cell out of range");
  return cells[row * scenarios.size() + scenario];
}

AblationTable run_ablation(const ExperimentConfig& base) {
  base.validate();
  AblationTable table;
  for (const AblationRow& r : ablation_grid()) table.rows.push_back(r.name);
  if (base.ablation_scenarios.empty()) {
    table.scenarios.push_back(scenario_kind_name(base.scenario.kind));
  } else {
    table.scenarios = base.ablation_scenarios;
  }

  // Scenario-major execution, stored row-major.
  std::vector<std::vector<AblationCell>> by_scenario;
  for (const std::string& scenario : table.scenarios) {
    ExperimentConfig cfg = base;
    cfg.scenario.kind = parse_scenario_kind(scenario);
    cfg.output_dir.clear();
    const PreparedData data = prepare_data(cfg);
    std::vector<AblationCell> column;
    for (const AblationRow& r : ablation_grid()) {
      ExperimentConfig run = cfg;
      run.use_fw = r.use_fw;
      run.use_mim = r.use_mim;
      if (!base.output_dir.empty()) {
        run.output_dir = (std::filesystem::path(base.output_dir) / scenario / r.name).string();
      }
      AblationCell cell;
      cell.row = r.name;
      cell.scenario = scenario;
      cell.log = run_experiment(run, data);
      cell.micro_f1 = cell.log.final_row("both").micro_f1;
      column.push_back(std::move(cell));
    }
    by_scenario.push_back(std::move(column));
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    for (std::size_t s = 0; s < table.scenarios.size(); ++s) table.cells.push_back(std::move(by_scenario[s][r]));

  if (!base.output_dir.empty()) {
    const std::filesystem::path path = std::filesystem::path(base.output_dir) / "ablation.csv";
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << ablation_to_csv(table);
  }
  return table;
}

std::string ablation_to_csv(const AblationTable& table) {
  std::ostringstream os;
  os << "combination";
  for (const std::string& s : table.scenarios) os << ',' << s;
  os << '\n';
  char buf[32];
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    os << table.rows[r];
    for (std::size_t s = 0; s < table.scenarios.size(); ++s) {
      std::snprintf(buf, sizeof(buf), "%.8f", table.at(r, s).micro_f1);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mmfl
