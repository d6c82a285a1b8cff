#pragma once

// Dataset CSV and report files. Numbers are written in the shortest decimal
// form that parses back to the same double.

#include "deconf/simulation.hpp"

#include <json.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace deconf::io {

std::string format_number(double x);

/// Header y,t,x1..xp. Potential outcomes are not written.
void write_dataset_csv(const std::string& path, const Dataset<double>& data);
std::string dataset_csv(const Dataset<double>& data);

/// Errors name the offending row (1-based data rows) or column.
Dataset<double> read_dataset_csv(const std::string& path);
Dataset<double> parse_dataset_csv(const std::string& text, const std::string& source = "<csv>");

// Simulation outputs.
std::string summary_csv(const std::vector<sim::CellResult>& cells);
std::string sweep_csv(const std::vector<sim::CellResult>& cells);
std::string shrinkage_csv(const std::vector<sim::CellResult>& cells, const sim::ExperimentGrid& grid);
std::string runs_jsonl(const std::vector<sim::CellResult>& cells);

// Single-dataset estimation outputs.
nlohmann::json to_json(const FittedGLM<double>& fit);
nlohmann::json to_json(const ScoreFamily<double>& fam);
nlohmann::json to_json(const EstimateReport<double>& report);
nlohmann::json estimation_json(const sim::EstimationResult& res, const sim::EstimationSettings& settings);
std::string estimation_csv(const sim::EstimationResult& res);

void write_file(const std::string& path, const std::string& content);

} // namespace deconf::io
