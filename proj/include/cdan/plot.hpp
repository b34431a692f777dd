#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdan/evaluation.hpp"
#include "cdan/maze.hpp"

namespace cdan {

// Fixed categorical palette; task i uses entry i mod size.
const std::string& task_color(std::size_t task);

// One SVG of the maze with every trajectory in `records` drawn as a polyline
// colored by task. Polylines carry data-task and data-episode attributes.
std::string trajectory_svg(const Maze& maze, const std::vector<TrajectoryRecord>& records);

struct CurveSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

// Line chart with axes, ticks and a legend.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<CurveSeries>& series);

// Writes <out>/<maze>.svg for every maze that has trajectories; returns the files.
std::vector<std::filesystem::path> plot_trajectory_log(const TrajectoryLog& log, const std::filesystem::path& out);

struct LabeledTrainLog {
  std::string label;
  std::vector<nlohmann::json> records;
};

// reward.svg, entropy.svg, diversity_loss.svg, gated_fraction.svg and nsd.svg
// with one series per log.
std::vector<std::filesystem::path> plot_training_curves(const std::vector<LabeledTrainLog>& logs,
                                                        const std::filesystem::path& out);

}  // namespace cdan
