#include "cdan/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "cdan/errors.hpp"

namespace cdan {

namespace {

constexpr double kCellPx = 40.0;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out << text;
}

// Round tick step: 1, 2 or 5 times a power of ten.
double nice_step(double span, int target) {
  if (!(span > 0.0)) return 1.0;
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  return (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

const std::string& task_color(std::size_t task) {
  static const std::vector<std::string> palette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                                "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f"};
  return palette[task % palette.size()];
}

std::string trajectory_svg(const Maze& maze, const std::vector<TrajectoryRecord>& records) {
  const double w = static_cast<double>(maze.width()) * kCellPx, h = static_cast<double>(maze.height()) * kCellPx;
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<title>" << escape(maze.name()) << "</title>\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"#ffffff\"/>\n";
  os << "<g class=\"walls\" fill=\"#404040\">\n";
  for (std::size_t r = 0; r < maze.height(); ++r) {
    for (std::size_t c = 0; c < maze.width(); ++c) {
      if (maze.is_wall(static_cast<long>(c), static_cast<long>(r))) {
        os << "<rect x=\"" << c * kCellPx << "\" y=\"" << r * kCellPx << "\" width=\"" << kCellPx << "\" height=\""
           << kCellPx << "\"/>\n";
      }
    }
  }
  os << "</g>\n";
  const Vec2 s = maze.start(), g = maze.goal();
  os << "<circle class=\"start\" cx=\"" << s.x * kCellPx << "\" cy=\"" << s.y * kCellPx << "\" r=\"" << 0.2 * kCellPx
     << "\" fill=\"#000000\"/>\n";
  os << "<circle class=\"goal\" cx=\"" << g.x * kCellPx << "\" cy=\"" << g.y * kCellPx << "\" r=\"" << 0.5 * kCellPx
     << "\" fill=\"none\" stroke=\"#000000\" stroke-dasharray=\"4 3\"/>\n";

  std::map<std::pair<std::size_t, std::size_t>, std::vector<const TrajectoryRecord*>> episodes;
  for (const auto& r : records) episodes[{r.task, r.episode}].push_back(&r);
  for (auto& [key, pts] : episodes) {
    std::stable_sort(pts.begin(), pts.end(),
                     [](const TrajectoryRecord* a, const TrajectoryRecord* b) { return a->point.t < b->point.t; });
    os << "<polyline class=\"trajectory\" data-task=\"" << key.first << "\" data-episode=\"" << key.second
       << "\" fill=\"none\" stroke=\"" << task_color(key.first) << "\" stroke-opacity=\"0.7\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (k) os << ' ';
      os << pts[k]->point.x * kCellPx << ',' << pts[k]->point.y * kCellPx;
    }
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<CurveSeries>& series) {
  const double W = 640, H = 400, left = 70, right = 150, top = 40, bottom = 50;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      xmin = std::min(xmin, s.x[k]);
      xmax = std::max(xmax, s.x[k]);
      ymin = std::min(ymin, s.y[k]);
      ymax = std::max(ymax, s.y[k]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<title>" << escape(title) << "</title>\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"#ffffff\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  os << "<g class=\"axes\" stroke=\"#000000\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n";
  os << "</g>\n";
  const double xs = nice_step(xmax - xmin, 6), ys = nice_step(ymax - ymin, 5);
  for (double v = std::ceil(xmin / xs) * xs; v <= xmax + 1e-9 * xs; v += xs) {
    os << "<line x1=\"" << px(v) << "\" y1=\"" << top + ph << "\" x2=\"" << px(v) << "\" y2=\"" << top + ph + 5
       << "\" stroke=\"#000000\"/><text x=\"" << px(v) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
       << fmt(v) << "</text>\n";
  }
  for (double v = std::ceil(ymin / ys) * ys; v <= ymax + 1e-9 * ys; v += ys) {
    os << "<line x1=\"" << left - 5 << "\" y1=\"" << py(v) << "\" x2=\"" << left << "\" y2=\"" << py(v)
       << "\" stroke=\"#000000\"/><text x=\"" << left - 8 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">"
       << fmt(v) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n";
  os << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline class=\"series\" data-label=\"" << escape(s.label) << "\" fill=\"none\" stroke=\""
       << task_color(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (k) os << ' ';
      os << px(s.x[k]) << ',' << py(s.y[k]);
    }
    os << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(i);
    os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32 << "\" y2=\""
       << ly - 4 << "\" stroke=\"" << task_color(i) << "\" stroke-width=\"2\"/><text x=\"" << left + pw + 38
       << "\" y=\"" << ly << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::vector<std::filesystem::path> plot_trajectory_log(const TrajectoryLog& log, const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  std::map<std::string, std::vector<TrajectoryRecord>> by_maze;
  for (const auto& r : log.records) by_maze[r.maze].push_back(r);
  std::vector<std::filesystem::path> files;
  for (const auto& info : log.mazes) {
    const auto it = by_maze.find(info.name);
    if (it == by_maze.end()) continue;
    const Maze maze = load_maze(info.map, info.name);
    const auto path = out / (info.name + ".svg");
    write_file(path, trajectory_svg(maze, it->second));
    files.push_back(path);
  }
  return files;
}

std::vector<std::filesystem::path> plot_training_curves(const std::vector<LabeledTrainLog>& logs,
                                                        const std::filesystem::path& out) {
  std::filesystem::create_directories(out);
  struct Curve {
    const char* file;
    const char* title;
    const char* kind;
    const char* field;
    const char* y_label;
  };
  const Curve curves[] = {
      {"reward.svg", "Training reward", "update", "mean_reward", "mean episode reward"},
      {"entropy.svg", "Policy entropy", "update", "entropy", "entropy (nats)"},
      {"diversity_loss.svg", "Diversity loss", "update", "diversity_loss", "-log D(tau_hat)[task]"},
      {"gated_fraction.svg", "Self-correction gated fraction", "update", "gated_fraction", "fraction"},
      {"nsd.svg", "Evaluation NSD", "eval", "nsd", "NSD"},
  };
  std::vector<std::filesystem::path> files;
  for (const auto& c : curves) {
    std::vector<CurveSeries> series;
    for (const auto& log : logs) {
      CurveSeries s{log.label, {}, {}};
      for (const auto& r : log.records) {
        if (r.value("kind", "") != c.kind || !r.contains(c.field)) continue;
        s.x.push_back(r.at("step").get<double>());
        s.y.push_back(r.at(c.field).get<double>());
      }
      series.push_back(std::move(s));
    }
    const auto path = out / c.file;
    write_file(path, line_chart_svg(c.title, "environment steps", c.y_label, series));
    files.push_back(path);
  }
  return files;
}

}  // namespace cdan
