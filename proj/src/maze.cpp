#include "cdan/maze.hpp"

#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include "cdan/errors.hpp"

namespace cdan {

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

Maze::Maze(std::string name, std::size_t width, std::size_t height, std::vector<std::uint8_t> walls, Cell start,
           Cell goal)
    : name_(std::move(name)), width_(width), height_(height), walls_(std::move(walls)), start_(start), goal_(goal) {
  if (walls_.size() != width_ * height_) throw ConfigError("Maze: wall grid does not match dimensions");
}

bool Maze::is_wall(long col, long row) const {
  if (col < 0 || row < 0 || col >= static_cast<long>(width_) || row >= static_cast<long>(height_)) return true;
  return walls_[static_cast<std::size_t>(row) * width_ + static_cast<std::size_t>(col)] != 0;
}

Cell Maze::cell_of(Vec2 p) { return {static_cast<long>(std::floor(p.x)), static_cast<long>(std::floor(p.y))}; }

std::string Maze::to_text() const {
  std::string out;
  for (std::size_t r = 0; r < height_; ++r) {
    for (std::size_t c = 0; c < width_; ++c) {
      const Cell cell{static_cast<long>(c), static_cast<long>(r)};
      out += cell == start_ ? 'S' : cell == goal_ ? 'G' : is_wall(cell) ? '#' : '.';
    }
    out += '\n';
  }
  return out;
}

std::vector<GridMove> grid_moves(const Maze& maze, Cell from) {
  std::vector<GridMove> moves;
  for (long dr = -1; dr <= 1; ++dr) {
    for (long dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const Cell to{from.col + dc, from.row + dr};
      if (maze.is_wall(to)) continue;
      if (dr != 0 && dc != 0) {
        if (maze.is_wall(from.col + dc, from.row) || maze.is_wall(from.col, from.row + dr)) continue;
        moves.push_back({to, std::sqrt(2.0)});
      } else {
        moves.push_back({to, 1.0});
      }
    }
  }
  return moves;
}

namespace {

std::string at_pos(std::size_t row, std::size_t col) {
  return " (row " + std::to_string(row) + ", col " + std::to_string(col) + ")";
}

std::vector<double> dijkstra(const Maze& maze, Cell source) {
  const std::size_t W = maze.width(), H = maze.height();
  std::vector<double> dist(W * H, DistanceField::kUnreachable);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  const auto index = [W](Cell c) { return static_cast<std::size_t>(c.row) * W + static_cast<std::size_t>(c.col); };
  dist[index(source)] = 0.0;
  pq.emplace(0.0, index(source));
  while (!pq.empty()) {
    const auto [d, i] = pq.top();
    pq.pop();
    if (d > dist[i]) continue;
    const Cell here{static_cast<long>(i % W), static_cast<long>(i / W)};
    for (const GridMove& m : grid_moves(maze, here)) {
      const double nd = d + m.cost;
      const std::size_t j = index(m.to);
      if (nd < dist[j]) {
        dist[j] = nd;
        pq.emplace(nd, j);
      }
    }
  }
  return dist;
}

}  // namespace

Maze load_maze(std::string_view text, std::string name) {
  std::vector<std::string> rows;
  std::string line;
  std::istringstream in{std::string(text)};
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(line);
  }
  if (rows.empty()) throw LoadError("maze '" + name + "': empty map");
  const std::size_t H = rows.size(), W = rows[0].size();
  std::vector<std::uint8_t> walls(W * H, 0);
  std::vector<Cell> starts, goals;
  for (std::size_t r = 0; r < H; ++r) {
    if (rows[r].size() != W) {
      throw LoadError("maze '" + name + "': row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                      " columns, expected " + std::to_string(W));
    }
    for (std::size_t c = 0; c < W; ++c) {
      const char ch = rows[r][c];
      const Cell cell{static_cast<long>(c), static_cast<long>(r)};
      switch (ch) {
        case '#': walls[r * W + c] = 1; break;
        case '.': break;
        case 'S': starts.push_back(cell); break;
        case 'G': goals.push_back(cell); break;
        default:
          throw LoadError("maze '" + name + "': unexpected character '" + std::string(1, ch) + "'" + at_pos(r, c));
      }
      const bool border = r == 0 || c == 0 || r + 1 == H || c + 1 == W;
      if (border && ch != '#') throw LoadError("maze '" + name + "': border not walled" + at_pos(r, c));
    }
  }
  if (starts.size() != 1) {
    throw LoadError("maze '" + name + "': expected exactly one S, found " + std::to_string(starts.size()));
  }
  if (goals.size() != 1) {
    throw LoadError("maze '" + name + "': expected exactly one G, found " + std::to_string(goals.size()));
  }
  Maze maze(std::move(name), W, H, std::move(walls), starts[0], goals[0]);
  const auto dist = dijkstra(maze, maze.goal_cell());
  const Cell s = maze.start_cell();
  if (!std::isfinite(dist[static_cast<std::size_t>(s.row) * W + static_cast<std::size_t>(s.col)])) {
    throw LoadError("maze '" + maze.name() + "': goal unreachable from start" +
                    at_pos(static_cast<std::size_t>(s.row), static_cast<std::size_t>(s.col)));
  }
  return maze;
}

Maze load_maze_file(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw LoadError("maze: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_maze(ss.str(), name.empty() ? path.stem().string() : std::move(name));
}

DistanceField::DistanceField(const Maze& maze)
    : width_(maze.width()), height_(maze.height()), values_(dijkstra(maze, maze.goal_cell())) {}

double DistanceField::at(Cell c) const {
  if (c.col < 0 || c.row < 0 || c.col >= static_cast<long>(width_) || c.row >= static_cast<long>(height_)) {
    return kUnreachable;
  }
  return values_[static_cast<std::size_t>(c.row) * width_ + static_cast<std::size_t>(c.col)];
}

double DistanceField::query(Vec2 p) const {
  if (!std::isfinite(at(Maze::cell_of(p)))) {
    std::ostringstream os;
    os << "DistanceField::query: point (" << p.x << ", " << p.y << ") is inside a wall";
    throw UsageError(os.str());
  }
  const double u = p.x - 0.5, v = p.y - 0.5;
  const long c0 = static_cast<long>(std::floor(u)), r0 = static_cast<long>(std::floor(v));
  const double fx = u - static_cast<double>(c0), fy = v - static_cast<double>(r0);
  const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const Cell cells[4] = {{c0, r0}, {c0 + 1, r0}, {c0, r0 + 1}, {c0 + 1, r0 + 1}};
  double acc = 0.0, wsum = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double f = at(cells[k]);
    if (!std::isfinite(f) || w[k] == 0.0) continue;
    acc += w[k] * f;
    wsum += w[k];
  }
  return acc / wsum;
}

}  // namespace cdan
