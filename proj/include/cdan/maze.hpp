#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

namespace cdan {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

double distance(Vec2 a, Vec2 b);

struct Cell {
  long col = 0;
  long row = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Occupancy grid with 1 m cells. x grows with column, y with row (text order);
// cell (col, row) spans [col, col+1) x [row, row+1).
class Maze {
 public:
  Maze() = default;
  Maze(std::string name, std::size_t width, std::size_t height, std::vector<std::uint8_t> walls, Cell start,
       Cell goal);

  const std::string& name() const { return name_; }
  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  static constexpr double cell_size() { return 1.0; }

  // Out-of-grid cells count as walls.
  bool is_wall(long col, long row) const;
  bool is_wall(Cell c) const { return is_wall(c.col, c.row); }
  bool is_free(Vec2 p) const { return !is_wall(cell_of(p)); }
  static Cell cell_of(Vec2 p);
  static Vec2 center_of(Cell c) { return {c.col + 0.5, c.row + 0.5}; }

  Cell start_cell() const { return start_; }
  Cell goal_cell() const { return goal_; }
  Vec2 start() const { return center_of(start_); }
  Vec2 goal() const { return center_of(goal_); }

  std::string to_text() const;

 private:
  std::string name_;
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> walls_;
  Cell start_;
  Cell goal_;
};

// Parses '#', '.', 'S', 'G' rows. Requires a rectangular, fully walled map with
// one start, one goal and a free path between them; throws LoadError otherwise.
Maze load_maze(std::string_view text, std::string name = "maze");
Maze load_maze_file(const std::filesystem::path& path, std::string name = {});

// Shortest free-space path length (m) from every cell to the goal cell over the
// 8-connected grid: axis moves cost 1, diagonal moves cost sqrt(2) and may not
// cut a wall corner. Walls hold +inf.
class DistanceField {
 public:
  static constexpr double kUnreachable = std::numeric_limits<double>::infinity();

  DistanceField() = default;
  explicit DistanceField(const Maze& maze);

  double at(Cell c) const;
  // Bilinear interpolation between the surrounding cell centers; wall cells are
  // dropped and the remaining weights renormalized. Throws UsageError for a
  // point inside a wall.
  double query(Vec2 p) const;
  static constexpr double resolution() { return 1.0; }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> values_;
};

// Allowed grid moves from a cell: neighbor and step cost.
struct GridMove {
  Cell to;
  double cost;
};
std::vector<GridMove> grid_moves(const Maze& maze, Cell from);

}  // namespace cdan
