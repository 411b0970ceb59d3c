#include "obigrad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace obigrad {

namespace {

void require_finite(const Mat& block, const char* name) {
  for (Eigen::Index i = 0; i < block.rows(); ++i) {
    for (Eigen::Index c = 0; c < block.cols(); ++c) {
      if (!std::isfinite(block(i, c))) {
        throw DataError("non-finite entry in " + std::string(name) + " at observation " +
                        std::to_string(i) + ", component " + std::to_string(c));
      }
    }
  }
}

}  // namespace

void validate_dataset(const Dataset& data) {
  if (data.x.rows() == 0) throw SizingError("dataset is empty");
  if (data.y.rows() != data.x.rows() || data.z.rows() != data.x.rows()) {
    throw ShapeError("dataset blocks disagree on the number of observations: x has " +
                     std::to_string(data.x.rows()) + ", y has " + std::to_string(data.y.rows()) +
                     ", z has " + std::to_string(data.z.rows()));
  }
  require_finite(data.x, "x");
  require_finite(data.y, "y");
  require_finite(data.z, "z");
}

FoldSplit split_folds(const Dataset& data, std::uint64_t seed) {
  const int n = data.size();
  if (n < 4) {
    throw SizingError("split_folds needs at least 4 observations, got " + std::to_string(n));
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  // Fisher-Yates with our own stream so the shuffle is platform-stable.
  for (int i = n - 1; i > 0; --i) {
    const int k = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(order[i], order[k]);
  }
  const int half = n / 2;
  FoldSplit split;
  split.fold1.assign(order.begin(), order.begin() + half);
  split.fold2.assign(order.begin() + half, order.end());
  return split;
}

Dataset read_dataset_csv(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV: " + name);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  int dx = 0, q = 0, dz = 0;
  {
    std::stringstream header(line);
    std::string col;
    while (std::getline(header, col, ',')) {
      if (col.rfind("x", 0) == 0) {
        ++dx;
      } else if (col.rfind("y", 0) == 0) {
        ++q;
      } else if (col.rfind("z", 0) == 0) {
        ++dz;
      } else {
        throw DataError("unrecognized CSV column '" + col + "' in " + name);
      }
    }
  }
  if (dx == 0 || q == 0 || dz == 0) {
    throw DataError("CSV header must contain x*, y*, z* columns: " + name);
  }

  std::vector<double> values;
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    int cols = 0;
    while (std::getline(row, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw DataError("could not parse '" + cell + "' at data row " + std::to_string(rows) +
                        " of " + name);
      }
      ++cols;
    }
    if (cols != dx + q + dz) {
      throw ShapeError("row " + std::to_string(rows) + " of " + name + " has " +
                       std::to_string(cols) + " fields, expected " + std::to_string(dx + q + dz));
    }
    ++rows;
  }
  if (rows == 0) throw DataError("CSV has a header but no data rows: " + name);

  Dataset data;
  data.x.resize(rows, dx);
  data.y.resize(rows, q);
  data.z.resize(rows, dz);
  for (int i = 0; i < rows; ++i) {
    const double* rec = values.data() + static_cast<std::size_t>(i) * (dx + q + dz);
    for (int c = 0; c < dx; ++c) data.x(i, c) = rec[c];
    for (int c = 0; c < q; ++c) data.y(i, c) = rec[dx + c];
    for (int c = 0; c < dz; ++c) data.z(i, c) = rec[dx + q + c];
  }
  validate_dataset(data);
  return data;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset CSV: " + path);
  return read_dataset_csv(in, path);
}

void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset CSV: " + path);
  for (int c = 0; c < data.dim_x(); ++c) out << (c ? ",x" : "x") << c;
  for (int c = 0; c < data.dim_y(); ++c) out << ",y" << c;
  for (int c = 0; c < data.dim_z(); ++c) out << ",z" << c;
  out << "\n";
  out.precision(17);
  for (int i = 0; i < data.size(); ++i) {
    for (int c = 0; c < data.dim_x(); ++c) out << (c ? "," : "") << data.x(i, c);
    for (int c = 0; c < data.dim_y(); ++c) out << "," << data.y(i, c);
    for (int c = 0; c < data.dim_z(); ++c) out << "," << data.z(i, c);
    out << "\n";
  }
}

}  // namespace obigrad
