#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "obigrad/types.hpp"

namespace obigrad {

// Checks finiteness and consistent dimensions; throws DataError / ShapeError.
void validate_dataset(const Dataset& data);

// Seeded shuffle, then contiguous halves; for odd N the extra index goes to
// fold 2. Deterministic in (data order, seed). Requires N >= 4.
FoldSplit split_folds(const Dataset& data, std::uint64_t seed);

// CSV with header x0..x{dx-1},y0..y{q-1},z0..z{dz-1}, one observation per line.
Dataset read_dataset_csv(const std::string& path);
Dataset read_dataset_csv(std::istream& in, const std::string& name);
void write_dataset_csv(const Dataset& data, const std::string& path);

}  // namespace obigrad
