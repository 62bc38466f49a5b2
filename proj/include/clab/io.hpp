#pragma once

#include <string>

#include "clab/epidemic.hpp"
#include "clab/lattice.hpp"
#include "clab/surface.hpp"

namespace clab {

/// %.17g.
std::string format_double(double x);

/// JSON object with dim, side, boundary, law, c_m, p0, value, seed and the
/// axis-major weight array.
std::string field_to_json(const ConductanceField& field);
ConductanceField field_from_json(const std::string& text);
void write_field_json(const ConductanceField& field, const std::string& path);
ConductanceField read_field_json(const std::string& path);

/// Magic "CLFIELD1", then dim, side, boundary, law kind (int32 each), value,
/// c_m, p0 (double), seed (uint64), edge count (uint64) and the weights.
/// Native byte order.
void write_field_binary(const ConductanceField& field, const std::string& path);
ConductanceField read_field_binary(const std::string& path);

/// Columns t, front, infected_count after a schema line.
std::string front_to_csv(const FrontSeries& series);

std::string cell_report_to_json(const CellEventReport& report);

/// Grid extents plus flags as a nested [base][height] array of 0/1.
std::string cell_field_to_json(const CellField& cells);
CellField cell_field_from_json(const std::string& text);
std::string surface_to_json(const CellGrid& grid, const TwoSidedSurface& surface);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace clab
