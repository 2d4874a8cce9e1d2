#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "exactloc/forward_model.hpp"
#include "exactloc/types.hpp"

namespace exactloc::io {

// Matrix text format: first line "rows cols", then `rows` lines of `cols`
// space-separated decimals written with 17 significant digits.

void write_matrix(std::ostream& out, const MatrixXd& m);
std::string format_matrix(const MatrixXd& m);

/// `source` names the stream in diagnostics (file path or "<stdin>").
MatrixXd read_matrix(std::istream& in, const std::string& source = "<stream>");
MatrixXd read_matrix_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_matrix_file(const std::filesystem::path& path, const MatrixXd& m);

/// One row per electrode, 3 columns.
MatrixXd montage_to_matrix(const SensorMontage& montage);
SensorMontage montage_from_matrix(const MatrixXd& m);

/// One row per voxel: 3 columns, or 6 when normals are present.
MatrixXd sources_to_matrix(const SourceSpace& sources);
SourceSpace sources_from_matrix(const MatrixXd& m);

}  // namespace exactloc::io
