#include "exactloc/matrix_io.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>

#include "exactloc/error.hpp"

namespace exactloc::io {

namespace fs = std::filesystem;

void write_matrix(std::ostream& out, const MatrixXd& m) {
  out << m.rows() << ' ' << m.cols() << '\n';
  out << std::setprecision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ' ';
      out << m(r, c);
    }
    out << '\n';
  }
}

std::string format_matrix(const MatrixXd& m) {
  std::ostringstream out;
  write_matrix(out, m);
  return out.str();
}

MatrixXd read_matrix(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;

  auto fail = [&](const std::string& what) -> Error {
    std::ostringstream msg;
    msg << source << ":" << line_no << ": " << what;
    return Error(ErrorKind::io, msg.str());
  };

  long rows = -1;
  long cols = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream header(line);
    std::string extra;
    if (!(header >> rows >> cols) || (header >> extra)) throw fail("expected header 'rows cols'");
    break;
  }
  if (rows < 0 || cols < 0) throw fail("missing or negative matrix header");

  MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) {
      ++line_no;
      throw fail("expected " + std::to_string(rows) + " rows, found " + std::to_string(r));
    }
    ++line_no;
    std::istringstream row(line);
    for (long c = 0; c < cols; ++c) {
      std::string token;
      if (!(row >> token)) {
        throw fail("row has " + std::to_string(c) + " values, expected " + std::to_string(cols));
      }
      try {
        std::size_t used = 0;
        m(r, c) = std::stod(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw fail("cannot parse '" + token + "' as a number");
      }
    }
    std::string extra;
    if (row >> extra) throw fail("row has more than " + std::to_string(cols) + " values");
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) throw fail("trailing data after matrix");
  }
  return m;
}

MatrixXd read_matrix_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return read_matrix(in, path.string());
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw Error(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_matrix_file(const fs::path& path, const MatrixXd& m) {
  write_file_atomic(path, format_matrix(m));
}

MatrixXd montage_to_matrix(const SensorMontage& montage) {
  MatrixXd m(montage.size(), 3);
  for (Index i = 0; i < montage.size(); ++i) m.row(i) = montage.positions[i].transpose();
  return m;
}

SensorMontage montage_from_matrix(const MatrixXd& m) {
  if (m.cols() != 3) throw Error(ErrorKind::dimension, "montage matrix must have 3 columns");
  SensorMontage montage;
  for (Index i = 0; i < m.rows(); ++i) montage.positions.emplace_back(m.row(i).transpose());
  return montage;
}

MatrixXd sources_to_matrix(const SourceSpace& sources) {
  const Index cols = sources.has_normals() ? 6 : 3;
  MatrixXd m(sources.size(), cols);
  for (Index j = 0; j < sources.size(); ++j) {
    m.block<1, 3>(j, 0) = sources.positions[j].transpose();
    if (sources.has_normals()) m.block<1, 3>(j, 3) = (*sources.normals)[j].transpose();
  }
  return m;
}

SourceSpace sources_from_matrix(const MatrixXd& m) {
  if (m.cols() != 3 && m.cols() != 6) {
    throw Error(ErrorKind::dimension, "source matrix must have 3 or 6 columns");
  }
  SourceSpace sources;
  if (m.cols() == 6) sources.normals.emplace();
  for (Index j = 0; j < m.rows(); ++j) {
    sources.positions.emplace_back(m.block<1, 3>(j, 0).transpose());
    if (m.cols() == 6) sources.normals->emplace_back(m.block<1, 3>(j, 3).transpose());
  }
  return sources;
}

}  // namespace exactloc::io
