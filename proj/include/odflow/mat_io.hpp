#ifndef ODFLOW_MAT_IO_HPP
#define ODFLOW_MAT_IO_HPP

#include <filesystem>
#include <string>

#include "odflow/mat.hpp"

namespace odflow::io {

/*
 * Binary matrix container: a 16-byte header (8-byte magic+version tag,
 * uint32 rows, uint32 cols, little-endian) followed by the row-major
 * IEEE-754 float64 payload.
 */
void write_mat(const std::filesystem::path&, const Mat&);
Mat read_mat(const std::filesystem::path&);

void write_text(const std::filesystem::path&, const std::string&);
std::string read_text(const std::filesystem::path&);

}  // namespace odflow::io

#endif
