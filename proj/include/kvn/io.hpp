#pragma once

#include <fstream>
#include <string>
#include <vector>

namespace kvn {

// 17 significant digits, '.' decimal point, independent of the global locale.
std::string format_double(double value);

// Opens a file for writing in binary mode so that line endings stay LF.
std::ofstream open_output(const std::string& path);

// Writes "a,b,c\n".
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

// Creates the directory (and parents) if missing.
void ensure_directory(const std::string& path);

}  // namespace kvn
