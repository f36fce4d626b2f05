#pragma once

#include <filesystem>
#include <string>

namespace gpvit {

/// Whole-file reads and writes; IoError when the file cannot be opened.
/// Writing creates missing parent directories.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace gpvit
