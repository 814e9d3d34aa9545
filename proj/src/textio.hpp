// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

namespace lcl::textio {

/// Writes `text` to `<path>.tmp` and renames it over `path`. Creates parent dirs.
void write_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_all(const std::filesystem::path& path);
/// printf-style formatting of one double.
std::string fmt(const char* spec, double v);

}  // namespace lcl::textio
