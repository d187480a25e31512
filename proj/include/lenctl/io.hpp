// Copyright 2026 The lenctl Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lenctl {

// Writes to a sibling temp file, then renames over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
void append_line(const std::filesystem::path& path, std::string_view line);

// Throws DependencyError when the file does not exist.
std::string read_file(const std::filesystem::path& path);
// Non-empty lines of a text file.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace lenctl
