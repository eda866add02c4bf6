#pragma once

#include <string>

namespace fnl {

/// Write the whole file atomically: write <path>.tmp, then rename over path.
void atomic_write_file(const std::string& path, const std::string& bytes);

std::string read_file(const std::string& path);

}  // namespace fnl
