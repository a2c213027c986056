#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "deepgp/common.hpp"

namespace deepgp {

struct Table {
    std::vector<std::string> header;
    Matrix values;

    Index column(const std::string& name) const;  // -1 if absent
};

// Numeric CSV with a single header line.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values);
Table read_csv(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// FNV-1a over the file bytes, hex encoded; used for manifest input hashes.
std::string file_hash(const std::filesystem::path& path);

// Shortest-round-trip decimal encoding; the one double->text form used in
// every emitted file so reruns stay byte-identical.
std::string format_double(double v);

}  // namespace deepgp
