#include "deepgp/io.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace deepgp {

Index Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<Index>(i);
    return -1;
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    require(ec == std::errc(), "format_double failed");
    return std::string(buf, ptr);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values) {
    require(static_cast<Index>(header.size()) == values.cols(), "write_csv(", path.string(), "): ", header.size(),
            " header fields for ", values.cols(), " columns");
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_csv: cannot open ", path.string(), " for writing");
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ',';
        out << header[i];
    }
    out << '\n';
    for (Index r = 0; r < values.rows(); ++r) {
        for (Index c = 0; c < values.cols(); ++c) {
            if (c) out << ',';
            out << format_double(values(r, c));
        }
        out << '\n';
    }
    require(out.good(), "write_csv: write failed for ", path.string());
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

bool parse_double(const std::string& s, double& out) {
    const char* begin = s.data();
    const char* end = begin + s.size();
    while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, out);
    while (ptr < end && (*ptr == ' ' || *ptr == '\t')) ++ptr;
    return ec == std::errc() && ptr == end && begin < end;
}

}  // namespace

Table read_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "read_csv: cannot open ", path.string());
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "read_csv: ", path.string(), " is empty");

    Table table;
    std::vector<std::vector<double>> rows;
    auto first = split_line(line);
    std::vector<double> probe(first.size());
    bool first_is_numeric = true;
    for (std::size_t i = 0; i < first.size(); ++i)
        if (!parse_double(first[i], probe[i])) first_is_numeric = false;
    if (first_is_numeric) {
        for (std::size_t i = 0; i < first.size(); ++i) table.header.push_back(cat("c", i));
        rows.push_back(probe);
    } else {
        table.header = first;
    }

    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto fields = split_line(line);
        require(fields.size() == table.header.size(), "read_csv: ", path.string(), " row ", rows.size() + 1, " has ",
                fields.size(), " fields, expected ", table.header.size());
        std::vector<double> row(fields.size());
        for (std::size_t i = 0; i < fields.size(); ++i)
            require(parse_double(fields[i], row[i]), "read_csv: ", path.string(), ": cannot parse '", fields[i], "'");
        rows.push_back(std::move(row));
    }

    table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(table.header.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            table.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
    return table;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "write_text: cannot open ", path.string(), " for writing");
    out << text;
    require(out.good(), "write_text: write failed for ", path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "read_text: cannot open ", path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_hash(const std::filesystem::path& path) {
    const std::string bytes = read_text(path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace deepgp
