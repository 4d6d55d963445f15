#pragma once

#include <istream>
#include <string>
#include <vector>

namespace rackctl {

// Minimal CSV support: comma-separated, no quoting (none of our formats
// need it), header row required. Parse errors report 1-based line numbers.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const; // -1 when absent
    int require_column(const std::string& name, const std::string& context) const;
};

CsvTable read_csv(std::istream& in, const std::string& origin = "<stream>");
CsvTable read_csv_file(const std::string& path);

std::vector<std::string> split_csv_line(const std::string& line);

// Locale-independent numeric formatting used by every writer so that
// repeated runs are byte-identical.
std::string format_double(double v);

} // namespace rackctl
