#include "rackctl/csv.hpp"

#include <cstdio>
#include <fstream>

#include "rackctl/errors.hpp"

namespace rackctl {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

int CsvTable::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int CsvTable::require_column(const std::string& name, const std::string& context) const {
    int c = column(name);
    if (c < 0) throw ParseError(context + ": missing required column '" + name + "'");
    return c;
}

CsvTable read_csv(std::istream& in, const std::string& origin) {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line))
        throw ParseError(origin + ": empty file, expected a header row");
    t.header = split_csv_line(line);
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != t.header.size())
            throw ParseError(origin + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(t.header.size()) + " fields, got " +
                             std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    return t;
}

CsvTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open CSV file: " + path);
    return read_csv(in, path);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.15g", v);
    return buf;
}

} // namespace rackctl
