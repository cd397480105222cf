#pragma once

#include <string>
#include <vector>

namespace bridge {

// Minimal CSV: comma-separated, no quoting, one record per line.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::string& path);
void write_csv(const std::string& path, const CsvTable& t);

std::vector<std::string> split_csv_line(const std::string& line);
std::string join_csv(const std::vector<std::string>& fields);

double to_double(const std::string& s, const std::string& context);
long long to_int(const std::string& s, const std::string& context);

}  // namespace bridge
