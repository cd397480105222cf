#include "bridge/csv.hpp"

#include <fstream>
#include <sstream>

#include "bridge/errors.hpp"

namespace bridge {

int CsvTable::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return (int)i;
    return -1;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string join_csv(const std::vector<std::string>& fields) {
    std::string out;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        out += fields[i];
    }
    return out;
}

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open: " + path);
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (first) {
            t.header = fields;
            first = false;
        } else {
            if (fields.size() != t.header.size())
                throw DataError(path + ": row has " + std::to_string(fields.size()) +
                                " fields, header has " + std::to_string(t.header.size()));
            t.rows.push_back(fields);
        }
    }
    if (first) throw DataError(path + ": empty CSV");
    return t;
}

void write_csv(const std::string& path, const CsvTable& t) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open for write: " + path);
    f << join_csv(t.header) << "\n";
    for (const auto& r : t.rows) f << join_csv(r) << "\n";
}

double to_double(const std::string& s, const std::string& context) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(context + ": not a number: '" + s + "'");
    }
}

long long to_int(const std::string& s, const std::string& context) {
    try {
        size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(context + ": not an integer: '" + s + "'");
    }
}

}  // namespace bridge
