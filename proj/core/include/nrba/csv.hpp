#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace nrba::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Reads a comma-separated file with a header row. Double-quoted fields may
/// contain commas, newlines and doubled quotes.
Table read_file(const std::string& path);
Table parse(std::string_view text);

/// Shortest round-trip decimal form of a double; empty for NaN (missing).
std::string format_double(double v);

/// Quotes a field only when needed.
std::string escape(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace nrba::csv
