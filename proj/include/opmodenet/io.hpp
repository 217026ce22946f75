#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace opmodenet::io {

/// Parsed CSV document. Line numbers in errors refer to the source text.
class CsvTable {
public:
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> row_lines;  ///< 1-based source line of each row

    /// Column index by name, or nullopt.
    std::optional<std::size_t> find(std::string_view column) const;
    /// Column index by name; throws ParseError when absent.
    std::size_t require(std::string_view column) const;
};

/// RFC 4180-style parsing: comma separated, double-quote quoting, first row is
/// the header. Blank lines are skipped. Every row must match the header width.
CsvTable parse_csv(std::string_view text);

/// Incremental CSV writer producing '\n'-terminated rows.
class CsvWriter {
public:
    explicit CsvWriter(const std::vector<std::string>& header);

    CsvWriter& field(std::string_view value);
    CsvWriter& field(double value);
    CsvWriter& field(long long value);
    CsvWriter& field(std::size_t value) { return field(static_cast<long long>(value)); }
    CsvWriter& field(int value) { return field(static_cast<long long>(value)); }
    void end_row();

    const std::string& str() const { return out_; }

private:
    std::string out_;
    bool row_open_ = false;
};

/// Shortest round-trip decimal representation; deterministic across runs.
std::string format_double(double value);

/// Strict numeric parsing of a whole field; throws ParseError with `context`.
double parse_double(std::string_view text, std::string_view context = {});
long long parse_int(std::string_view text, std::string_view context = {});

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view content);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

}  // namespace opmodenet::io
