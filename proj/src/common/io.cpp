#include "opmodenet/io.hpp"

#include "opmodenet/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

namespace opmodenet::io {

std::optional<std::size_t> CsvTable::find(std::string_view column) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == column) return i;
    return std::nullopt;
}

std::size_t CsvTable::require(std::string_view column) const {
    if (auto idx = find(column)) return *idx;
    throw ParseError("missing CSV column '" + std::string(column) + "'", 1, 1);
}

CsvTable parse_csv(std::string_view text) {
    CsvTable table;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool started = false;  // current record has consumed at least one character
    std::size_t line = 1;
    std::size_t column = 1;
    std::size_t record_line = 1;
    std::size_t quote_line = 0;
    std::size_t quote_column = 0;

    auto finish_record = [&]() {
        if (!started) return;  // blank line
        record.push_back(std::move(field));
        field.clear();
        if (table.header.empty()) {
            table.header = std::move(record);
            for (auto& h : table.header) h = trim(h);
        } else {
            if (record.size() != table.header.size())
                throw ParseError("CSV row has " + std::to_string(record.size()) + " fields, header has " +
                                     std::to_string(table.header.size()),
                                 record_line, 1);
            table.rows.push_back(std::move(record));
            table.row_lines.push_back(record_line);
        }
        record.clear();
        started = false;
    };

    for (std::size_t i = 0; i < text.size(); ++i, ++column) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                    ++column;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
                if (c == '\n') {
                    ++line;
                    column = 0;
                }
            }
            continue;
        }
        if (c == '\n' || c == '\r') {
            if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            finish_record();
            ++line;
            column = 0;
            continue;
        }
        if (!started) {
            started = true;
            record_line = line;
        }
        if (c == '"') {
            if (!field.empty()) throw ParseError("unexpected quote inside unquoted CSV field", line, column);
            in_quotes = true;
            quote_line = line;
            quote_column = column;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    if (in_quotes) throw ParseError("unterminated quoted CSV field", quote_line, quote_column);
    finish_record();
    if (table.header.empty()) throw ParseError("empty CSV document", 1, 1);
    return table;
}

CsvWriter::CsvWriter(const std::vector<std::string>& header) {
    for (const auto& h : header) field(h);
    end_row();
}

CsvWriter& CsvWriter::field(std::string_view value) {
    if (row_open_) out_.push_back(',');
    row_open_ = true;
    const bool needs_quotes = value.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs_quotes) {
        out_.append(value);
        return *this;
    }
    out_.push_back('"');
    for (char c : value) {
        if (c == '"') out_.push_back('"');
        out_.push_back(c);
    }
    out_.push_back('"');
    return *this;
}

CsvWriter& CsvWriter::field(double value) { return field(std::string_view(format_double(value))); }

CsvWriter& CsvWriter::field(long long value) { return field(std::string_view(std::to_string(value))); }

void CsvWriter::end_row() {
    out_.push_back('\n');
    row_open_ = false;
}

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    if (value == 0.0) return "0";  // folds -0 as well
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

double parse_double(std::string_view text, std::string_view context) {
    const std::string t = trim(text);
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
        if (t == "nan") return std::nan("");
        if (t == "inf") return INFINITY;
        if (t == "-inf") return -INFINITY;
        throw ParseError("invalid number '" + t + "'" + (context.empty() ? "" : " in " + std::string(context)));
    }
    return value;
}

long long parse_int(std::string_view text, std::string_view context) {
    const std::string t = trim(text);
    long long value = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ParseError("invalid integer '" + t + "'" + (context.empty() ? "" : " in " + std::string(context)));
    return value;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string sha256_hex(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace opmodenet::io
