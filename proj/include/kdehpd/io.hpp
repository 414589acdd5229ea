#ifndef KDEHPD_IO_HPP
#define KDEHPD_IO_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "kdehpd/core.hpp"

namespace kdehpd {

/// Bad input file contents. `row` is the 1-based data row (0 for the
/// header or the file as a whole), `column` the header name if known.
class CsvError : public Error {
public:
    CsvError(const std::string& what, std::size_t row = 0, std::string column = {})
        : Error(what), row_(row), column_(std::move(column)) {}
    std::size_t row() const { return row_; }
    const std::string& column() const { return column_; }

private:
    std::size_t row_;
    std::string column_;
};

/// Shortest round-trip decimal form; infinities as inf / -inf, NaN as nan.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Strict parse of a whole cell. Accepts the non-finite spellings that
/// format_double writes only when `allow_nonfinite` is set.
inline std::optional<double> parse_double(std::string_view s, bool allow_nonfinite = false) {
    if (allow_nonfinite) {
        if (s == "inf" || s == "+inf") return kInf;
        if (s == "-inf") return -kInf;
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    }
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
    if (!allow_nonfinite && !std::isfinite(v)) return std::nullopt;
    return v;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column, or nullopt.
    std::optional<std::size_t> find(std::string_view name) const {
        for (std::size_t j = 0; j < header.size(); ++j) {
            if (header[j] == name) return j;
        }
        return std::nullopt;
    }

    std::size_t require(std::string_view name) const {
        if (auto j = find(name)) return *j;
        throw CsvError("missing column '" + std::string(name) + "'");
    }

    /// Numeric value of a cell, with row/column in the error.
    double number(std::size_t row, std::size_t col, bool allow_nonfinite = false) const {
        const std::string& cell = rows[row][col];
        if (cell.empty()) throw CsvError("missing value", row + 1, header[col]);
        if (auto v = parse_double(cell, allow_nonfinite)) return *v;
        throw CsvError("non-numeric value '" + cell + "'", row + 1, header[col]);
    }
};

namespace detail {

// Splits one record; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_record(std::string_view line, std::size_t row) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty() && !was_quoted) {
            quoted = was_quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
            was_quoted = false;
        } else {
            cur += c;
        }
    }
    if (quoted) throw CsvError("unterminated quote", row);
    out.push_back(std::move(cur));
    return out;
}

}  // namespace detail

/// Header row required; blank lines are skipped; a trailing \r is dropped.
inline CsvTable parse_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    std::size_t row = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!have_header) {
            if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
            if (line.empty()) continue;
            t.header = detail::split_record(line, 0);
            have_header = true;
            continue;
        }
        if (line.empty()) continue;
        ++row;
        auto rec = detail::split_record(line, row);
        if (rec.size() != t.header.size()) {
            throw CsvError("expected " + std::to_string(t.header.size()) + " fields, found " +
                               std::to_string(rec.size()),
                           row);
        }
        t.rows.push_back(std::move(rec));
    }
    if (!have_header) throw CsvError("empty file: header row required");
    return t;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CsvError("cannot open '" + path + "'");
    return parse_csv(in);
}

struct LoadedData {
    Dataset data;
    std::vector<std::string> covariates;
};

/// Dataset from a table: `target` is the response and the remaining
/// columns, in file order, the covariates. With `target_optional` a missing
/// target column yields zero responses (prediction-only input).
inline LoadedData load_dataset(const CsvTable& t, const std::string& target,
                               const std::vector<std::string>& covariates = {}, bool target_optional = false) {
    const std::optional<std::size_t> ty = t.find(target);
    if (!ty && !target_optional) throw CsvError("target column '" + target + "' not found");
    std::vector<std::size_t> cols;
    std::vector<std::string> names;
    if (covariates.empty()) {
        for (std::size_t j = 0; j < t.header.size(); ++j) {
            if (ty && j == *ty) continue;
            cols.push_back(j);
            names.push_back(t.header[j]);
        }
    } else {
        for (const auto& c : covariates) {
            cols.push_back(t.require(c));
            names.push_back(c);
        }
    }
    if (cols.empty()) throw CsvError("no covariate columns");
    if (t.rows.empty()) throw CsvError("no data rows");
    std::vector<double> x;
    std::vector<double> y;
    x.reserve(t.rows.size() * cols.size());
    y.reserve(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        for (std::size_t j : cols) x.push_back(t.number(i, j));
        y.push_back(ty ? t.number(i, *ty) : 0.0);
    }
    return {Dataset(std::move(x), cols.size(), std::move(y)), std::move(names)};
}

/// Comma-joined record terminated by \n.
inline std::string csv_line(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out += ',';
        const bool quote = fields[i].find_first_of(",\"\n") != std::string::npos;
        if (!quote) {
            out += fields[i];
            continue;
        }
        out += '"';
        for (char c : fields[i]) {
            if (c == '"') out += '"';
            out += c;
        }
        out += '"';
    }
    out += '\n';
    return out;
}

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    out << contents;
    if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace kdehpd

#endif  // KDEHPD_IO_HPP
