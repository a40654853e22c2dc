#pragma once

// RFC-4180 CSV: header row required, "" escapes inside quoted fields, CRLF or
// LF line ends. Numbers are parsed with from_chars (locale independent).

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "../errors.hpp"

namespace gpvct::io {

struct CsvTable {
    std::vector<std::string> header;
    /// rows[r][c]; row 0 is the first data row (file line 2 for simple files)
    std::vector<std::vector<std::string>> rows;
    /// 1-based file record number of each data row, for messages
    std::vector<long> record;

    [[nodiscard]] std::size_t columns() const noexcept { return header.size(); }
};

[[nodiscard]] inline CsvTable parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<long> starts;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false, field_was_quoted = false, any = false;
    long line = 1, rec_start = 1;
    auto end_field = [&] {
        rec.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(rec.size() == 1 && rec[0].empty())) {
            records.push_back(std::move(rec));
            starts.push_back(rec_start);
        }
        rec.clear();
        any = false;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        if (!any) rec_start = line;
        any = true;
        if (c == '"') {
            if (!field.empty() || field_was_quoted)
                throw DataError("quote inside unquoted field", line, static_cast<long>(rec.size()) + 1);
            quoted = true;
            field_was_quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
            // CRLF: handled by the \n branch
        } else if (c == '\n') {
            end_record();
            ++line;
        } else {
            if (field_was_quoted)
                throw DataError("text after closing quote", line, static_cast<long>(rec.size()) + 1);
            field += c;
        }
    }
    if (quoted) throw DataError("unterminated quoted field", line);
    if (any) end_record();
    if (records.empty()) throw DataError("CSV has no header row");
    CsvTable t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size())
            throw DataError("expected " + std::to_string(t.header.size()) + " fields, found " +
                                std::to_string(records[r].size()),
                            starts[r]);
        t.rows.push_back(std::move(records[r]));
        t.record.push_back(starts[r]);
    }
    return t;
}

[[nodiscard]] inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open data file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

/// Strict numeric parse of a whole cell; surrounding blanks allowed.
[[nodiscard]] inline bool parse_number(std::string_view cell, double& out) {
    auto b = cell.find_first_not_of(" \t");
    if (b == std::string_view::npos) return false;
    auto e = cell.find_last_not_of(" \t");
    cell = cell.substr(b, e - b + 1);
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return ec == std::errc() && p == cell.data() + cell.size();
}

/// Numeric matrix of the chosen columns; any non-numeric or non-finite cell
/// is a DataError naming the record and column (1-based).
[[nodiscard]] inline Eigen::MatrixXd numeric_columns(const CsvTable& t, const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd M(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const auto& cell = t.rows[r][cols[j]];
            double v = 0.0;
            if (!parse_number(cell, v))
                throw DataError("non-numeric value '" + cell + "' in column '" + t.header[cols[j]] + "'",
                                t.record[r], static_cast<long>(cols[j]) + 1);
            if (!std::isfinite(v))
                throw DataError("non-finite value in column '" + t.header[cols[j]] + "'", t.record[r],
                                static_cast<long>(cols[j]) + 1);
            M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
        }
    return M;
}

/// Column selector: comma list of names, 0-based indices, or name prefixes
/// ending in '*'. Order follows the selector, then file order within a prefix.
[[nodiscard]] inline std::vector<std::size_t> select_columns(const CsvTable& t, std::string_view selector) {
    std::vector<std::size_t> out;
    auto add = [&](std::size_t c) {
        for (auto o : out)
            if (o == c) throw DataError("column '" + t.header[c] + "' selected twice");
        out.push_back(c);
    };
    std::size_t pos = 0;
    while (pos <= selector.size()) {
        auto comma = selector.find(',', pos);
        auto tok = selector.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
        auto b = tok.find_first_not_of(" \t");
        tok = b == std::string_view::npos ? std::string_view{} : tok.substr(b, tok.find_last_not_of(" \t") - b + 1);
        if (tok.empty()) throw DataError("empty column selector in '" + std::string(selector) + "'");
        bool found = false;
        if (tok.back() == '*') {
            auto prefix = tok.substr(0, tok.size() - 1);
            for (std::size_t c = 0; c < t.header.size(); ++c)
                if (std::string_view(t.header[c]).substr(0, prefix.size()) == prefix) {
                    add(c);
                    found = true;
                }
        } else {
            for (std::size_t c = 0; c < t.header.size() && !found; ++c)
                if (t.header[c] == tok) {
                    add(c);
                    found = true;
                }
            std::size_t idx = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
            if (!found && ec == std::errc() && p == tok.data() + tok.size()) {
                if (idx >= t.header.size())
                    throw DataError("column index " + std::to_string(idx) + " out of range (" +
                                    std::to_string(t.header.size()) + " columns)");
                add(idx);
                found = true;
            }
        }
        if (!found) throw DataError("no column matches '" + std::string(tok) + "'");
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline void write_csv_field(std::ostream& os, std::string_view f) {
    if (f.find_first_of(",\"\r\n") == std::string_view::npos) {
        os << f;
        return;
    }
    os << '"';
    for (char c : f) {
        if (c == '"') os << '"';
        os << c;
    }
    os << '"';
}

inline void write_csv_row(std::ostream& os, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) os << ',';
        write_csv_field(os, fields[i]);
    }
    os << "\r\n";
}

/// Shortest round-trip decimal text; "nan" / "inf" for non-finite values.
[[nodiscard]] inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace gpvct::io
