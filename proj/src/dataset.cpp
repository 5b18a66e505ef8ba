#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "graffl/csv.hpp"
#include "graffl/error.hpp"

namespace graffl {

std::string format_real(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

std::string format_csv_row(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) out += ',';
        const std::string& f = fields[i];
        if (f.find_first_of(",\"\r\n") == std::string::npos) {
            out += f;
            continue;
        }
        out += '"';
        for (char c : f) {
            if (c == '"') out += '"';
            out += c;
        }
        out += '"';
    }
    out += '\n';
    return out;
}

std::vector<std::string> parse_csv_record(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
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
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted field");
    fields.push_back(std::move(cur));
    return fields;
}

void CsvDataset::validate() const {
    if (features.rows() != labels.size()) throw Error(ErrorCode::ParseError, "feature rows differ from label count");
    if (features.cols() != feature_names.size()) throw Error(ErrorCode::ParseError, "feature names differ from columns");
    for (int y : labels)
        if (y != 0 && y != 1) throw Error(ErrorCode::NonBinaryLabel, "label must be 0 or 1");
    if (!features.all_finite()) throw Error(ErrorCode::NonFiniteFeature, "feature value is not finite");
}

namespace {

double parse_number(const std::string& text, std::size_t line_no) {
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    while (first < last && *first == ' ') ++first;
    while (last > first && last[-1] == ' ') --last;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) {
        // from_chars rejects "inf"/"nan" spellings on some libraries; fall back to strtod for those.
        std::string trimmed(first, last);
        char* end = nullptr;
        v = std::strtod(trimmed.c_str(), &end);
        if (trimmed.empty() || end != trimmed.c_str() + trimmed.size()) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": '" + text + "' is not a number");
        }
    }
    return v;
}

}  // namespace

CsvDataset ingest_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ParseError, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "'" + path + "' is empty");
    const auto header = parse_csv_record(line);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size()) throw Error(ErrorCode::MissingColumn, "no column named '" + label_column + "'");

    CsvDataset ds;
    ds.label_name = label_column;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (i != label_idx) ds.feature_names.push_back(header[i]);

    std::vector<double> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = parse_csv_record(line);
        if (fields.size() != header.size()) {
            throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + " has " +
                                                   std::to_string(fields.size()) + " fields, header has " +
                                                   std::to_string(header.size()));
        }
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const double v = parse_number(fields[i], line_no);
            if (i == label_idx) {
                if (v != 0.0 && v != 1.0) {
                    throw Error(ErrorCode::NonBinaryLabel, "line " + std::to_string(line_no) + ": label '" +
                                                               fields[i] + "' is not 0 or 1");
                }
                ds.labels.push_back(static_cast<int>(v));
            } else {
                if (!std::isfinite(v)) {
                    throw Error(ErrorCode::NonFiniteFeature, "line " + std::to_string(line_no) + ": non-finite feature");
                }
                values.push_back(v);
            }
        }
    }
    ds.features = Matrix(ds.labels.size(), ds.feature_names.size(), std::move(values));
    return ds;
}

void write_csv(const std::string& path, const CsvDataset& data) {
    data.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::ParseError, "cannot write '" + path + "'");
    std::vector<std::string> header = data.feature_names;
    header.push_back(data.label_name);
    out << format_csv_row(header);
    for (std::size_t i = 0; i < data.rows(); ++i) {
        std::vector<std::string> fields;
        for (double v : data.features.row(i)) fields.push_back(format_real(v));
        fields.push_back(std::to_string(data.labels[i]));
        out << format_csv_row(fields);
    }
}

}  // namespace graffl
