#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "graffl/matrix.hpp"

namespace graffl {

/// Shortest decimal that round-trips to the same double.
std::string format_real(double value);

/// One RFC-4180 record terminated by "\r\n"-free "\n"; fields containing a
/// comma, quote or line break are quoted with doubled quotes.
std::string format_csv_row(const std::vector<std::string>& fields);

/// Splits one CSV record, honoring quoted fields. Throws ParseError on an
/// unterminated quote.
std::vector<std::string> parse_csv_record(std::string_view line);

/// Feature matrix plus binary label column.
struct CsvDataset {
    std::vector<std::string> feature_names;
    std::string label_name;
    Matrix features;
    std::vector<int> labels;

    [[nodiscard]] std::size_t rows() const noexcept { return labels.size(); }
    void validate() const;

    friend bool operator==(const CsvDataset&, const CsvDataset&) = default;
};

/// Reads a headered CSV file. Errors: ParseError (unreadable, ragged or
/// non-numeric), MissingColumn, NonBinaryLabel, NonFiniteFeature.
CsvDataset ingest_csv(const std::string& path, const std::string& label_column);

/// Writes features then the label as the last column.
void write_csv(const std::string& path, const CsvDataset& data);

}  // namespace graffl
