#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace fluxml {

/// Fixed 9-significant-digit rendering used for every CSV cell, so reruns
/// are byte-identical. Negative zero prints as "0"; non-finite values print
/// as "nan", "inf" or "-inf".
std::string format_real(double value);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

/// Splits one CSV record. Quoted fields may contain commas and doubled quotes.
std::vector<std::string> split_csv_line(std::string_view line);

/// Quotes a CSV field only when it needs it.
std::string csv_field(std::string_view text);

/// Parses a real, accepting "nan", "inf" and "-inf". Throws
/// std::invalid_argument naming the text on failure.
double parse_real(std::string_view text);

}  // namespace fluxml
