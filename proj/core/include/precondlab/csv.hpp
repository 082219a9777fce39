#pragma once

// RFC-4180 CSV output (CRLF line ends, quoted fields only where needed) and
// git-style content hashes for the run manifest.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace precondlab::csv {

/// Shortest round-trip decimal form; "nan", "inf", "-inf" for non-finite values.
std::string number(double value);
std::string number(long long value);

/// Quotes the field when it contains a comma, a double quote, CR or LF.
std::string escape(std::string_view field);

class Table {
public:
    explicit Table(std::vector<std::string> header);

    /// Throws std::invalid_argument when the row width differs from the header.
    void add_row(std::vector<std::string> row);

    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }
    std::string str() const;
    void write(const std::filesystem::path& path) const;

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Parses CSV text produced by Table (quoted fields, CRLF or LF line ends).
std::vector<std::vector<std::string>> parse(std::string_view text);

/// Hex SHA-1 of "blob <size>\0" + content, i.e. what `git hash-object` prints.
std::string git_blob_sha1(std::string_view content);
std::string git_blob_sha1_file(const std::filesystem::path& path);

/// Writes text to a temporary sibling file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace precondlab::csv
