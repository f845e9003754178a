#pragma once

#include <string>
#include <vector>

namespace memora::harness {

// Minimal CSV table. Cells never contain commas, quotes or newlines; labels
// are checked on insertion instead of being quoted.
class Table {
 public:
  Table() = default;
  explicit Table(std::vector<std::string> header);

  void add(std::vector<std::string> row);
  // Appends the rows of another table with an identical header.
  void append(const Table& other);

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  int column(const std::string& name) const;

  std::string csv() const;
  static Table parse(const std::string& text);

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Shortest text that parses back to the same double.
std::string num(double v);

}  // namespace memora::harness
