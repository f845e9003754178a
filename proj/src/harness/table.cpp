#include "memora/harness/table.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace memora::harness {

namespace {

void check_cell(const std::string& cell) {
  if (cell.find_first_of(",\"\n\r") != std::string::npos)
    throw std::invalid_argument("csv cell may not contain commas, quotes or newlines: " + cell);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Table::Table(std::vector<std::string> header) : header_(std::move(header)) {
  for (const auto& h : header_) check_cell(h);
}

void Table::add(std::vector<std::string> row) {
  if (row.size() != header_.size())
    throw std::invalid_argument(fmt::format("row has {} cells, header has {}", row.size(), header_.size()));
  for (const auto& c : row) check_cell(c);
  rows_.push_back(std::move(row));
}

void Table::append(const Table& other) {
  if (header_.empty()) header_ = other.header_;
  if (other.header_ != header_) throw std::invalid_argument("cannot append tables with different headers");
  for (const auto& r : other.rows_) rows_.push_back(r);
}

int Table::column(const std::string& name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return static_cast<int>(i);
  throw std::out_of_range("no column '" + name + "'");
}

std::string Table::csv() const {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
    return s + "\n";
  };
  std::string out = line(header_);
  for (const auto& r : rows_) out += line(r);
  return out;
}

Table Table::parse(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty csv");
  Table t(split(line));
  while (std::getline(in, line))
    if (!line.empty()) t.add(split(line));
  return t;
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

}  // namespace memora::harness
