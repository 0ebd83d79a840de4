#pragma once

// Small TOML subset: [section] headers, `key = value` lines, '#' comments.
// Values are booleans, integers, floats, basic strings and single-line arrays
// of those. Insertion order is preserved so written files diff cleanly.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace ganflow::toml {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<bool, std::int64_t, double, std::string, Array> data;

  Value() : data(false) {}
  Value(bool v) : data(v) {}
  Value(int v) : data(static_cast<std::int64_t>(v)) {}
  Value(long v) : data(static_cast<std::int64_t>(v)) {}
  Value(long long v) : data(static_cast<std::int64_t>(v)) {}
  Value(unsigned long v) : data(static_cast<std::int64_t>(v)) {}
  Value(unsigned long long v) : data(static_cast<std::int64_t>(v)) {}
  Value(double v) : data(v) {}
  Value(const char* v) : data(std::string(v)) {}
  Value(std::string v) : data(std::move(v)) {}
  Value(Array v) : data(std::move(v)) {}

  [[nodiscard]] bool is_bool() const { return std::holds_alternative<bool>(data); }
  [[nodiscard]] bool is_int() const { return std::holds_alternative<std::int64_t>(data); }
  [[nodiscard]] bool is_double() const { return std::holds_alternative<double>(data); }
  [[nodiscard]] bool is_string() const { return std::holds_alternative<std::string>(data); }
  [[nodiscard]] bool is_array() const { return std::holds_alternative<Array>(data); }

  bool operator==(const Value&) const = default;
};

class Table {
 public:
  void set(const std::string& key, Value v);
  [[nodiscard]] bool contains(const std::string& key) const;
  [[nodiscard]] const Value& at(const std::string& key) const;
  void erase(const std::string& key);

  [[nodiscard]] bool get_bool(const std::string& key) const;
  [[nodiscard]] std::int64_t get_int(const std::string& key) const;
  /// Integers are accepted and widened.
  [[nodiscard]] double get_double(const std::string& key) const;
  [[nodiscard]] std::string get_string(const std::string& key) const;
  [[nodiscard]] std::vector<double> get_doubles(const std::string& key) const;
  [[nodiscard]] std::vector<std::int64_t> get_ints(const std::string& key) const;

  [[nodiscard]] bool get_or(const std::string& key, bool fallback) const;
  [[nodiscard]] std::int64_t get_or(const std::string& key, std::int64_t fallback) const;
  [[nodiscard]] int get_or(const std::string& key, int fallback) const;
  [[nodiscard]] double get_or(const std::string& key, double fallback) const;
  [[nodiscard]] std::string get_or(const std::string& key, const std::string& fallback) const;
  [[nodiscard]] std::string get_or(const std::string& key, const char* fallback) const;

  [[nodiscard]] const std::vector<std::pair<std::string, Value>>& entries() const { return entries_; }
  [[nodiscard]] bool empty() const { return entries_.empty(); }
  /// Name used in error messages.
  std::string context;

  bool operator==(const Table& o) const { return entries_ == o.entries_; }

 private:
  std::vector<std::pair<std::string, Value>> entries_;
};

class Document {
 public:
  /// Top-level keys live in the root table.
  Table& root() { return root_; }
  [[nodiscard]] const Table& root() const { return root_; }
  /// Creates the section when absent.
  Table& table(const std::string& name);
  [[nodiscard]] const Table* find(const std::string& name) const;
  /// Returns an empty table when the section is absent.
  [[nodiscard]] const Table& section(const std::string& name) const;
  [[nodiscard]] std::vector<std::string> section_names() const;

  static Document parse(const std::string& text, const std::string& origin = "<string>");
  static Document load(const std::filesystem::path& path);
  void write(std::ostream& os) const;
  [[nodiscard]] std::string str() const;
  void save(const std::filesystem::path& path) const;

  bool operator==(const Document& o) const { return root_ == o.root_ && sections_ == o.sections_; }

 private:
  Table root_;
  std::vector<std::pair<std::string, Table>> sections_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
std::string format_value(const Value& v);

}  // namespace ganflow::toml
