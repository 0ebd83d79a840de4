#include "ganflow/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "ganflow/errors.hpp"

namespace ganflow::toml {

namespace {

std::string where(const Table& t, const std::string& key) {
  return t.context.empty() ? key : t.context + "." + key;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return true;
}

class Parser {
 public:
  Parser(const std::string& text, std::string origin) : text_(text), origin_(std::move(origin)) {}

  Document run() {
    Document doc;
    Table* current = &doc.root();
    while (pos_ < text_.size()) {
      skip_blank();
      if (pos_ >= text_.size()) break;
      const char c = text_[pos_];
      if (c == '\n') {
        ++pos_;
        ++line_;
        continue;
      }
      if (c == '#') {
        skip_comment();
        continue;
      }
      if (c == '[') {
        ++pos_;
        const std::string name = trim(read_until(']'));
        if (pos_ >= text_.size()) fail("unterminated section header");
        ++pos_;
        if (!valid_key(name)) fail("invalid section name '" + name + "'");
        if (doc.find(name) != nullptr) fail("duplicate section [" + name + "]");
        current = &doc.table(name);
        end_of_line();
        continue;
      }
      std::string key = trim(read_until('='));
      if (pos_ >= text_.size()) fail("expected '=' after key");
      ++pos_;
      if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
      if (!valid_key(key)) fail("invalid key '" + key + "'");
      if (current->contains(key)) fail("duplicate key '" + key + "'");
      skip_blank();
      Value v = value();
      current->set(key, std::move(v));
      end_of_line();
    }
    return doc;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError(origin_ + ":" + std::to_string(line_) + ": " + msg);
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  void skip_blank() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
  }

  void skip_comment() {
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
  }

  std::string read_until(char stop) {
    std::string out;
    while (pos_ < text_.size() && text_[pos_] != stop && text_[pos_] != '\n') out += text_[pos_++];
    if (pos_ < text_.size() && text_[pos_] == '\n') fail(std::string("expected '") + stop + "'");
    return out;
  }

  void end_of_line() {
    skip_blank();
    if (pos_ < text_.size() && text_[pos_] == '#') skip_comment();
    if (pos_ < text_.size()) {
      if (text_[pos_] != '\n') fail("unexpected trailing characters");
      ++pos_;
      ++line_;
    }
  }

  Value value() {
    if (pos_ >= text_.size()) fail("missing value");
    const char c = text_[pos_];
    if (c == '"') return string_value();
    if (c == '[') return array_value();
    std::string tok;
    while (pos_ < text_.size() && text_[pos_] != ',' && text_[pos_] != ']' && text_[pos_] != '\n' &&
           text_[pos_] != '#' && text_[pos_] != ' ' && text_[pos_] != '\t' && text_[pos_] != '\r')
      tok += text_[pos_++];
    if (tok == "true") return Value(true);
    if (tok == "false") return Value(false);
    if (tok == "inf" || tok == "+inf") return Value(std::numeric_limits<double>::infinity());
    if (tok == "-inf") return Value(-std::numeric_limits<double>::infinity());
    if (tok == "nan") return Value(std::numeric_limits<double>::quiet_NaN());
    std::string digits;
    for (char d : tok)
      if (d != '_') digits += d;
    if (digits.empty()) fail("missing value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos;
    const char* b = digits.data();
    const char* e = b + digits.size();
    if (*b == '+') ++b;
    if (is_float) {
      double d = 0;
      auto [p, ec] = std::from_chars(b, e, d);
      if (ec != std::errc() || p != e) fail("bad float '" + tok + "'");
      return Value(d);
    }
    std::int64_t i = 0;
    auto [p, ec] = std::from_chars(b, e, i);
    if (ec != std::errc() || p != e) fail("bad value '" + tok + "'");
    return Value(i);
  }

  Value string_value() {
    ++pos_;
    std::string out;
    while (true) {
      if (pos_ >= text_.size() || text_[pos_] == '\n') fail("unterminated string");
      char c = text_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= text_.size()) fail("bad escape");
        const char e = text_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        continue;
      }
      out += c;
    }
    return Value(std::move(out));
  }

  Value array_value() {
    ++pos_;
    Array items;
    while (true) {
      skip_blank();
      if (pos_ >= text_.size() || text_[pos_] == '\n') fail("arrays must be on one line");
      if (text_[pos_] == ']') {
        ++pos_;
        break;
      }
      items.push_back(value());
      skip_blank();
      if (pos_ < text_.size() && text_[pos_] == ',') {
        ++pos_;
        continue;
      }
      skip_blank();
      if (pos_ < text_.size() && text_[pos_] == ']') {
        ++pos_;
        break;
      }
      fail("expected ',' or ']' in array");
    }
    return Value(std::move(items));
  }

  const std::string& text_;
  std::string origin_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace

// ---- Table ---------------------------------------------------------------------

void Table::set(const std::string& key, Value v) {
  if (!valid_key(key)) throw ValidationError("invalid config key '" + key + "'");
  for (auto& [k, val] : entries_)
    if (k == key) {
      val = std::move(v);
      return;
    }
  entries_.emplace_back(key, std::move(v));
}

bool Table::contains(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return true;
  return false;
}

const Value& Table::at(const std::string& key) const {
  for (const auto& e : entries_)
    if (e.first == key) return e.second;
  throw ValidationError("missing config key '" + where(*this, key) + "'");
}

void Table::erase(const std::string& key) {
  std::erase_if(entries_, [&](const auto& e) { return e.first == key; });
}

bool Table::get_bool(const std::string& key) const {
  const Value& v = at(key);
  if (!v.is_bool()) throw ValidationError("config key '" + where(*this, key) + "' must be a boolean");
  return std::get<bool>(v.data);
}

std::int64_t Table::get_int(const std::string& key) const {
  const Value& v = at(key);
  if (!v.is_int()) throw ValidationError("config key '" + where(*this, key) + "' must be an integer");
  return std::get<std::int64_t>(v.data);
}

double Table::get_double(const std::string& key) const {
  const Value& v = at(key);
  if (v.is_int()) return static_cast<double>(std::get<std::int64_t>(v.data));
  if (!v.is_double()) throw ValidationError("config key '" + where(*this, key) + "' must be a number");
  return std::get<double>(v.data);
}

std::string Table::get_string(const std::string& key) const {
  const Value& v = at(key);
  if (!v.is_string()) throw ValidationError("config key '" + where(*this, key) + "' must be a string");
  return std::get<std::string>(v.data);
}

std::vector<double> Table::get_doubles(const std::string& key) const {
  const Value& v = at(key);
  if (!v.is_array()) throw ValidationError("config key '" + where(*this, key) + "' must be an array");
  std::vector<double> out;
  for (const auto& item : std::get<Array>(v.data)) {
    if (item.is_int())
      out.push_back(static_cast<double>(std::get<std::int64_t>(item.data)));
    else if (item.is_double())
      out.push_back(std::get<double>(item.data));
    else
      throw ValidationError("config key '" + where(*this, key) + "' must hold numbers");
  }
  return out;
}

std::vector<std::int64_t> Table::get_ints(const std::string& key) const {
  const Value& v = at(key);
  if (!v.is_array()) throw ValidationError("config key '" + where(*this, key) + "' must be an array");
  std::vector<std::int64_t> out;
  for (const auto& item : std::get<Array>(v.data)) {
    if (!item.is_int()) throw ValidationError("config key '" + where(*this, key) + "' must hold integers");
    out.push_back(std::get<std::int64_t>(item.data));
  }
  return out;
}

bool Table::get_or(const std::string& key, bool fallback) const { return contains(key) ? get_bool(key) : fallback; }
std::int64_t Table::get_or(const std::string& key, std::int64_t fallback) const {
  return contains(key) ? get_int(key) : fallback;
}
int Table::get_or(const std::string& key, int fallback) const {
  return contains(key) ? static_cast<int>(get_int(key)) : fallback;
}
double Table::get_or(const std::string& key, double fallback) const {
  return contains(key) ? get_double(key) : fallback;
}
std::string Table::get_or(const std::string& key, const std::string& fallback) const {
  return contains(key) ? get_string(key) : fallback;
}
std::string Table::get_or(const std::string& key, const char* fallback) const {
  return contains(key) ? get_string(key) : std::string(fallback);
}

// ---- Document ------------------------------------------------------------------

Table& Document::table(const std::string& name) {
  for (auto& [n, t] : sections_)
    if (n == name) return t;
  if (!valid_key(name)) throw ValidationError("invalid section name '" + name + "'");
  sections_.emplace_back(name, Table{});
  sections_.back().second.context = name;
  return sections_.back().second;
}

const Table* Document::find(const std::string& name) const {
  for (const auto& [n, t] : sections_)
    if (n == name) return &t;
  return nullptr;
}

const Table& Document::section(const std::string& name) const {
  static const Table empty;
  const Table* t = find(name);
  return t != nullptr ? *t : empty;
}

std::vector<std::string> Document::section_names() const {
  std::vector<std::string> out;
  for (const auto& s : sections_) out.push_back(s.first);
  return out;
}

Document Document::parse(const std::string& text, const std::string& origin) { return Parser(text, origin).run(); }

Document Document::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_value(const Value& v) {
  if (v.is_bool()) return std::get<bool>(v.data) ? "true" : "false";
  if (v.is_int()) return std::to_string(std::get<std::int64_t>(v.data));
  if (v.is_double()) return format_double(std::get<double>(v.data));
  if (v.is_string()) {
    std::string out = "\"";
    for (char c : std::get<std::string>(v.data)) {
      switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default: out += c;
      }
    }
    return out + "\"";
  }
  std::string out = "[";
  const auto& arr = std::get<Array>(v.data);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (i) out += ", ";
    out += format_value(arr[i]);
  }
  return out + "]";
}

void Document::write(std::ostream& os) const {
  for (const auto& [k, v] : root_.entries()) os << k << " = " << format_value(v) << "\n";
  bool first = root_.empty();
  for (const auto& [name, t] : sections_) {
    if (!first) os << "\n";
    first = false;
    os << "[" << name << "]\n";
    for (const auto& [k, v] : t.entries()) os << k << " = " << format_value(v) << "\n";
  }
}

std::string Document::str() const {
  std::ostringstream os;
  write(os);
  return os.str();
}

void Document::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  write(out);
}

}  // namespace ganflow::toml
