#ifndef BRACE_CONFIG_HPP_
#define BRACE_CONFIG_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace brace {

// Flat key/value configuration with optional [section] headers. Keys are
// addressed as "section.key"; keys before any header live at top level.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::optional<std::string> raw(const std::string& key) const;

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Canonical text form: sorted sections and keys.
  std::string to_string() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
};

}  // namespace brace

#endif  // BRACE_CONFIG_HPP_
