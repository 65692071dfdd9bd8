#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dacdm/tensor.hpp"

namespace dacdm {

/// Insertion-ordered `key=value` store used for configs, manifests and checkpoint metadata.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, int value);
  void set(const std::string& key, std::uint64_t value);
  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
  /// Copies every entry of `other` under `prefix`.
  void merge(const KeyValues& other, const std::string& prefix = "");

  /// One `key=value` per line.
  std::string to_text() const;
  /// Accepts `key=value` or `key = value`; `#` starts a comment; blank lines skipped.
  static KeyValues parse(std::istream& in);
  static KeyValues parse_text(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  bool operator==(const KeyValues&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Versioned model checkpoint: metadata, named networks and named matrices,
/// stored as text with exactly round-tripping doubles.
struct Checkpoint {
  static constexpr int kVersion = 1;

  std::string kind;
  KeyValues meta;
  std::vector<std::pair<std::string, Mlp>> networks;
  std::vector<std::pair<std::string, Matrix>> matrices;

  const Mlp& network(const std::string& name) const;
  const Matrix& matrix(const std::string& name) const;

  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static Checkpoint read(std::istream& in);
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace dacdm
