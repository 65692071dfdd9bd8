#include "dacdm/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dacdm/data.hpp"
#include "dacdm/error.hpp"

namespace dacdm {

// ---------------------------------------------------------------- KeyValues

void KeyValues::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KeyValues::set(const std::string& key, double value) { set(key, format_double(value)); }
void KeyValues::set(const std::string& key, int value) { set(key, std::to_string(value)); }
void KeyValues::set(const std::string& key, std::uint64_t value) { set(key, std::to_string(value)); }

bool KeyValues::has(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> KeyValues::find(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& KeyValues::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw ConfigError("missing key '" + key + "'");
}

double KeyValues::get_double(const std::string& key) const {
  const auto& s = get(key);
  double out = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("key '" + key + "' is not a number: " + s);
  return out;
}

int KeyValues::get_int(const std::string& key) const {
  const auto& s = get(key);
  int out = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("key '" + key + "' is not an integer: " + s);
  return out;
}

void KeyValues::merge(const KeyValues& other, const std::string& prefix) {
  for (const auto& [k, v] : other.entries_) set(prefix + k, v);
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValues KeyValues::parse(std::istream& in) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("empty key", line_no);
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse(in);
}

void KeyValues::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << to_text();
}

// --------------------------------------------------------------- Checkpoint

const Mlp& Checkpoint::network(const std::string& name) const {
  for (const auto& [n, net] : networks)
    if (n == name) return net;
  throw ParseError("checkpoint has no network '" + name + "'", 0);
}

const Matrix& Checkpoint::matrix(const std::string& name) const {
  for (const auto& [n, m] : matrices)
    if (n == name) return m;
  throw ParseError("checkpoint has no matrix '" + name + "'", 0);
}

namespace {

void write_values(std::ostream& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) out << (i == 0 ? "" : " ") << format_double(values[i]);
  out << '\n';
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw ParseError("unexpected end of checkpoint", 0);
    return w;
  }
  std::size_t size() {
    const std::string w = word();
    std::size_t v = 0;
    auto res = std::from_chars(w.data(), w.data() + w.size(), v);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size()) throw ParseError("expected a size, got '" + w + "'", 0);
    return v;
  }
  double number() {
    const std::string w = word();
    double v = 0.0;
    auto res = std::from_chars(w.data(), w.data() + w.size(), v);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size()) throw ParseError("expected a number, got '" + w + "'", 0);
    return v;
  }
  void expect(const std::string& token) {
    const std::string w = word();
    if (w != token) throw ParseError("expected '" + token + "', got '" + w + "'", 0);
  }
  std::string rest_of_line() {
    std::string line;
    std::getline(in_, line);
    if (!line.empty() && line.front() == ' ') line.erase(0, 1);
    return line;
  }

 private:
  std::istream& in_;
};

}  // namespace

void Checkpoint::write(std::ostream& out) const {
  out << "dacdm-checkpoint " << kVersion << '\n';
  out << "kind " << kind << '\n';
  out << "meta " << meta.entries().size() << '\n';
  for (const auto& [k, v] : meta.entries()) out << k << ' ' << v << '\n';
  out << "networks " << networks.size() << '\n';
  for (const auto& [name, net] : networks) {
    out << "mlp " << name << ' ' << net.num_layers() << '\n';
    for (const auto& layer : net.layers()) {
      out << "layer " << layer.out() << ' ' << layer.in() << '\n';
      write_values(out, layer.weight.data());
      write_values(out, layer.bias);
    }
  }
  out << "matrices " << matrices.size() << '\n';
  for (const auto& [name, m] : matrices) {
    out << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    write_values(out, m.data());
  }
  out << "end\n";
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write(out);
}

Checkpoint Checkpoint::read(std::istream& in) {
  TokenReader r(in);
  Checkpoint ck;
  r.expect("dacdm-checkpoint");
  const std::size_t version = r.size();
  if (version != static_cast<std::size_t>(kVersion)) throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
  r.expect("kind");
  ck.kind = r.word();
  r.expect("meta");
  const std::size_t n_meta = r.size();
  r.rest_of_line();
  for (std::size_t i = 0; i < n_meta; ++i) {
    const std::string key = r.word();
    ck.meta.set(key, r.rest_of_line());
  }
  r.expect("networks");
  const std::size_t n_nets = r.size();
  for (std::size_t i = 0; i < n_nets; ++i) {
    r.expect("mlp");
    const std::string name = r.word();
    const std::size_t n_layers = r.size();
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l < n_layers; ++l) {
      r.expect("layer");
      const std::size_t rows = r.size(), cols = r.size();
      DenseLayer layer{Matrix(rows, cols), Vec(rows)};
      for (auto& w : layer.weight.data()) w = r.number();
      for (auto& b : layer.bias) b = r.number();
      layers.push_back(std::move(layer));
    }
    ck.networks.emplace_back(name, Mlp(std::move(layers)));
  }
  r.expect("matrices");
  const std::size_t n_mats = r.size();
  for (std::size_t i = 0; i < n_mats; ++i) {
    r.expect("matrix");
    const std::string name = r.word();
    const std::size_t rows = r.size(), cols = r.size();
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = r.number();
    ck.matrices.emplace_back(name, std::move(m));
  }
  r.expect("end");
  return ck;
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return read(in);
}

}  // namespace dacdm
