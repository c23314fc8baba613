// SPDX-License-Identifier: Apache-2.0
#include "dssm/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dssm {

namespace {

void put_double(std::ostream& os, double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  os << buf;
}

void put_matrix(std::ostream& os, const std::string& tag, const std::string& name, const Mat& m) {
  os << tag << ' ' << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) os << ' ';
      put_double(os, m(r, c));
    }
    os << '\n';
  }
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::string line() {
    std::string s;
    if (!std::getline(is_, s)) fail("unexpected end of file");
    ++lineno_;
    return s;
  }

  // Reads a line and splits off its first word, which must equal tag.
  std::string expect(const std::string& tag) {
    std::string s = line();
    if (s.compare(0, tag.size(), tag) != 0 || (s.size() > tag.size() && s[tag.size()] != ' '))
      fail("expected '" + tag + "'");
    return s.size() > tag.size() ? s.substr(tag.size() + 1) : std::string();
  }

  double number(const std::string& tok) {
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (tok.empty() || *end != '\0') fail("bad number '" + tok + "'");
    return x;
  }

  long integer(const std::string& tok) {
    char* end = nullptr;
    const long x = std::strtol(tok.c_str(), &end, 10);
    if (tok.empty() || *end != '\0') fail("bad integer '" + tok + "'");
    return x;
  }

  std::pair<std::string, Mat> matrix(const std::string& tag) {
    std::istringstream head(expect(tag));
    std::string name;
    long rows = -1, cols = -1;
    head >> name >> rows >> cols;
    if (!head || rows < 0 || cols < 0) fail("malformed " + tag + " header");
    Mat m(rows, cols);
    for (long r = 0; r < rows; ++r) {
      std::istringstream row(line());
      std::string tok;
      for (long c = 0; c < cols; ++c) {
        if (!(row >> tok)) fail("short row in " + name);
        m(r, c) = number(tok);
      }
      if (row >> tok) fail("long row in " + name);
    }
    return {name, m};
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("checkpoint line " + std::to_string(lineno_) + ": " + what);
  }

 private:
  std::istream& is_;
  std::size_t lineno_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os << "dssm-checkpoint " << kCheckpointVersion << '\n';
  const std::string cfg = format_config(ckpt.config);
  const auto n_cfg = std::count(cfg.begin(), cfg.end(), '\n');
  os << "config " << n_cfg << '\n' << cfg;
  os << "alphabet " << ckpt.config.alphabet << '\n';
  os << "epoch " << ckpt.epoch << '\n';
  os << "step " << ckpt.adam.step << '\n';
  const auto& ps = ckpt.params;
  for (std::size_t i = 0; i < ps.size(); ++i)
    put_matrix(os, "param", ps.name(ParamId{static_cast<int>(i)}), ps.values()[i]);
  const auto& a = ckpt.adam;
  os << "adam " << a.step << ' ';
  put_double(os, a.config.lr);
  os << ' ';
  put_double(os, a.config.beta1);
  os << ' ';
  put_double(os, a.config.beta2);
  os << ' ';
  put_double(os, a.config.eps);
  os << '\n';
  if (a.m.size() != ps.size() || a.v.size() != ps.size())
    throw ShapeError("checkpoint: optimizer state does not match the parameters");
  for (std::size_t i = 0; i < ps.size(); ++i)
    put_matrix(os, "adam.m", ps.name(ParamId{static_cast<int>(i)}), a.m[i]);
  for (std::size_t i = 0; i < ps.size(); ++i)
    put_matrix(os, "adam.v", ps.name(ParamId{static_cast<int>(i)}), a.v[i]);
  for (const auto& [label, state] : ckpt.rng) os << "rng " << label << ' ' << state << '\n';
  os << "end\n";
}

Checkpoint read_checkpoint(std::istream& is) {
  Reader r(is);
  Checkpoint ck;
  const long version = r.integer(r.expect("dssm-checkpoint"));
  if (version != kCheckpointVersion)
    r.fail("unsupported checkpoint version " + std::to_string(version));
  const long n_cfg = r.integer(r.expect("config"));
  std::string cfg_text;
  for (long i = 0; i < n_cfg; ++i) cfg_text += r.line() + "\n";
  ck.config = parse_config_text(cfg_text);
  if (r.expect("alphabet") != ck.config.alphabet) r.fail("alphabet differs from the config echo");
  ck.epoch = static_cast<int>(r.integer(r.expect("epoch")));
  const long step = r.integer(r.expect("step"));

  std::string s = r.line();
  while (s.rfind("param ", 0) == 0) {
    std::istringstream head(s.substr(6));
    std::string name;
    long rows = -1, cols = -1;
    head >> name >> rows >> cols;
    if (!head || rows < 0 || cols < 0) r.fail("malformed param header");
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i) {
      std::istringstream row(r.line());
      std::string tok;
      for (long c = 0; c < cols; ++c) {
        if (!(row >> tok)) r.fail("short row in " + name);
        m(i, c) = r.number(tok);
      }
    }
    ck.params.add(name, std::move(m));
    s = r.line();
  }

  std::istringstream adam(s);
  std::string tag, tok;
  adam >> tag;
  if (tag != "adam") r.fail("expected 'adam'");
  adam >> tok;
  ck.adam.step = r.integer(tok);
  if (ck.adam.step != step) r.fail("step counter disagrees with optimizer state");
  double* hp[] = {&ck.adam.config.lr, &ck.adam.config.beta1, &ck.adam.config.beta2,
                  &ck.adam.config.eps};
  for (double* p : hp) {
    if (!(adam >> tok)) r.fail("short adam line");
    *p = r.number(tok);
  }
  for (const char* which : {"adam.m", "adam.v"}) {
    auto& dst = std::string(which) == "adam.m" ? ck.adam.m : ck.adam.v;
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      auto [name, m] = r.matrix(which);
      const ParamId id{static_cast<int>(i)};
      if (name != ck.params.name(id) || m.rows() != ck.params.value(id).rows() ||
          m.cols() != ck.params.value(id).cols())
        r.fail(std::string(which) + " entry does not match parameter " + ck.params.name(id));
      dst.push_back(std::move(m));
    }
  }
  for (s = r.line(); s != "end"; s = r.line()) {
    if (s.rfind("rng ", 0) != 0) r.fail("expected 'rng' or 'end'");
    const auto sp = s.find(' ', 4);
    if (sp == std::string::npos) r.fail("malformed rng line");
    ck.rng.emplace_back(s.substr(4, sp - 4), s.substr(sp + 1));
  }
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // Write to a sibling file first so an interrupted save never clobbers the
  // previous checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    write_checkpoint(os, ckpt);
    if (!os) throw std::runtime_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw std::runtime_error("cannot rename to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace dssm
