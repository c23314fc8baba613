// SPDX-License-Identifier: Apache-2.0
#include "dssm/flows.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace dssm {

std::string_view to_string(FlowKind kind) {
  switch (kind) {
    case FlowKind::Id: return "id";
    case FlowKind::Diag: return "diag";
    case FlowKind::Tril: return "tril";
    case FlowKind::Nvp: return "nvp";
    case FlowKind::Chain: return "chain";
  }
  return "?";
}

std::vector<Index> FlowDef::mlp_hidden() const {
  if (!hidden.empty()) return hidden;
  return {4 * dim, 4 * dim};
}

void FlowDef::validate() const {
  if (dim < 1) throw ConfigError("flow: state dimension must be >= 1");
  if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("flow: delta must lie in (0, 0.5)");
  if (kind == FlowKind::Nvp && !(mask >= 1 && mask < dim))
    throw ConfigError("flow: NVP mask must satisfy 1 <= m < d (m=" + std::to_string(mask) +
                      ", d=" + std::to_string(dim) + ")");
  if (kind == FlowKind::Chain) {
    if (components.empty()) throw ConfigError("flow: empty chain");
    for (const auto& c : components) {
      if (c.dim != dim) throw ConfigError("flow: chain components must share the state dimension");
      c.validate();
    }
  }
}

namespace {

std::string lower(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c)))
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

FlowDef parse_atom(std::string_view tok, Index dim, double delta) {
  FlowDef f;
  f.dim = dim;
  f.delta = delta;
  if (tok == "id") {
    f.kind = FlowKind::Id;
  } else if (tok == "diag") {
    f.kind = FlowKind::Diag;
  } else if (tok == "tril") {
    f.kind = FlowKind::Tril;
  } else if (tok.starts_with("nvp")) {
    f.kind = FlowKind::Nvp;
    const auto digits = tok.substr(3);
    Index m = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), m);
    if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size())
      throw ConfigError("flow: malformed NVP component '" + std::string(tok) + "'");
    f.mask = m;
  } else {
    throw ConfigError("flow: unknown component '" + std::string(tok) + "'");
  }
  return f;
}

}  // namespace

FlowDef FlowDef::parse(std::string_view spec_text, Index dim, double delta) {
  const std::string text = lower(spec_text);
  if (text.empty()) throw ConfigError("flow: empty specification");
  std::vector<FlowDef> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('+', pos), text.size());
    std::string_view tok(text.data() + pos, end - pos);
    if (tok.empty()) throw ConfigError("flow: empty component in '" + text + "'");
    int repeat = 1;
    if (const auto x = tok.find('x'); x != std::string_view::npos && x > 0 &&
                                      std::all_of(tok.begin(), tok.begin() + x, ::isdigit)) {
      repeat = std::stoi(std::string(tok.substr(0, x)));
      tok = tok.substr(x + 1);
      if (repeat < 1) throw ConfigError("flow: repeat count must be positive");
    }
    for (int r = 0; r < repeat; ++r) parts.push_back(parse_atom(tok, dim, delta));
    pos = end + 1;
  }
  FlowDef out;
  if (parts.size() == 1) {
    out = parts.front();
  } else {
    out.kind = FlowKind::Chain;
    out.dim = dim;
    out.delta = delta;
    out.components = std::move(parts);
  }
  out.validate();
  return out;
}

std::string FlowDef::spec() const {
  auto atom = [](const FlowDef& f) {
    if (f.kind == FlowKind::Nvp) return "nvp" + std::to_string(f.mask);
    return std::string(to_string(f.kind));
  };
  if (kind != FlowKind::Chain) return atom(*this);
  std::string out;
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (i) out += '+';
    out += atom(components[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

Flow::Flow(FlowDef def, ParamStore& params, const std::string& prefix, RngStream& rng)
    : def_(std::move(def)) {
  def_.validate();
  build(&params, params, prefix, &rng);
}

Flow::Flow(FlowDef def, const ParamStore& params, const std::string& prefix)
    : def_(std::move(def)) {
  def_.validate();
  build(nullptr, params, prefix, nullptr);
}

void Flow::build(ParamStore* params, const ParamStore& view, const std::string& prefix,
                 RngStream* rng) {
  const Index d = def_.dim;
  auto make = [&](const std::string& name, std::vector<Index> sizes) {
    return params ? Mlp(*params, prefix + name, std::move(sizes), *rng)
                  : Mlp(view, prefix + name, std::move(sizes));
  };
  auto sizes = [](Index in, const std::vector<Index>& hidden, Index out) {
    std::vector<Index> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
  };
  switch (def_.kind) {
    case FlowKind::Id:
      break;
    case FlowKind::Diag:
    case FlowKind::Tril: {
      const Index g_out = def_.kind == FlowKind::Diag ? d : tril_size(d);
      shift_ = make(".g", sizes(d, def_.mlp_hidden(), d));
      scale_ = make(".G", sizes(d, def_.mlp_hidden(), g_out));
      if (params) {
        // Diagonal entries start at 1 so the initial map is well conditioned.
        Mat& b = params->value(scale_.bias(scale_.layers() - 1));
        b.topRows(d).setOnes();
      }
      break;
    }
    case FlowKind::Nvp: {
      const Index m = def_.mask;
      const Index cond = (d - m) + d;
      scale_ = make(".s", sizes(cond, def_.nvp_hidden, m));
      shift_ = make(".t", sizes(cond, def_.nvp_hidden, m));
      break;
    }
    case FlowKind::Chain:
      for (std::size_t i = 0; i < def_.components.size(); ++i) {
        FlowDef c = def_.components[i];
        c.inverse_parametrized = false;
        const std::string p = prefix + ".c" + std::to_string(i);
        if (params)
          components_.emplace_back(std::move(c), *params, p, *rng);
        else
          components_.emplace_back(std::move(c), view, p);
      }
      break;
  }
}

FlowStepVar Flow::direct(Tape& tape, Var h_prev, Var x) const {
  const Index d = def_.dim;
  if (h_prev.rows() != d || x.rows() != d)
    throw ShapeError("flow " + def_.spec() + ": expected dimension " + std::to_string(d));
  switch (def_.kind) {
    case FlowKind::Id:
      return {h_prev + x, tape.constant(0.0)};
    case FlowKind::Diag: {
      Var D = clip_diagonal(scale_(tape, h_prev), def_.delta);
      return {shift_(tape, h_prev) + D * x, sum(log_abs(D))};
    }
    case FlowKind::Tril: {
      Var raw = scale_(tape, h_prev);
      Var diag = clip_diagonal(slice(raw, 0, d), def_.delta);
      Var off = slice(raw, d, d * (d - 1) / 2);
      return {shift_(tape, h_prev) + tril_matvec(diag, off, x), sum(log_abs(diag))};
    }
    case FlowKind::Nvp: {
      const Index m = def_.mask;
      Var active = slice(x, 0, m);
      Var passive = slice(x, m, d - m);
      Var cond = concat({passive, h_prev});
      Var s = tanh(scale_(tape, cond));
      Var t = shift_(tape, cond);
      return {concat({active * exp(s) + t, passive}), sum(s)};
    }
    case FlowKind::Chain: {
      Var cur = x;
      std::vector<Var> logdets;
      for (const auto& c : components_) {
        auto step = c.direct(tape, h_prev, cur);
        cur = step.out;
        logdets.push_back(step.logdet);
      }
      return {cur, add_n(logdets)};
    }
  }
  throw std::logic_error("unreachable flow kind");
}

FlowStepVar Flow::solve(Tape& tape, Var h_prev, Var y) const {
  const Index d = def_.dim;
  if (h_prev.rows() != d || y.rows() != d)
    throw ShapeError("flow " + def_.spec() + ": expected dimension " + std::to_string(d));
  switch (def_.kind) {
    case FlowKind::Id:
      return {y - h_prev, tape.constant(0.0)};
    case FlowKind::Diag: {
      Var D = clip_diagonal(scale_(tape, h_prev), def_.delta);
      return {(y - shift_(tape, h_prev)) / D, sum(log_abs(D))};
    }
    case FlowKind::Tril: {
      Var raw = scale_(tape, h_prev);
      Var diag = clip_diagonal(slice(raw, 0, d), def_.delta);
      Var off = slice(raw, d, d * (d - 1) / 2);
      return {tril_solve(diag, off, y - shift_(tape, h_prev)), sum(log_abs(diag))};
    }
    case FlowKind::Nvp: {
      const Index m = def_.mask;
      Var active = slice(y, 0, m);
      Var passive = slice(y, m, d - m);
      Var cond = concat({passive, h_prev});
      Var s = tanh(scale_(tape, cond));
      Var t = shift_(tape, cond);
      return {concat({(active - t) * exp(-s), passive}), sum(s)};
    }
    case FlowKind::Chain: {
      Var cur = y;
      std::vector<Var> logdets;
      for (auto it = components_.rbegin(); it != components_.rend(); ++it) {
        auto step = it->solve(tape, h_prev, cur);
        cur = step.out;
        logdets.push_back(step.logdet);
      }
      return {cur, add_n(logdets)};
    }
  }
  throw std::logic_error("unreachable flow kind");
}

FlowStepVar Flow::forward(Tape& tape, Var h_prev, Var xi) const {
  FlowStepVar r;
  if (def_.inverse_parametrized) {
    r = solve(tape, h_prev, xi);
    r.logdet = -r.logdet;
  } else {
    r = direct(tape, h_prev, xi);
  }
  if (!r.out.value().allFinite() || !std::isfinite(r.logdet.scalar()))
    throw NumericError("flow " + def_.spec() + ": non-finite forward output");
  return r;
}

FlowStepVar Flow::inverse(Tape& tape, Var h_prev, Var h) const {
  FlowStepVar r;
  if (def_.inverse_parametrized) {
    r = direct(tape, h_prev, h);
    r.logdet = -r.logdet;
  } else {
    r = solve(tape, h_prev, h);
  }
  if (!r.out.value().allFinite() || !std::isfinite(r.logdet.scalar()))
    throw NumericError("flow " + def_.spec() + ": non-finite inverse output");
  return r;
}

FlowStep Flow::forward(const ParamStore& params, const Vec& h_prev, const Vec& xi) const {
  Tape tape(&params, false);
  auto r = forward(tape, tape.constant(h_prev), tape.constant(xi));
  return {r.out.value().col(0), r.logdet.scalar()};
}

FlowStep Flow::inverse(const ParamStore& params, const Vec& h_prev, const Vec& h) const {
  Tape tape(&params, false);
  auto r = inverse(tape, tape.constant(h_prev), tape.constant(h));
  return {r.out.value().col(0), r.logdet.scalar()};
}

}  // namespace dssm
