// SPDX-License-Identifier: Apache-2.0
#include "dssm/nets.hpp"

namespace dssm {

Mat uniform_init(Index rows, Index cols, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
  return m;
}

Mlp::Mlp(ParamStore& params, const std::string& prefix, std::vector<Index> sizes, RngStream& rng)
    : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ConfigError("Mlp '" + prefix + "' needs at least in/out sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    weights_.push_back(params.add(base + ".W", uniform_init(sizes_[l + 1], sizes_[l], rng)));
    biases_.push_back(params.add(base + ".b", Mat::Zero(sizes_[l + 1], 1)));
  }
}

Mlp::Mlp(const ParamStore& params, const std::string& prefix, std::vector<Index> sizes)
    : sizes_(std::move(sizes)) {
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    weights_.push_back(params.id(base + ".W"));
    biases_.push_back(params.id(base + ".b"));
    const Mat& W = params.value(weights_.back());
    if (W.rows() != sizes_[l + 1] || W.cols() != sizes_[l])
      throw ShapeError("Mlp '" + prefix + "': stored weight shape disagrees with architecture");
  }
}

Var Mlp::operator()(Tape& tape, Var x) const {
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = affine(tape.param(weights_[l]), h, tape.param(biases_[l]));
    if (l + 1 < weights_.size()) h = tanh(h);
  }
  return h;
}

// ---------------------------------------------------------------------------

GruParams GruParams::create(ParamStore& params, const std::string& prefix, Index input_dim,
                            Index hidden_dim, RngStream& rng) {
  GruParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.Wr = params.add(prefix + ".W_r", uniform_init(hidden_dim, input_dim, rng));
  p.Wz = params.add(prefix + ".W_z", uniform_init(hidden_dim, input_dim, rng));
  p.Wn = params.add(prefix + ".W_n", uniform_init(hidden_dim, input_dim, rng));
  p.Ur = params.add(prefix + ".U_r", uniform_init(hidden_dim, hidden_dim, rng));
  p.Uz = params.add(prefix + ".U_z", uniform_init(hidden_dim, hidden_dim, rng));
  p.Un = params.add(prefix + ".U_n", uniform_init(hidden_dim, hidden_dim, rng));
  p.br = params.add(prefix + ".b_r", Mat::Zero(hidden_dim, 1));
  p.bz = params.add(prefix + ".b_z", Mat::Zero(hidden_dim, 1));
  p.bn = params.add(prefix + ".b_n", Mat::Zero(hidden_dim, 1));
  return p;
}

GruParams GruParams::bind(const ParamStore& params, const std::string& prefix) {
  GruParams p;
  p.Wr = params.id(prefix + ".W_r");
  p.Wz = params.id(prefix + ".W_z");
  p.Wn = params.id(prefix + ".W_n");
  p.Ur = params.id(prefix + ".U_r");
  p.Uz = params.id(prefix + ".U_z");
  p.Un = params.id(prefix + ".U_n");
  p.br = params.id(prefix + ".b_r");
  p.bz = params.id(prefix + ".b_z");
  p.bn = params.id(prefix + ".b_n");
  p.hidden_dim = params.value(p.Wr).rows();
  p.input_dim = params.value(p.Wr).cols();
  return p;
}

Var gru_step(Tape& tape, const GruParams& p, Var x, Var h) {
  if (x.rows() != p.input_dim || h.rows() != p.hidden_dim)
    throw ShapeError("gru_step: input " + std::to_string(x.rows()) + "/" +
                     std::to_string(p.input_dim) + ", hidden " + std::to_string(h.rows()) + "/" +
                     std::to_string(p.hidden_dim));
  Var r = sigmoid(affine(tape.param(p.Wr), x, tape.param(p.br)) + matvec(tape.param(p.Ur), h));
  Var z = sigmoid(affine(tape.param(p.Wz), x, tape.param(p.bz)) + matvec(tape.param(p.Uz), h));
  Var n = tanh(affine(tape.param(p.Wn), x, tape.param(p.bn)) + r * matvec(tape.param(p.Un), h));
  // (1 - z)*n + z*h = n + z*(h - n)
  return n + z * (h - n);
}

// ---------------------------------------------------------------------------

ObservationParams ObservationParams::create(ParamStore& params, const std::string& prefix,
                                            Index symbols, Index state_dim, Index embedding_dim,
                                            bool tie_embeddings, RngStream& rng) {
  if (tie_embeddings && state_dim != embedding_dim)
    throw ConfigError("tie_embeddings requires the state and embedding dimensions to agree");
  ObservationParams p;
  p.symbols = symbols;
  p.state_dim = state_dim;
  p.embedding_dim = embedding_dim;
  p.tie_embeddings = tie_embeddings;
  p.embedding = params.add(prefix + ".embedding", uniform_init(symbols, embedding_dim, rng));
  if (!tie_embeddings)
    p.projection = params.add(prefix + ".projection", uniform_init(symbols, state_dim, rng));
  p.bias = params.add(prefix + ".bias", Mat::Zero(symbols, 1));
  return p;
}

ObservationParams ObservationParams::bind(const ParamStore& params, const std::string& prefix,
                                          bool tie_embeddings) {
  ObservationParams p;
  p.tie_embeddings = tie_embeddings;
  p.embedding = params.id(prefix + ".embedding");
  p.bias = params.id(prefix + ".bias");
  p.symbols = params.value(p.embedding).rows();
  p.embedding_dim = params.value(p.embedding).cols();
  if (tie_embeddings) {
    p.state_dim = p.embedding_dim;
  } else {
    p.projection = params.id(prefix + ".projection");
    p.state_dim = params.value(p.projection).cols();
  }
  return p;
}

Var observation_logits(Tape& tape, const ObservationParams& p, Var h) {
  const ParamId W = p.tie_embeddings ? p.embedding : p.projection;
  return affine(tape.param(W), h, tape.param(p.bias));
}

Var observation_logprob(Tape& tape, const ObservationParams& p, Var h, int w) {
  if (w < 0 || w >= p.symbols)
    throw ShapeError("observation_logprob: unknown symbol id " + std::to_string(w));
  return log_softmax_at(observation_logits(tape, p, h), w);
}

Var embed(Tape& tape, const ObservationParams& p, int w) {
  if (w < 0 || w >= p.symbols) throw ShapeError("embed: unknown symbol id " + std::to_string(w));
  return row(tape.param(p.embedding), w);
}

Vec observation_log_probs(const ParamStore& params, const ObservationParams& p, const Vec& h) {
  const Mat& W = params.value(p.tie_embeddings ? p.embedding : p.projection);
  Vec logits = W * h;
  logits += params.value(p.bias).col(0);
  return log_softmax(logits);
}

// ---------------------------------------------------------------------------

ProposalParams ProposalParams::create(ParamStore& params, const std::string& prefix,
                                      Index cond_dim, Index state_dim, Index hidden,
                                      RngStream& rng) {
  ProposalParams p;
  p.state_dim = state_dim;
  p.net = Mlp(params, prefix, {cond_dim, hidden, 2 * state_dim}, rng);
  return p;
}

ProposalParams ProposalParams::bind(const ParamStore& params, const std::string& prefix,
                                    Index cond_dim, Index state_dim, Index hidden) {
  ProposalParams p;
  p.state_dim = state_dim;
  p.net = Mlp(params, prefix, {cond_dim, hidden, 2 * state_dim});
  return p;
}

GaussianSample propose_gaussian(Tape& tape, const ProposalParams& p, Var cond, const Vec& eps) {
  const Index d = p.state_dim;
  if (eps.size() != d) throw ShapeError("propose_gaussian: noise dimension mismatch");
  Var out = p.net(tape, cond);
  Var mu = slice(out, 0, d);
  Var log_var = clamp(slice(out, d, d), kLogVarMin, kLogVarMax);
  Var sigma = exp(0.5 * log_var);
  Var xi = mu + sigma * tape.constant(eps);
  Var log_q = gaussian_logpdf(xi, mu, sigma);
  return {xi, log_q, mu, sigma};
}

GaussianSample propose_gaussian(Tape& tape, const ProposalParams& p, Var cond, RngStream& rng) {
  return propose_gaussian(tape, p, cond, rng.normal(p.state_dim));
}

}  // namespace dssm
