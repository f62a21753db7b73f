#include "csched/nn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "csched/error.hpp"

namespace csched::nn {

const ParamSlot& ParamLayout::add(std::string name, int rows, int cols) {
  for (const auto& s : slots_) {
    if (s.name == name) throw ArgumentError("duplicate parameter block " + name);
  }
  slots_.push_back(ParamSlot{std::move(name), size_, rows, cols});
  size_ += slots_.back().size();
  return slots_.back();
}

const ParamSlot& ParamLayout::at(const std::string& name) const {
  for (const auto& s : slots_) {
    if (s.name == name) return s;
  }
  throw ArgumentError("no parameter block " + name);
}

std::string ParamLayout::describe() const {
  std::ostringstream os;
  for (std::size_t k = 0; k < slots_.size(); ++k) {
    if (k) os << ',';
    os << slots_[k].name << ':' << slots_[k].rows << 'x' << slots_[k].cols;
  }
  return os.str();
}

ParamStore::ParamStore(ParamLayout l)
    : layout(std::move(l)),
      values(layout.size(), 0.0),
      grads(layout.size(), 0.0),
      first_moment(layout.size(), 0.0),
      second_moment(layout.size(), 0.0) {}

void ParamStore::zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

ConstMap view(const Buffer& buf, const ParamSlot& s) {
  return ConstMap(buf.data() + s.offset, s.rows, s.cols);
}

MutMap view(Buffer& buf, const ParamSlot& s) { return MutMap(buf.data() + s.offset, s.rows, s.cols); }

Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

// Eigen only vectorizes exp for doubles, so tanh goes through it.
template <typename Derived>
Matrix tanh_of(const Eigen::MatrixBase<Derived>& x) {
  return (1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0)).matrix();
}

double normal(Rng& rng) {
  // Box-Muller on the portable uniform.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void uniform_fill(MutMap m, double bound, Rng& rng) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = bound * (2.0 * uniform01(rng) - 1.0);
}

void orthogonal_fill(MutMap m, Rng& rng) {
  Matrix g(m.rows(), m.cols());
  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  // Sign fix so the result is uniformly distributed.
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < std::min(q.cols(), r.rows()); ++c) {
    if (r(c, c) < 0) q.col(c) *= -1.0;
  }
  m = q;
}

}  // namespace

RecurrentNet::RecurrentNet(NetShape shape) : shape_(shape) {
  if (shape.input < 1 || shape.dense < 1 || shape.hidden < 1 || shape.output < 1) {
    throw ArgumentError("network dimensions must be positive");
  }
  const int h = shape.hidden;
  layout_.add("dense.W", shape.dense, shape.input);
  layout_.add("dense.b", shape.dense, 1);
  layout_.add("gru.W_zr", 2 * h, shape.dense);
  layout_.add("gru.U_zr", 2 * h, h);
  layout_.add("gru.b_zr", 2 * h, 1);
  layout_.add("gru.W_n", h, shape.dense);
  layout_.add("gru.U_n", h, h);
  layout_.add("gru.b_n", h, 1);
  layout_.add("head.W", shape.output, h);
  layout_.add("head.b", shape.output, 1);
}

void RecurrentNet::initialize(ParamStore& store, Rng& rng, double head_gain) const {
  if (!(store.layout == layout_)) throw ArgumentError("parameter store does not match network layout");
  std::fill(store.values.begin(), store.values.end(), 0.0);
  const int h = shape_.hidden;
  uniform_fill(view(store.values, layout_.at("dense.W")), 1.0 / std::sqrt(shape_.input), rng);
  uniform_fill(view(store.values, layout_.at("gru.W_zr")), 1.0 / std::sqrt(shape_.dense), rng);
  uniform_fill(view(store.values, layout_.at("gru.W_n")), 1.0 / std::sqrt(shape_.dense), rng);
  auto u_zr = view(store.values, layout_.at("gru.U_zr"));
  for (int block = 0; block < 2; ++block) {
    Matrix q(h, h);
    orthogonal_fill(MutMap(q.data(), h, h), rng);
    u_zr.middleRows(block * h, h) = q;
  }
  orthogonal_fill(view(store.values, layout_.at("gru.U_n")), rng);
  uniform_fill(view(store.values, layout_.at("head.W")), head_gain / std::sqrt(h), rng);
  store.adam_steps = 0;
  std::fill(store.first_moment.begin(), store.first_moment.end(), 0.0);
  std::fill(store.second_moment.begin(), store.second_moment.end(), 0.0);
  store.zero_grad();
  ++store.version;
}

Matrix RecurrentNet::step(const ParamStore& store, const Matrix& input, Matrix& h) const {
  const int hd = shape_.hidden;
  const auto& L = layout_;
  const auto& v = store.values;
  Matrix a = ((view(v, L.at("dense.W")) * input).colwise() + view(v, L.at("dense.b")).col(0)).array().tanh().matrix();
  Matrix zr = sigmoid((view(v, L.at("gru.W_zr")) * a + view(v, L.at("gru.U_zr")) * h).colwise() +
                      view(v, L.at("gru.b_zr")).col(0));
  Matrix rh = zr.bottomRows(hd).cwiseProduct(h);
  Matrix c = ((view(v, L.at("gru.W_n")) * a + view(v, L.at("gru.U_n")) * rh).colwise() + view(v, L.at("gru.b_n")).col(0))
                 .array()
                 .tanh()
                 .matrix();
  const auto z = zr.topRows(hd).array();
  h = ((1.0 - z) * c.array() + z * h.array()).matrix();
  return (view(v, L.at("head.W")) * h).colwise() + view(v, L.at("head.b")).col(0);
}

ForwardCache RecurrentNet::forward(const ParamStore& store, const std::vector<Matrix>& inputs, const Matrix& h0,
                                   const std::vector<Eigen::RowVectorXd>& keep) const {
  if (!(store.layout == layout_)) throw ArgumentError("parameter store does not match network layout");
  const int hd = shape_.hidden;
  const auto steps = inputs.size();
  if (steps == 0) throw ArgumentError("empty input sequence");
  const Eigen::Index batch = inputs.front().cols();
  if (h0.rows() != hd || h0.cols() != batch) throw ArgumentError("initial hidden state has wrong shape");
  if (!keep.empty() && keep.size() != steps) throw ArgumentError("reset mask length must equal sequence length");

  const auto& L = layout_;
  const auto& v = store.values;
  const auto W1 = view(v, L.at("dense.W"));
  const auto b1 = view(v, L.at("dense.b"));
  const auto Wzr = view(v, L.at("gru.W_zr"));
  const auto Uzr = view(v, L.at("gru.U_zr"));
  const auto bzr = view(v, L.at("gru.b_zr"));
  const auto Wn = view(v, L.at("gru.W_n"));
  const auto Un = view(v, L.at("gru.U_n"));
  const auto bn = view(v, L.at("gru.b_n"));
  const auto Wo = view(v, L.at("head.W"));
  const auto bo = view(v, L.at("head.b"));

  ForwardCache c;
  c.version = store.version;
  c.inputs = inputs;
  c.keep.reserve(steps);
  Matrix h = h0;
  for (std::size_t t = 0; t < steps; ++t) {
    const Matrix& x = inputs[t];
    if (x.rows() != shape_.input || x.cols() != batch) throw ArgumentError("input width does not match network");
    Eigen::RowVectorXd k = keep.empty() ? Eigen::RowVectorXd::Ones(batch) : keep[t];
    if (k.size() != batch) throw ArgumentError("reset mask width must equal batch size");
    Matrix hp = (h.array().rowwise() * k.array()).matrix();
    Matrix a = tanh_of((W1 * x).colwise() + b1.col(0));
    Matrix zr = sigmoid((Wzr * a + Uzr * hp).colwise() + bzr.col(0));
    Matrix z = zr.topRows(hd);
    Matrix r = zr.bottomRows(hd);
    Matrix cand = tanh_of((Wn * a + Un * r.cwiseProduct(hp)).colwise() + bn.col(0));
    h = ((1.0 - z.array()) * cand.array() + z.array() * hp.array()).matrix();
    c.outputs.push_back((Wo * h).colwise() + bo.col(0));
    c.keep.push_back(std::move(k));
    c.dense.push_back(std::move(a));
    c.h_prev.push_back(std::move(hp));
    c.update_gate.push_back(std::move(z));
    c.reset_gate.push_back(std::move(r));
    c.candidate.push_back(std::move(cand));
    c.hidden.push_back(h);
  }
  c.valid = true;
  return c;
}

Matrix RecurrentNet::backward(ParamStore& store, const ForwardCache& cache, const std::vector<Matrix>& d_outputs) const {
  if (!cache.valid || cache.version != store.version) {
    throw ProtocolError("backward needs a cache from a forward pass on the current parameters");
  }
  if (d_outputs.size() != cache.inputs.size()) throw ArgumentError("one output gradient per step required");
  const int hd = shape_.hidden;
  const auto& L = layout_;
  const auto& v = store.values;
  auto& g = store.grads;
  const auto Wzr = view(v, L.at("gru.W_zr"));
  const auto Uzr = view(v, L.at("gru.U_zr"));
  const auto Wn = view(v, L.at("gru.W_n"));
  const auto Un = view(v, L.at("gru.U_n"));
  const auto Wo = view(v, L.at("head.W"));
  auto gW1 = view(g, L.at("dense.W"));
  auto gb1 = view(g, L.at("dense.b"));
  auto gWzr = view(g, L.at("gru.W_zr"));
  auto gUzr = view(g, L.at("gru.U_zr"));
  auto gbzr = view(g, L.at("gru.b_zr"));
  auto gWn = view(g, L.at("gru.W_n"));
  auto gUn = view(g, L.at("gru.U_n"));
  auto gbn = view(g, L.at("gru.b_n"));
  auto gWo = view(g, L.at("head.W"));
  auto gbo = view(g, L.at("head.b"));

  const Eigen::Index batch = cache.inputs.front().cols();
  Matrix dh_carry = Matrix::Zero(hd, batch);
  Matrix dzr(2 * hd, batch);
  for (int t = cache.steps() - 1; t >= 0; --t) {
    const Matrix& dy = d_outputs[t];
    if (dy.rows() != shape_.output || dy.cols() != batch) throw ArgumentError("output gradient has wrong shape");
    const Matrix& hp = cache.h_prev[t];
    const Matrix& z = cache.update_gate[t];
    const Matrix& r = cache.reset_gate[t];
    const Matrix& cand = cache.candidate[t];
    const Matrix& a = cache.dense[t];

    gWo.noalias() += dy * cache.hidden[t].transpose();
    gbo += dy.rowwise().sum();
    Matrix dh = Wo.transpose() * dy + dh_carry;

    Matrix dc_pre = (dh.array() * (1.0 - z.array()) * (1.0 - cand.array().square())).matrix();
    dzr.topRows(hd) = (dh.array() * (hp.array() - cand.array()) * z.array() * (1.0 - z.array())).matrix();
    Matrix rh = r.cwiseProduct(hp);
    gWn.noalias() += dc_pre * a.transpose();
    gUn.noalias() += dc_pre * rh.transpose();
    gbn += dc_pre.rowwise().sum();
    Matrix drh = Un.transpose() * dc_pre;
    dzr.bottomRows(hd) = (drh.array() * hp.array() * r.array() * (1.0 - r.array())).matrix();
    gWzr.noalias() += dzr * a.transpose();
    gUzr.noalias() += dzr * hp.transpose();
    gbzr += dzr.rowwise().sum();

    Matrix dhp = (dh.array() * z.array() + drh.array() * r.array()).matrix();
    dhp.noalias() += Uzr.transpose() * dzr;
    Matrix da = Wzr.transpose() * dzr;
    da.noalias() += Wn.transpose() * dc_pre;
    Matrix da_pre = (da.array() * (1.0 - a.array().square())).matrix();
    gW1.noalias() += da_pre * cache.inputs[t].transpose();
    gb1 += da_pre.rowwise().sum();

    dh_carry = (dhp.array().rowwise() * cache.keep[t].array()).matrix();
  }
  return dh_carry;
}

Matrix softmax(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double m = out.col(c).maxCoeff();
    out.col(c) = (out.col(c).array() - m).exp().matrix();
    out.col(c) /= out.col(c).sum();
  }
  return out;
}

CategoricalDist make_dist(std::span<const double> logits) {
  if (logits.empty()) throw ArgumentError("empty logits");
  CategoricalDist d;
  const double m = *std::max_element(logits.begin(), logits.end());
  d.probs.resize(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) total += d.probs[k] = std::exp(logits[k] - m);
  for (double& p : d.probs) p /= total;
  return d;
}

double entropy(const CategoricalDist& dist) {
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(std::max(p, kProbFloor));
  }
  return h;
}

double log_prob(const CategoricalDist& dist, int action) {
  if (action < 0 || action >= static_cast<int>(dist.probs.size())) throw ArgumentError("action out of range");
  return std::log(std::max(dist.probs[action], kProbFloor));
}

int sample(const CategoricalDist& dist, Rng& rng) {
  const double u = uniform01(rng);
  double cdf = 0.0;
  for (std::size_t k = 0; k < dist.probs.size(); ++k) {
    cdf += dist.probs[k];
    if (u < cdf) return static_cast<int>(k);
  }
  // Rounding left u above the final partial sum; take the last action with mass.
  for (std::size_t k = dist.probs.size(); k-- > 0;) {
    if (dist.probs[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

int mode(const CategoricalDist& dist) {
  return static_cast<int>(std::max_element(dist.probs.begin(), dist.probs.end()) - dist.probs.begin());
}

double adam_step(ParamStore& store, const AdamConfig& config) {
  double norm_sq = 0.0;
  for (double g : store.grads) {
    if (!std::isfinite(g)) throw TrainingError("non-finite gradient");
    norm_sq += g * g;
  }
  const double norm = std::sqrt(norm_sq);
  double scale = 1.0;
  if (config.max_grad_norm > 0.0 && norm > config.max_grad_norm) scale = config.max_grad_norm / norm;

  ++store.adam_steps;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(store.adam_steps));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(store.adam_steps));
  for (std::size_t k = 0; k < store.values.size(); ++k) {
    const double g = store.grads[k] * scale;
    store.first_moment[k] = config.beta1 * store.first_moment[k] + (1.0 - config.beta1) * g;
    store.second_moment[k] = config.beta2 * store.second_moment[k] + (1.0 - config.beta2) * g * g;
    const double m_hat = store.first_moment[k] / bc1;
    const double v_hat = store.second_moment[k] / bc2;
    store.values[k] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
  ++store.version;
  return norm;
}

void write_values(std::ostream& os, std::span<const double> values) {
  char buf[40];
  for (double x : values) {
    std::snprintf(buf, sizeof buf, "%.17g\n", x);
    os << buf;
  }
}

std::vector<double> read_values(std::istream& is, std::size_t count) {
  std::vector<double> out;
  out.reserve(count);
  std::string line;
  while (out.size() < count && std::getline(is, line)) {
    if (line.empty()) continue;
    char* end = nullptr;
    const double x = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || *end != '\0') throw ConfigError("bad parameter value '" + line + "'");
    out.push_back(x);
  }
  if (out.size() != count) {
    throw ConfigError("expected " + std::to_string(count) + " parameter values, found " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace csched::nn
