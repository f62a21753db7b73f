#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csched/rng.hpp"

namespace csched::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Named block of a flat parameter vector, stored column-major.
struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
  bool operator==(const ParamSlot&) const = default;
};

class ParamLayout {
 public:
  const ParamSlot& add(std::string name, int rows, int cols);
  const ParamSlot& at(const std::string& name) const;
  const std::vector<ParamSlot>& slots() const noexcept { return slots_; }
  std::size_t size() const noexcept { return size_; }

  /// "name:RxC,name:RxC,..."
  std::string describe() const;

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<ParamSlot> slots_;
  std::size_t size_ = 0;
};

/// Parameter storage. Over-aligned so vectorized kernels on slot views split
/// their work the same way in every process, keeping runs bit-reproducible.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

/// Flat parameters with matching gradient and Adam moment buffers.
struct ParamStore {
  ParamLayout layout;
  Buffer values;
  Buffer grads;
  Buffer first_moment;
  Buffer second_moment;
  std::int64_t adam_steps = 0;
  /// Bumped whenever values change through the optimizer or a load.
  std::uint64_t version = 0;

  explicit ParamStore(ParamLayout l = {});
  void zero_grad();
  std::size_t size() const noexcept { return values.size(); }
};

struct NetShape {
  int input = 0;
  int dense = 64;
  int hidden = 64;
  int output = 1;

  bool operator==(const NetShape&) const = default;
};

/// Activations of one forward pass, kept for backpropagation through time.
struct ForwardCache {
  std::uint64_t version = 0;
  bool valid = false;
  std::vector<Matrix> inputs;
  std::vector<Eigen::RowVectorXd> keep;  ///< 0 where the hidden state was reset before the step
  std::vector<Matrix> dense;
  std::vector<Matrix> h_prev;  ///< previous hidden state after reset masking
  std::vector<Matrix> update_gate;
  std::vector<Matrix> reset_gate;
  std::vector<Matrix> candidate;
  std::vector<Matrix> hidden;
  std::vector<Matrix> outputs;

  int steps() const { return static_cast<int>(inputs.size()); }
};

/// input -> dense + tanh -> GRU cell -> linear head. Works on batches stored
/// as columns; a sequence is a vector of per-step matrices.
class RecurrentNet {
 public:
  explicit RecurrentNet(NetShape shape);

  const NetShape& shape() const noexcept { return shape_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  ParamStore make_store() const { return ParamStore(layout_); }

  /// Scaled-uniform dense weights, orthogonal recurrent weights, zero
  /// biases, and a head scaled by `head_gain`.
  void initialize(ParamStore& store, Rng& rng, double head_gain) const;

  /// `keep[t]` (length B) multiplies the carried hidden state before step t;
  /// pass an empty vector to never reset.
  ForwardCache forward(const ParamStore& store, const std::vector<Matrix>& inputs, const Matrix& h0,
                       const std::vector<Eigen::RowVectorXd>& keep = {}) const;

  /// Single step without caching, for rollouts. Updates `h` in place.
  Matrix step(const ParamStore& store, const Matrix& input, Matrix& h) const;

  /// Accumulates d(loss)/d(params) into store.grads given d(loss)/d(output)
  /// per step. Returns d(loss)/d(h0).
  Matrix backward(ParamStore& store, const ForwardCache& cache, const std::vector<Matrix>& d_outputs) const;

 private:
  NetShape shape_;
  ParamLayout layout_;
};

/// Column-wise softmax with max subtraction.
Matrix softmax(const Matrix& logits);

/// Categorical distribution over 2^S actions.
struct CategoricalDist {
  std::vector<double> probs;
};

inline constexpr double kProbFloor = 1e-8;

CategoricalDist make_dist(std::span<const double> logits);
double entropy(const CategoricalDist& dist);
double log_prob(const CategoricalDist& dist, int action);
int sample(const CategoricalDist& dist, Rng& rng);
/// Most likely action; lowest index among ties.
int mode(const CategoricalDist& dist);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm cap; 0 disables clipping.
  double max_grad_norm = 0.0;
};

/// Bias-corrected Adam on store.values using store.grads. Throws
/// TrainingError on a non-finite gradient. Returns the pre-clip norm.
double adam_step(ParamStore& store, const AdamConfig& config);

/// Writes one value per line with 17 significant digits.
void write_values(std::ostream& os, std::span<const double> values);
std::vector<double> read_values(std::istream& is, std::size_t count);

}  // namespace csched::nn
