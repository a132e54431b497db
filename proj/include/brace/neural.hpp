#ifndef BRACE_NEURAL_HPP_
#define BRACE_NEURAL_HPP_

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "brace/belief.hpp"
#include "brace/rng.hpp"

namespace brace {

enum class Activation { kRelu, kTanh, kIdentity };

// Fully connected stack. Parameters live in one flat vector laid out layer by
// layer as [W (out x in, column-major), b (out)].
struct Mlp {
  std::vector<int> layer_sizes;         // input width first, output width last
  std::vector<Activation> activations;  // one per layer
  Eigen::VectorXd params;

  Mlp() = default;
  Mlp(std::vector<int> sizes, std::vector<Activation> acts);

  std::size_t num_layers() const { return activations.size(); }
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  Eigen::Index parameter_count() const { return params.size(); }

  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<Eigen::MatrixXd> weight(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
  Eigen::Index weight_offset(std::size_t layer) const;

  // W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  void init_uniform(Rng& rng);
};

// Activations for a batch stored column-wise; post[0] is the input.
struct MlpCache {
  std::vector<Eigen::MatrixXd> pre;
  std::vector<Eigen::MatrixXd> post;
};

Eigen::MatrixXd mlp_forward(const Mlp& net, const Eigen::MatrixXd& x, MlpCache* cache);

// Accumulates d(output-weighted sum)/d(params) into `grad` (same layout as
// net.params) and returns the gradient with respect to the input. With
// `skip_last_activation` the upstream gradient is taken to be with respect to
// the last layer's pre-activation.
Eigen::MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache, const Eigen::MatrixXd& d_out,
                             Eigen::Ref<Eigen::VectorXd> grad, bool skip_last_activation = false);

// Policy input: 10 observation entries, 3 belief entries, entropy.
inline constexpr int kPolicyInputSize = 14;
using PolicyInput = std::array<double, kPolicyInputSize>;

struct PolicyNet {
  Mlp trunk;   // kPolicyInputSize -> hidden -> hidden, ReLU
  Mlp actor;   // hidden -> 1, tanh
  Mlp critic;  // hidden -> 1, identity
  double log_std = -1.0;  // exploration noise on the pre-tanh actor output
  std::uint64_t version = 0;  // bumped on every parameter write

  static PolicyNet create(std::uint64_t seed, int hidden = 256, int input = kPolicyInputSize);

  Eigen::Index parameter_count() const;
  // Flat order: trunk, actor, critic, log_std.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);
};

struct ForwardCache {
  std::uint64_t version = 0;
  MlpCache trunk;
  MlpCache actor;
  MlpCache critic;
};

// Per column: gamma = (tanh(mu) + 1) / 2 and the critic value.
struct ForwardBatch {
  Eigen::RowVectorXd mu;
  Eigen::RowVectorXd gamma;
  Eigen::RowVectorXd value;
  ForwardCache cache;
};

ForwardBatch forward(const PolicyNet& net, const Eigen::MatrixXd& inputs);

struct PolicyOutput {
  double mu = 0.0;
  double gamma = 0.5;
  double value = 0.0;
};
PolicyOutput forward(const PolicyNet& net, std::span<const double> input);

// Gradient (flat layout of PolicyNet::parameters) of sum_j d_gamma_j gamma_j +
// d_value_j V_j. Throws kStaleCache when the net changed after the forward.
Eigen::VectorXd backward(const PolicyNet& net, const ForwardCache& cache,
                         const Eigen::RowVectorXd& d_gamma, const Eigen::RowVectorXd& d_value);
Eigen::VectorXd backward(const PolicyNet& net, const ForwardCache& cache, double d_gamma,
                         double d_value);
// Same, with the actor upstream gradient given on the pre-tanh output mu.
// The log_std slot is left at zero.
Eigen::VectorXd backward_mu(const PolicyNet& net, const ForwardCache& cache,
                            const Eigen::RowVectorXd& d_mu, const Eigen::RowVectorXd& d_value);

// d gamma / d input for a single sample.
Eigen::VectorXd input_gradient(const PolicyNet& net, std::span<const double> input);

struct OptimState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  double base_lr = 3e-4;
  long total_steps = 4000;  // cosine period
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm cap; <= 0 disables
  long skipped_steps = 0;

  static OptimState for_size(Eigen::Index n, double base_lr, long total_steps, double clip_norm);
};

// base_lr * 0.5 * (1 + cos(pi * t / T)), t clamped to [0, T].
double cosine_lr(double base_lr, long t, long total_steps);

// g * min(1, c / |g|).
Eigen::VectorXd clip_global_norm(const Eigen::VectorXd& g, double c);

struct StepReport {
  bool skipped = false;  // non-finite gradient
  double grad_norm = 0.0;
  double applied_norm = 0.0;
  double lr = 0.0;
};

// Adam descent step on `params` with cosine learning rate and optional
// global-norm clipping of `grads` before the moment update.
StepReport optimizer_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimState& opt);
StepReport optimizer_step(PolicyNet& net, const Eigen::VectorXd& grads, OptimState& opt);

// Text checkpoint (JSON, hex-float numbers): shapes, parameters, optimizer
// moments, RNG state, inference parameters and free-form metadata.
struct Checkpoint {
  PolicyNet net;
  OptimState opt;
  InferenceParams inference;
  std::string rng_state;
  std::map<std::string, std::string> meta;
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_string(const Checkpoint& ck);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace brace

#endif  // BRACE_NEURAL_HPP_
