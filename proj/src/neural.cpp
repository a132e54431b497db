#include "brace/neural.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "brace/error.hpp"
#include "brace/hexfloat.hpp"
#include "json.hpp"

namespace brace {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd activate(Activation a, const MatrixXd& z) {
  switch (a) {
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kTanh: return z.array().tanh().matrix();
    case Activation::kIdentity: return z;
  }
  return z;
}

// Multiplies the upstream gradient by the activation derivative in place.
void apply_derivative(Activation a, const MatrixXd& pre, const MatrixXd& post, MatrixXd& d) {
  switch (a) {
    case Activation::kRelu:
      d.array() *= (pre.array() > 0.0).cast<double>();
      break;
    case Activation::kTanh:
      d.array() *= 1.0 - post.array().square();
      break;
    case Activation::kIdentity:
      break;
  }
}

void check_version(const PolicyNet& net, const ForwardCache& cache) {
  if (cache.version != net.version) {
    throw Error(ErrorCode::kStaleCache, "forward cache is stale: parameters changed since forward");
  }
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw Error(ErrorCode::kCheckpointFormat, "unknown activation '" + s + "'");
}

nlohmann::json hex_array(const VectorXd& v) {
  auto arr = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(hex_double(v[i]));
  return arr;
}

VectorXd parse_array(const nlohmann::json& arr, Index expected, const char* what) {
  if (!arr.is_array() || static_cast<Index>(arr.size()) != expected) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("checkpoint field '") + what +
                                                  "' has the wrong length");
  }
  VectorXd v(expected);
  for (Index i = 0; i < expected; ++i) v[i] = parse_hex_double(arr[static_cast<std::size_t>(i)]);
  return v;
}

nlohmann::json mlp_json(const Mlp& m) {
  nlohmann::json j;
  j["layer_sizes"] = m.layer_sizes;
  auto acts = nlohmann::json::array();
  for (auto a : m.activations) acts.push_back(activation_name(a));
  j["activations"] = acts;
  j["params"] = hex_array(m.params);
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  std::vector<Activation> acts;
  for (const auto& a : j.at("activations")) acts.push_back(activation_from_name(a));
  Mlp m(j.at("layer_sizes").get<std::vector<int>>(), acts);
  m.params = parse_array(j.at("params"), m.parameter_count(), "params");
  return m;
}

}  // namespace

Mlp::Mlp(std::vector<int> sizes, std::vector<Activation> acts)
    : layer_sizes(std::move(sizes)), activations(std::move(acts)) {
  if (layer_sizes.size() < 2 || activations.size() + 1 != layer_sizes.size()) {
    throw Error(ErrorCode::kShapeMismatch, "mlp needs one activation per layer");
  }
  Index n = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    if (layer_sizes[l] < 1 || layer_sizes[l + 1] < 1) {
      throw Error(ErrorCode::kShapeMismatch, "mlp layer widths must be positive");
    }
    n += static_cast<Index>(layer_sizes[l + 1]) * (layer_sizes[l] + 1);
  }
  params = VectorXd::Zero(n);
}

Index Mlp::weight_offset(std::size_t layer) const {
  Index off = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    off += static_cast<Index>(layer_sizes[l + 1]) * (layer_sizes[l] + 1);
  }
  return off;
}

Eigen::Map<const MatrixXd> Mlp::weight(std::size_t layer) const {
  return {params.data() + weight_offset(layer), layer_sizes[layer + 1], layer_sizes[layer]};
}

Eigen::Map<MatrixXd> Mlp::weight(std::size_t layer) {
  return {params.data() + weight_offset(layer), layer_sizes[layer + 1], layer_sizes[layer]};
}

Eigen::Map<const VectorXd> Mlp::bias(std::size_t layer) const {
  const Index off = weight_offset(layer) + static_cast<Index>(layer_sizes[layer + 1]) * layer_sizes[layer];
  return {params.data() + off, layer_sizes[layer + 1]};
}

Eigen::Map<VectorXd> Mlp::bias(std::size_t layer) {
  const Index off = weight_offset(layer) + static_cast<Index>(layer_sizes[layer + 1]) * layer_sizes[layer];
  return {params.data() + off, layer_sizes[layer + 1]};
}

void Mlp::init_uniform(Rng& rng) {
  Index i = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer_sizes[l]));
    const Index n = static_cast<Index>(layer_sizes[l + 1]) * (layer_sizes[l] + 1);
    for (Index k = 0; k < n; ++k) params[i++] = rng.uniform(-bound, bound);
  }
}

MatrixXd mlp_forward(const Mlp& net, const MatrixXd& x, MlpCache* cache) {
  if (x.rows() != net.input_size()) {
    throw Error(ErrorCode::kShapeMismatch, "input width " + std::to_string(x.rows()) +
                                               " does not match layer width " +
                                               std::to_string(net.input_size()));
  }
  if (cache) {
    cache->pre.clear();
    cache->post.assign(1, x);
  }
  MatrixXd h = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    MatrixXd z = net.weight(l) * h;
    z.colwise() += net.bias(l);
    h = activate(net.activations[l], z);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(h);
    }
  }
  return h;
}

MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache, const MatrixXd& d_out,
                      Eigen::Ref<VectorXd> grad, bool skip_last_activation) {
  if (cache.pre.size() != net.num_layers() || grad.size() != net.parameter_count()) {
    throw Error(ErrorCode::kShapeMismatch, "mlp backward: cache or gradient shape mismatch");
  }
  MatrixXd d = d_out;
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    if (!(skip_last_activation && l + 1 == net.num_layers())) {
      apply_derivative(net.activations[l], cache.pre[l], cache.post[l + 1], d);
    }
    const Index rows = net.layer_sizes[l + 1];
    const Index cols = net.layer_sizes[l];
    const Index off = net.weight_offset(l);
    Eigen::Map<MatrixXd> gw(grad.data() + off, rows, cols);
    Eigen::Map<VectorXd> gb(grad.data() + off + rows * cols, rows);
    gw.noalias() += d * cache.post[l].transpose();
    gb += d.rowwise().sum();
    d = net.weight(l).transpose() * d;
  }
  return d;
}

PolicyNet PolicyNet::create(std::uint64_t seed, int hidden, int input) {
  PolicyNet net;
  net.trunk = Mlp({input, hidden, hidden}, {Activation::kRelu, Activation::kRelu});
  net.actor = Mlp({hidden, 1}, {Activation::kTanh});
  net.critic = Mlp({hidden, 1}, {Activation::kIdentity});
  Rng rng(seed);
  net.trunk.init_uniform(rng);
  net.actor.init_uniform(rng);
  net.critic.init_uniform(rng);
  return net;
}

Index PolicyNet::parameter_count() const {
  return trunk.parameter_count() + actor.parameter_count() + critic.parameter_count() + 1;
}

VectorXd PolicyNet::parameters() const {
  VectorXd flat(parameter_count());
  flat << trunk.params, actor.params, critic.params, log_std;
  return flat;
}

void PolicyNet::set_parameters(const VectorXd& flat) {
  if (flat.size() != parameter_count()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter vector has the wrong length");
  }
  Index off = 0;
  for (Mlp* m : {&trunk, &actor, &critic}) {
    m->params = flat.segment(off, m->parameter_count());
    off += m->parameter_count();
  }
  log_std = flat[off];
  ++version;
}

ForwardBatch forward(const PolicyNet& net, const MatrixXd& inputs) {
  ForwardBatch out;
  out.cache.version = net.version;
  const MatrixXd h = mlp_forward(net.trunk, inputs, &out.cache.trunk);
  const MatrixXd a = mlp_forward(net.actor, h, &out.cache.actor);
  const MatrixXd v = mlp_forward(net.critic, h, &out.cache.critic);
  out.mu = out.cache.actor.pre.back().row(0);
  out.gamma = (a.row(0).array() + 1.0) * 0.5;
  out.value = v.row(0);
  return out;
}

PolicyOutput forward(const PolicyNet& net, std::span<const double> input) {
  const Eigen::Map<const VectorXd> x(input.data(), static_cast<Index>(input.size()));
  if (x.size() != net.trunk.input_size()) {
    throw Error(ErrorCode::kShapeMismatch, "policy input has " + std::to_string(x.size()) +
                                               " entries, expected " +
                                               std::to_string(net.trunk.input_size()));
  }
  const MatrixXd h = mlp_forward(net.trunk, x, nullptr);
  const double mu = (net.actor.weight(0) * h + net.actor.bias(0))(0, 0);
  const double value = (net.critic.weight(0) * h + net.critic.bias(0))(0, 0);
  return {mu, (std::tanh(mu) + 1.0) * 0.5, value};
}

VectorXd backward_mu(const PolicyNet& net, const ForwardCache& cache, const Eigen::RowVectorXd& d_mu,
                     const Eigen::RowVectorXd& d_value) {
  check_version(net, cache);
  VectorXd grad = VectorXd::Zero(net.parameter_count());
  const Index nt = net.trunk.parameter_count();
  const Index na = net.actor.parameter_count();
  const Index nc = net.critic.parameter_count();
  MatrixXd dh = mlp_backward(net.actor, cache.actor, d_mu, grad.segment(nt, na), true);
  dh += mlp_backward(net.critic, cache.critic, d_value, grad.segment(nt + na, nc));
  mlp_backward(net.trunk, cache.trunk, dh, grad.segment(0, nt));
  return grad;
}

VectorXd backward(const PolicyNet& net, const ForwardCache& cache, const Eigen::RowVectorXd& d_gamma,
                  const Eigen::RowVectorXd& d_value) {
  check_version(net, cache);
  const Eigen::RowVectorXd t = cache.actor.post.back().row(0);
  const Eigen::RowVectorXd d_mu = (d_gamma.array() * 0.5 * (1.0 - t.array().square())).matrix();
  return backward_mu(net, cache, d_mu, d_value);
}

VectorXd backward(const PolicyNet& net, const ForwardCache& cache, double d_gamma, double d_value) {
  const Index n = cache.trunk.post.empty() ? 0 : cache.trunk.post.front().cols();
  return backward(net, cache, Eigen::RowVectorXd::Constant(n, d_gamma),
                  Eigen::RowVectorXd::Constant(n, d_value));
}

VectorXd input_gradient(const PolicyNet& net, std::span<const double> input) {
  const Eigen::Map<const VectorXd> x(input.data(), static_cast<Index>(input.size()));
  const ForwardBatch fb = forward(net, MatrixXd(x));
  VectorXd scratch_a = VectorXd::Zero(net.actor.parameter_count());
  VectorXd scratch_t = VectorXd::Zero(net.trunk.parameter_count());
  const MatrixXd d_gamma = MatrixXd::Constant(1, 1, 0.5);
  const MatrixXd dh = mlp_backward(net.actor, fb.cache.actor, d_gamma, scratch_a);
  return mlp_backward(net.trunk, fb.cache.trunk, dh, scratch_t).col(0);
}

OptimState OptimState::for_size(Index n, double base_lr, long total_steps, double clip_norm) {
  OptimState s;
  s.m = VectorXd::Zero(n);
  s.v = VectorXd::Zero(n);
  s.base_lr = base_lr;
  s.total_steps = total_steps;
  s.clip_norm = clip_norm;
  return s;
}

double cosine_lr(double base_lr, long t, long total_steps) {
  if (total_steps <= 0) return base_lr;
  const long tc = std::clamp(t, 0L, total_steps);
  if (tc == total_steps) return 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(tc) / static_cast<double>(total_steps)));
}

VectorXd clip_global_norm(const VectorXd& g, double c) {
  const double n = g.norm();
  if (c <= 0.0 || n <= c) return g;
  return g * (c / n);
}

StepReport optimizer_step(VectorXd& params, const VectorXd& grads, OptimState& opt) {
  if (grads.size() != params.size() || opt.m.size() != params.size() || opt.v.size() != params.size()) {
    throw Error(ErrorCode::kShapeMismatch, "optimizer state does not match parameter shape");
  }
  StepReport r;
  r.grad_norm = grads.norm();
  if (!std::isfinite(r.grad_norm)) {
    r.skipped = true;
    ++opt.skipped_steps;
    return r;
  }
  const VectorXd g = clip_global_norm(grads, opt.clip_norm);
  r.applied_norm = g.norm();
  r.lr = cosine_lr(opt.base_lr, opt.step, opt.total_steps);
  ++opt.step;
  opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * g;
  opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  params.array() -= r.lr * (opt.m.array() / c1) / ((opt.v.array() / c2).sqrt() + opt.eps);
  return r;
}

StepReport optimizer_step(PolicyNet& net, const VectorXd& grads, OptimState& opt) {
  VectorXd p = net.parameters();
  const StepReport r = optimizer_step(p, grads, opt);
  if (!r.skipped) net.set_parameters(p);
  return r;
}

std::string checkpoint_to_string(const Checkpoint& ck) {
  nlohmann::json j;
  j["format"] = "brace-checkpoint";
  j["version"] = kCheckpointVersion;
  j["net"]["trunk"] = mlp_json(ck.net.trunk);
  j["net"]["actor"] = mlp_json(ck.net.actor);
  j["net"]["critic"] = mlp_json(ck.net.critic);
  j["net"]["log_std"] = hex_double(ck.net.log_std);
  auto& o = j["optimizer"];
  o["step"] = ck.opt.step;
  o["skipped_steps"] = ck.opt.skipped_steps;
  o["base_lr"] = hex_double(ck.opt.base_lr);
  o["total_steps"] = ck.opt.total_steps;
  o["beta1"] = hex_double(ck.opt.beta1);
  o["beta2"] = hex_double(ck.opt.beta2);
  o["eps"] = hex_double(ck.opt.eps);
  o["clip_norm"] = hex_double(ck.opt.clip_norm);
  o["m"] = hex_array(ck.opt.m);
  o["v"] = hex_array(ck.opt.v);
  const InferenceParams& p = ck.inference;
  j["inference"] = {{"beta", hex_double(p.beta)},           {"w_theta", hex_double(p.w_theta)},
                    {"w_d", hex_double(p.w_d)},             {"ema_decay", hex_double(p.ema_decay)},
                    {"temperature", hex_double(p.temperature)}, {"d_slow", hex_double(p.d_slow)},
                    {"v_max", hex_double(p.v_max)},         {"eps_mag", hex_double(p.eps_mag)}};
  j["rng_state"] = ck.rng_state;
  j["meta"] = ck.meta;
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "brace-checkpoint") {
      throw Error(ErrorCode::kCheckpointFormat, "not a checkpoint file");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kCheckpointFormat,
                  "unsupported checkpoint version " + j.at("version").dump());
    }
    Checkpoint ck;
    const auto& n = j.at("net");
    ck.net.trunk = mlp_from_json(n.at("trunk"));
    ck.net.actor = mlp_from_json(n.at("actor"));
    ck.net.critic = mlp_from_json(n.at("critic"));
    ck.net.log_std = parse_hex_double(n.at("log_std"));
    const auto& o = j.at("optimizer");
    const Index count = ck.net.parameter_count();
    ck.opt.step = o.at("step").get<long>();
    ck.opt.skipped_steps = o.at("skipped_steps").get<long>();
    ck.opt.base_lr = parse_hex_double(o.at("base_lr"));
    ck.opt.total_steps = o.at("total_steps").get<long>();
    ck.opt.beta1 = parse_hex_double(o.at("beta1"));
    ck.opt.beta2 = parse_hex_double(o.at("beta2"));
    ck.opt.eps = parse_hex_double(o.at("eps"));
    ck.opt.clip_norm = parse_hex_double(o.at("clip_norm"));
    ck.opt.m = parse_array(o.at("m"), count, "optimizer.m");
    ck.opt.v = parse_array(o.at("v"), count, "optimizer.v");
    const auto& p = j.at("inference");
    ck.inference.beta = parse_hex_double(p.at("beta"));
    ck.inference.w_theta = parse_hex_double(p.at("w_theta"));
    ck.inference.w_d = parse_hex_double(p.at("w_d"));
    ck.inference.ema_decay = parse_hex_double(p.at("ema_decay"));
    ck.inference.temperature = parse_hex_double(p.at("temperature"));
    ck.inference.d_slow = parse_hex_double(p.at("d_slow"));
    ck.inference.v_max = parse_hex_double(p.at("v_max"));
    ck.inference.eps_mag = parse_hex_double(p.at("eps_mag"));
    ck.rng_state = j.at("rng_state").get<std::string>();
    ck.meta = j.at("meta").get<std::map<std::string, std::string>>();
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointFormat, std::string("checkpoint field error: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path.string());
  out << checkpoint_to_string(ck);
  if (!out) throw Error(ErrorCode::kIo, "failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace brace
