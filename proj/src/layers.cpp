#include "msg3d/layers.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace msg3d::nn {

using graph::AdjacencyMatrix;

namespace {

Tensor constant_matrix(const Eigen::MatrixXd& m) {
  const auto n = static_cast<std::size_t>(m.rows()), c = static_cast<std::size_t>(m.cols());
  std::vector<double> v(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return Tensor({n, c}, std::move(v));
}

Tensor small_uniform(ad::Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

void StateCollector::add_parameter(const std::string& name, const Tensor& t, bool decay_exempt) {
  for (const auto& p : parameters) {
    if (p.name == name) throw std::logic_error("duplicate parameter name '" + name + "'");
  }
  parameters.push_back({name, t, decay_exempt});
}

void StateCollector::add_buffer(const std::string& name, const Tensor& t) {
  buffers.push_back({name, t});
}

Tensor fan_in_uniform(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("fan_in_uniform: zero fan-in");
  return small_uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(std::size_t channels)
    : gamma(Tensor::filled({channels}, 1.0, true)),
      beta(Tensor({channels}, true)),
      stats(channels) {}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
  return ad::batch_norm(x, gamma, beta, stats, training);
}

void BatchNorm::collect(const std::string& prefix, StateCollector& out) const {
  out.add_parameter(prefix + ".gamma", gamma);
  out.add_parameter(prefix + ".beta", beta);
  out.add_buffer(prefix + ".running_mean", stats.running_mean);
  out.add_buffer(prefix + ".running_var", stats.running_var);
}

Linear::Linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng)
    : weight(fan_in_uniform({in, out}, in, rng)) {
  if (with_bias) bias = fan_in_uniform({out}, in, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = ad::matmul(x, weight);
  return bias ? ad::add_bias(y, *bias) : y;
}

void Linear::collect(const std::string& prefix, StateCollector& out) const {
  out.add_parameter(prefix + ".weight", weight);
  if (bias) out.add_parameter(prefix + ".bias", *bias);
}

Aggregation parse_aggregation(const std::string& text) {
  if (text == "disentangled") return Aggregation::Disentangled;
  if (text == "powered") return Aggregation::Powered;
  throw std::invalid_argument("unknown aggregation '" + text + "'");
}

std::string to_string(Aggregation a) {
  return a == Aggregation::Disentangled ? "disentangled" : "powered";
}

// ---------------------------------------------------------------------------
// Graph convolutions

namespace {
constexpr double kMaskInit = 1e-6;
}

MSGCNLayer MSGCNLayer::gcn(const AdjacencyMatrix& a, std::size_t c_in, std::size_t c_out,
                           Rng& rng, bool activation) {
  MSGCNLayer layer;
  layer.bases.push_back(constant_matrix(graph::sym_normalize(graph::add_self_loops(a)).values()));
  layer.scaling.emplace_back(static_cast<std::size_t>(a.size()), 1.0);
  layer.weights.push_back(fan_in_uniform({c_in, c_out}, c_in, rng));
  layer.activation = activation;
  return layer;
}

MSGCNLayer MSGCNLayer::disentangled(const graph::KAdjacencySet& family, std::size_t c_in,
                                    std::size_t c_out, bool masks, Rng& rng, bool activation) {
  MSGCNLayer layer;
  const auto n = static_cast<std::size_t>(family.num_nodes());
  for (std::size_t k = 0; k < family.raw().size(); ++k) {
    layer.bases.push_back(constant_matrix(family.normalized()[k].values()));
    layer.scaling.push_back(graph::inverse_sqrt_degrees(family.raw()[k]));
    layer.weights.push_back(fan_in_uniform({c_in, c_out}, c_in, rng));
  }
  if (masks) {
    for (std::size_t k = 0; k < layer.bases.size(); ++k) {
      layer.masks.push_back(small_uniform({n, n}, kMaskInit, rng));
    }
  }
  layer.activation = activation;
  return layer;
}

MSGCNLayer MSGCNLayer::powered(const AdjacencyMatrix& a, int max_scale,
                               graph::NormalizationMode mode, std::size_t c_in,
                               std::size_t c_out, bool masks, Rng& rng, bool activation) {
  if (max_scale < 0) throw std::invalid_argument("powered layer: negative scale count");
  MSGCNLayer layer;
  const auto n = static_cast<std::size_t>(a.size());
  for (int k = 0; k <= max_scale; ++k) {
    layer.bases.push_back(constant_matrix(graph::powered_adjacency(a, k, mode).values()));
    layer.scaling.emplace_back(n, 1.0);
    layer.weights.push_back(fan_in_uniform({c_in, c_out}, c_in, rng));
  }
  if (masks) {
    for (int k = 0; k <= max_scale; ++k) layer.masks.push_back(small_uniform({n, n}, kMaskInit, rng));
  }
  layer.activation = activation;
  return layer;
}

std::vector<Tensor> MSGCNLayer::adjacencies() const {
  if (masks.empty()) return bases;
  std::vector<Tensor> out;
  out.reserve(bases.size());
  for (std::size_t k = 0; k < bases.size(); ++k) {
    out.push_back(ad::scaled_mask_adjacency(bases[k], scaling[k], masks[k]));
  }
  return out;
}

Tensor MSGCNLayer::forward(const Tensor& x) const {
  Tensor y = ad::graph_conv(x, adjacencies(), weights);
  return activation ? ad::relu(y) : y;
}

void MSGCNLayer::collect(const std::string& prefix, StateCollector& out) const {
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out.add_parameter(prefix + ".weight." + std::to_string(k), weights[k]);
  }
  for (std::size_t k = 0; k < masks.size(); ++k) {
    out.add_parameter(prefix + ".mask." + std::to_string(k), masks[k]);
  }
}

Tensor collapse_window(const Tensor& y, std::size_t tau, const Tensor& weight) {
  if (y.rank() < 2 || tau == 0 || y.dim(y.rank() - 2) % tau != 0) {
    throw std::invalid_argument("collapse_window: node axis of " + ad::to_string(y.shape()) +
                                " is not a multiple of tau");
  }
  const std::size_t c = y.shape().back(), n = y.dim(y.rank() - 2) / tau;
  if (weight.rank() != 2 || weight.dim(0) != tau * c) {
    throw std::invalid_argument("collapse_window: weight must be [tau*C_mid, C_out]");
  }
  const std::size_t lead = y.numel() / (tau * n * c);
  Tensor grouped = ad::permute(ad::reshape(y, {lead, tau, n, c}), {0, 2, 1, 3});
  ad::Shape flat(y.shape().begin(), y.shape().end() - 2);
  flat.push_back(n);
  flat.push_back(tau * c);
  return ad::matmul(ad::reshape(grouped, flat), weight);
}

// ---------------------------------------------------------------------------
// G3D pathway

namespace {

MSGCNLayer window_graph_layer(const AdjacencyMatrix& a, int tau, std::size_t c_in,
                              std::size_t c_out, const G3DOptions& options, Rng& rng) {
  auto st = graph::build_variant(graph::add_self_loops(a), tau, options.connectivity);
  if (options.aggregation == Aggregation::Disentangled) {
    st = graph::st_k_adjacency(std::move(st), options.scales);
    return MSGCNLayer::disentangled(st.k_family(), c_in, c_out, options.masks, rng);
  }
  const Eigen::MatrixXd window = st.raw().values() -
                                 Eigen::MatrixXd::Identity(st.raw().size(), st.raw().size());
  return MSGCNLayer::powered(AdjacencyMatrix(window), options.scales, options.normalization, c_in,
                             c_out, options.masks, rng);
}

}  // namespace

MSG3DPathway::MSG3DPathway(const AdjacencyMatrix& a, graph::WindowSpec window_spec,
                           std::size_t c_in, std::size_t c_mid, std::size_t c_out,
                           const G3DOptions& options, Rng& rng)
    : window(window_spec),
      gcn3d((window_spec.validate(),
             window_graph_layer(a, window_spec.tau, c_in, c_mid, options, rng))),
      bn_mid(c_mid),
      collapse(fan_in_uniform({static_cast<std::size_t>(window_spec.tau) * c_mid, c_out},
                              static_cast<std::size_t>(window_spec.tau) * c_mid, rng)),
      bn_out(c_out) {}

Tensor MSG3DPathway::forward(const Tensor& x, bool training) {
  if (x.rank() != 4) throw std::invalid_argument("G3D pathway: expects x[B,T,N,C]");
  Tensor windows = graph::extract_windows(x, window);
  Tensor y = ad::relu(bn_mid.forward(gcn3d.forward(windows), training));
  return bn_out.forward(collapse_window(y, static_cast<std::size_t>(window.tau), collapse),
                        training);
}

void MSG3DPathway::collect(const std::string& prefix, StateCollector& out) const {
  gcn3d.collect(prefix + ".gcn3d", out);
  bn_mid.collect(prefix + ".bn_mid", out);
  out.add_parameter(prefix + ".collapse", collapse);
  bn_out.collect(prefix + ".bn_out", out);
}

// ---------------------------------------------------------------------------
// Multi-scale temporal convolution

MSTCNLayer::MSTCNLayer(std::size_t c_in, std::size_t c_out, const TCNOptions& opts, Rng& rng)
    : bn(c_out), options(opts) {
  const std::size_t count = options.dilations.size();
  if (count == 0 || c_out < count) {
    throw std::invalid_argument("MS-TCN: need 1..C_out branches");
  }
  if (options.stride < 1) throw std::invalid_argument("MS-TCN: stride must be >= 1");
  for (std::size_t b = 0; b < count; ++b) {
    if (options.dilations[b] < 1) throw std::invalid_argument("MS-TCN: dilation must be >= 1");
    const std::size_t width = c_out / count + (b < c_out % count ? 1 : 0);
    Tensor bottleneck = fan_in_uniform({c_in, width}, c_in, rng);
    Tensor conv = fan_in_uniform({3, width, width}, 3 * width, rng);
    branches.push_back({bottleneck, BatchNorm(width), conv, options.dilations[b]});
  }
  if (c_in != c_out || options.stride != 1) residual = fan_in_uniform({1, c_in, c_out}, c_in, rng);
}

Tensor MSTCNLayer::forward(const Tensor& x, bool training) {
  std::vector<Tensor> outs;
  outs.reserve(branches.size());
  for (Branch& b : branches) {
    Tensor h = ad::relu(b.bn.forward(ad::matmul(x, b.bottleneck), training));
    outs.push_back(ad::temporal_conv(h, b.conv, {3, options.stride, b.dilation}));
  }
  Tensor merged = outs.size() == 1 ? outs.front() : ad::concat_last(outs);
  Tensor res = residual ? ad::temporal_conv(x, *residual, {1, options.stride, 1}) : x;
  Tensor y = bn.forward(ad::add(merged, res), training);
  return options.activation ? ad::relu(y) : y;
}

void MSTCNLayer::collect(const std::string& prefix, StateCollector& out) const {
  for (std::size_t i = 0; i < branches.size(); ++i) {
    const std::string p = prefix + ".branch." + std::to_string(i);
    out.add_parameter(p + ".bottleneck", branches[i].bottleneck);
    branches[i].bn.collect(p + ".bn", out);
    out.add_parameter(p + ".conv", branches[i].conv);
  }
  if (residual) out.add_parameter(prefix + ".residual", *residual);
  bn.collect(prefix + ".bn", out);
}

// ---------------------------------------------------------------------------
// Block

STGCBlock::STGCBlock(const graph::SkeletonTopology& topology, std::size_t c_in,
                     std::size_t c_out, int stride, const BlockOptions& options, Rng& rng) {
  if (!options.factorized && options.pathways.empty()) {
    throw std::invalid_argument("block: needs at least one pathway");
  }
  const AdjacencyMatrix a = graph::build_adjacency(topology);
  const bool doubling = c_out == 2 * c_in;
  const std::size_t c_mid = options.double_at_collapse && doubling ? c_out / 2 : c_out;
  for (const PathwaySpec& p : options.pathways) {
    pathways.emplace_back(a, graph::WindowSpec{p.tau, p.dilation, stride}, c_in, c_mid, c_out,
                          options.g3d, rng);
  }
  if (options.factorized) {
    const std::size_t c_gcn = doubling ? c_in : c_out;
    if (options.aggregation == Aggregation::Disentangled) {
      gcn = MSGCNLayer::disentangled(graph::KAdjacencySet(topology, options.gcn_scales), c_in,
                                     c_gcn, options.masks, rng);
    } else {
      gcn = MSGCNLayer::powered(a, options.gcn_scales, options.normalization, c_in, c_gcn,
                                options.masks, rng);
    }
    gcn_bn.emplace(c_gcn);
    tcns.emplace_back(c_gcn, c_out, TCNOptions{options.tcn_dilations, 1, true}, rng);
    tcns.emplace_back(c_out, c_out, TCNOptions{options.tcn_dilations, stride, false}, rng);
  }
}

Tensor STGCBlock::factorized_forward(const Tensor& x, bool training) {
  Tensor h = ad::relu(gcn_bn->forward(gcn->forward(x), training));
  for (MSTCNLayer& t : tcns) h = t.forward(h, training);
  return h;
}

Tensor STGCBlock::forward(const Tensor& x, bool training) {
  Tensor sum;
  if (gcn) sum = factorized_forward(x, training);
  for (MSG3DPathway& p : pathways) {
    Tensor y = p.forward(x, training);
    sum = sum.defined() ? ad::add(sum, y) : y;
  }
  return ad::relu(sum);
}

void STGCBlock::collect(const std::string& prefix, StateCollector& out) const {
  for (std::size_t i = 0; i < pathways.size(); ++i) {
    pathways[i].collect(prefix + ".g3d." + std::to_string(i), out);
  }
  if (gcn) {
    gcn->collect(prefix + ".gcn", out);
    gcn_bn->collect(prefix + ".gcn_bn", out);
  }
  for (std::size_t i = 0; i < tcns.size(); ++i) tcns[i].collect(prefix + ".tcn." + std::to_string(i), out);
}

// ---------------------------------------------------------------------------
// Network configuration

void NetworkConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("network config: " + what); };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (channels.empty()) fail("channels must list at least one block");
  if (gcn_scales < 0 || g3d_scales < 0) fail("scales must be >= 0");
  if (pathways.empty() && !factorized_pathway) fail("blocks need at least one pathway");
  if (tcn_dilations.empty()) fail("tcn_dilations must not be empty");
  for (int d : tcn_dilations) {
    if (d < 1) fail("tcn dilations must be >= 1");
  }
  for (int c : channels) {
    if (c < static_cast<int>(tcn_dilations.size())) {
      fail("each block needs at least one channel per temporal branch");
    }
  }
  for (const PathwaySpec& p : pathways) {
    if (p.tau < 1 || p.tau % 2 == 0) fail("pathway tau must be odd and positive");
    if (p.dilation < 1) fail("pathway dilation must be >= 1");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& s) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  if (s.empty()) return parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    parts.push_back(trim(std::string_view(s).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& p : split(s, ',')) out.push_back(parse_int(p));
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

NetworkConfig parse_network_config(const std::string& text, const NetworkConfig& base) {
  NetworkConfig c = base;
  std::istringstream in(text);
  std::string line;
  std::unordered_set<std::string> seen;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    auto where = [&] { return "network config line " + std::to_string(line_no) + ": "; };
    if (eq == std::string::npos) throw std::invalid_argument(where() + "expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) throw std::invalid_argument(where() + "duplicate key '" + key + "'");
    try {
      if (key == "topology") c.topology = value;
      else if (key == "in_channels") c.in_channels = parse_int(value);
      else if (key == "num_classes") c.num_classes = parse_int(value);
      else if (key == "channels") c.channels = parse_int_list(value);
      else if (key == "gcn_scales") c.gcn_scales = parse_int(value);
      else if (key == "g3d_scales") c.g3d_scales = parse_int(value);
      else if (key == "pathways") {
        c.pathways.clear();
        for (const auto& p : split(value, ',')) {
          const auto colon = p.find(':');
          if (colon == std::string::npos) throw std::invalid_argument("pathway must be tau:dilation");
          c.pathways.push_back({parse_int(p.substr(0, colon)), parse_int(p.substr(colon + 1))});
        }
      } else if (key == "connectivity") c.connectivity = graph::parse_connectivity(value);
      else if (key == "masks") c.masks = parse_bool(value);
      else if (key == "aggregation") c.aggregation = parse_aggregation(value);
      else if (key == "normalization") c.normalization = graph::parse_normalization_mode(value);
      else if (key == "double_at_collapse") c.double_at_collapse = parse_bool(value);
      else if (key == "factorized_pathway") c.factorized_pathway = parse_bool(value);
      else if (key == "tcn_dilations") c.tcn_dilations = parse_int_list(value);
      else throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      if (std::string_view(e.what()).starts_with("network config line")) throw;
      throw std::invalid_argument(where() + e.what());
    }
  }
  c.validate();
  return c;
}

NetworkConfig load_network_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open network config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_network_config(buf.str());
}

std::string serialize(const NetworkConfig& c) {
  std::ostringstream out;
  out << "topology = " << c.topology << '\n'
      << "in_channels = " << c.in_channels << '\n'
      << "num_classes = " << c.num_classes << '\n'
      << "channels = " << join(c.channels) << '\n'
      << "gcn_scales = " << c.gcn_scales << '\n'
      << "g3d_scales = " << c.g3d_scales << '\n'
      << "pathways = ";
  for (std::size_t i = 0; i < c.pathways.size(); ++i) {
    out << (i ? "," : "") << c.pathways[i].tau << ':' << c.pathways[i].dilation;
  }
  out << '\n'
      << "connectivity = " << graph::to_string(c.connectivity) << '\n'
      << "masks = " << (c.masks ? "true" : "false") << '\n'
      << "aggregation = " << to_string(c.aggregation) << '\n'
      << "normalization = " << graph::to_string(c.normalization) << '\n'
      << "double_at_collapse = " << (c.double_at_collapse ? "true" : "false") << '\n'
      << "factorized_pathway = " << (c.factorized_pathway ? "true" : "false") << '\n'
      << "tcn_dilations = " << join(c.tcn_dilations) << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Network

MSG3DNet::MSG3DNet(const NetworkConfig& config, std::uint64_t seed)
    : MSG3DNet(config, Rng(seed)) {}

MSG3DNet::MSG3DNet(const NetworkConfig& config, Rng rng)
    : config_((config.validate(), config)),
      topology_(graph::resolve_topology(config.topology)),
      classifier(static_cast<std::size_t>(config.channels.back()),
                 static_cast<std::size_t>(config.num_classes), true, rng) {
  BlockOptions options;
  options.pathways = config.pathways;
  options.factorized = config.factorized_pathway;
  options.double_at_collapse = config.double_at_collapse;
  options.gcn_scales = config.gcn_scales;
  options.masks = config.masks;
  options.aggregation = config.aggregation;
  options.normalization = config.normalization;
  options.g3d = G3DOptions{config.g3d_scales, config.connectivity, config.aggregation,
                           config.normalization, config.masks};
  options.tcn_dilations = config.tcn_dilations;
  std::size_t c_in = static_cast<std::size_t>(config.in_channels);
  for (std::size_t i = 0; i < config.channels.size(); ++i) {
    const auto c_out = static_cast<std::size_t>(config.channels[i]);
    blocks.emplace_back(topology_, c_in, c_out, i == 0 ? 1 : 2, options, rng);
    c_in = c_out;
  }
}

Tensor MSG3DNet::features(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(2) != static_cast<std::size_t>(topology_.num_joints()) ||
      x.dim(3) != static_cast<std::size_t>(config_.in_channels)) {
    throw std::invalid_argument("network: expects x[B,T," + std::to_string(topology_.num_joints()) +
                                "," + std::to_string(config_.in_channels) + "], got " +
                                ad::to_string(x.shape()));
  }
  Tensor h = x;
  for (STGCBlock& b : blocks) h = b.forward(h, training);
  return ad::mean_pool(h);
}

Tensor MSG3DNet::forward(const Tensor& x, bool training) {
  return classifier.forward(features(x, training));
}

std::vector<ad::Parameter> MSG3DNet::parameters() const {
  StateCollector c;
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("blocks." + std::to_string(i), c);
  classifier.collect("classifier", c);
  return c.parameters;
}

std::vector<ad::NamedTensor> MSG3DNet::state() const {
  StateCollector c;
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("blocks." + std::to_string(i), c);
  classifier.collect("classifier", c);
  std::vector<ad::NamedTensor> out;
  for (auto& p : c.parameters) out.push_back({p.name, p.tensor});
  for (auto& b : c.buffers) out.push_back(b);
  return out;
}

std::size_t count_parameters(const std::vector<ad::Parameter>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

std::size_t count_parameters(const MSG3DNet& net) { return count_parameters(net.parameters()); }

}  // namespace msg3d::nn
