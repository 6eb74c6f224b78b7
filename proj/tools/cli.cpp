#include "cli.hpp"

#include "msg3d/graph_core.hpp"
#include "msg3d/spacetime_graph.hpp"
#include "msg3d/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace msg3d::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::istringstream in(s);
  for (std::string p; std::getline(in, p, sep);) parts.push_back(p);
  return parts;
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a number, got '" + s + "'");
  }
  return v;
}

long long to_integer(const std::string& s) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected an integer, got '" + s + "'");
  }
  return v;
}

std::string read_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + what + " '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw UsageError(what + " '" + path + "' does not exist");
}

// Writes to --out when given, otherwise to the command's stdout.
template <typename Fn>
void emit(const std::string& out_path, std::ostream& out, Fn&& fn) {
  if (out_path.empty()) {
    fn(out);
    return;
  }
  std::ofstream file(out_path, std::ios::binary);
  if (!file) throw UsageError("cannot write '" + out_path + "'");
  fn(file);
}

// ---------------------------------------------------------------------------
// graph

struct GraphArgs {
  std::string topology = "ntu25";
  std::string out;
  bool self_loops = false;
  std::string normalize;
  int k = 1;
  bool normalized = false;
  int tau = 3;
  int dilation = 1;
  std::string variant = "cross_spacetime";
  bool power = false;
  bool disentangled = false;
  int center = -1;
  std::string normalization = "sym_self_loop";
};

void add_common_graph_options(CLI::App* cmd, GraphArgs& a) {
  cmd->add_option("--topology", a.topology,
                  "Topology file or preset: ntu25, kinetics18, pathN, starN")
      ->capture_default_str();
  cmd->add_option("--out", a.out, "Write the CSV here instead of stdout");
}

void graph_adj(const GraphArgs& a, std::ostream& out) {
  const auto topo = graph::resolve_topology(a.topology);
  graph::AdjacencyMatrix m = graph::build_adjacency(topo);
  if (!a.normalize.empty()) {
    m = graph::normalize(m, graph::parse_normalization_mode(a.normalize));
  } else if (a.self_loops) {
    m = graph::add_self_loops(m);
  }
  emit(a.out, out, [&](std::ostream& o) { graph::write_csv(o, m.values()); });
}

void graph_kadj(const GraphArgs& a, std::ostream& out) {
  if (a.k < 0) throw UsageError("--k must be >= 0");
  const auto topo = graph::resolve_topology(a.topology);
  const graph::KAdjacencySet family(topo, a.k);
  const auto& m = a.normalized ? family.normalized().back() : family.raw().back();
  emit(a.out, out, [&](std::ostream& o) { graph::write_csv(o, m.values()); });
}

void graph_st_dump(const GraphArgs& a, std::ostream& out) {
  graph::WindowSpec spec;
  spec.tau = a.tau;
  spec.dilation = a.dilation;
  spec.validate();
  const auto topo = graph::resolve_topology(a.topology);
  const auto a_tilde = graph::add_self_loops(graph::build_adjacency(topo));
  const auto st = graph::build_variant(a_tilde, a.tau, graph::parse_connectivity(a.variant));
  emit(a.out, out, [&](std::ostream& o) { graph::write_csv(o, st.raw().values()); });
}

void graph_profile(const GraphArgs& a, std::ostream& out) {
  if (a.power == a.disentangled) throw UsageError("profile needs exactly one of --power, --disentangled");
  if (a.k < 0) throw UsageError("--k must be >= 0");
  const auto topo = graph::resolve_topology(a.topology);
  const int center = a.center < 0 ? topo.center_joint() : a.center;
  if (center >= topo.num_joints()) throw UsageError("--center outside the topology");
  const auto m = a.power
                     ? graph::powered_adjacency(graph::build_adjacency(topo), a.k,
                                                graph::parse_normalization_mode(a.normalization))
                     : graph::KAdjacencySet(topo, a.k).normalized().back();
  const auto dist = graph::hop_distances(topo)[static_cast<std::size_t>(center)];
  const int reach = *std::max_element(dist.begin(), dist.end());
  const auto profile = graph::weight_distance_profile(m, topo, center);
  emit(a.out, out, [&](std::ostream& o) {
    o << "distance,mean_weight\n";
    for (const auto& p : profile) {
      if (p.distance <= reach) o << p.distance << ',' << fmt(p.mean_weight) << '\n';
    }
  });
}

// ---------------------------------------------------------------------------
// data and run directories

struct DataArgs {
  std::string train_data;
  std::string test_data;
  std::size_t train_samples = 800;
  std::size_t test_samples = 400;
  std::size_t frames = 64;
  std::optional<std::uint64_t> data_seed;
  std::string stream = "joint";
};

data::SkeletonSequence to_stream(const data::SkeletonSequence& s, const std::string& stream,
                                 const graph::SkeletonTopology& topo) {
  return stream == "bone" ? data::derive_bones(s, topo) : s;
}

std::vector<data::SkeletonSequence> preprocess(const std::vector<data::SkeletonSequence>& raw,
                                               const std::string& stream,
                                               const graph::SkeletonTopology& topo,
                                               const data::ChannelScaler& scaler) {
  std::vector<data::SkeletonSequence> out;
  out.reserve(raw.size());
  for (const auto& s : raw) {
    out.push_back(scaler.apply(data::translate_to_center(to_stream(s, stream, topo), topo.center_joint())));
  }
  return out;
}

void check_compatible(const std::vector<data::SkeletonSequence>& seqs, const nn::NetworkConfig& net,
                      const graph::SkeletonTopology& topo) {
  for (const auto& s : seqs) {
    if (s.joints != static_cast<std::size_t>(topo.num_joints())) {
      throw UsageError("sequence has " + std::to_string(s.joints) + " joints, topology has " +
                       std::to_string(topo.num_joints()));
    }
    if (s.channels != static_cast<std::size_t>(net.in_channels)) {
      throw UsageError("sequence has " + std::to_string(s.channels) +
                       " channels, network expects " + std::to_string(net.in_channels));
    }
    if (s.label < 0 || s.label >= net.num_classes) {
      throw UsageError("label " + std::to_string(s.label) + " outside the network's " +
                       std::to_string(net.num_classes) + " classes");
    }
  }
}

std::vector<data::SkeletonSequence> load_data_file(const std::string& path) {
  require_file(path, "data file");
  return data::load_sequences(path);
}

data::DatasetSplit raw_data_from_run(const RunSnapshot& snap, const graph::SkeletonTopology& topo) {
  if (snap.at("run.data") == "files") {
    data::DatasetSplit split;
    split.test = load_data_file(snap.at("run.test_data"));
    return split;
  }
  return data::synth_split(static_cast<std::size_t>(to_integer(snap.at("run.train_samples"))),
                           static_cast<std::size_t>(to_integer(snap.at("run.test_samples"))),
                           static_cast<std::uint64_t>(to_integer(snap.at("run.data_seed"))), topo,
                           static_cast<std::size_t>(to_integer(snap.at("run.frames"))));
}

data::ChannelScaler scaler_from_run(const RunSnapshot& snap) {
  data::ChannelScaler scaler;
  for (const auto& v : split(snap.at("run.scale"), ',')) scaler.scale.push_back(to_double(v));
  return scaler;
}

struct LoadedRun {
  RunSnapshot snapshot;
  graph::SkeletonTopology topology;
  nn::MSG3DNet net;
};

LoadedRun load_run(const std::string& dir, const std::string& checkpoint) {
  if (!fs::is_directory(dir)) throw UsageError("run directory '" + dir + "' does not exist");
  RunSnapshot snap = load_snapshot(dir);
  const std::string ckpt = checkpoint.empty() ? (fs::path(dir) / "model.ckpt").string() : checkpoint;
  require_file(ckpt, "checkpoint");
  nn::MSG3DNet net(snap.network, static_cast<std::uint64_t>(to_integer(snap.at("run.seed"))));
  auto state = net.state();
  try {
    ad::restore_values(ad::load_checkpoint(fs::path(ckpt)), state);
  } catch (const std::runtime_error& e) {
    throw UsageError("checkpoint '" + ckpt + "': " + e.what());
  }
  auto topo = net.topology();
  return {std::move(snap), std::move(topo), std::move(net)};
}

train::Evaluation evaluate_checked(nn::MSG3DNet& net, const std::vector<data::SkeletonSequence>& seqs) {
  auto e = train::evaluate(net, seqs);
  for (double v : e.scores.values()) {
    if (!std::isfinite(v)) throw train::NumericalError("non-finite scores");
  }
  return e;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::uint64_t seed = 1;
  int epochs = 50;
  std::size_t batch_size = 32;
  double lr = 0.05;
  std::vector<int> milestones{30, 40};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool linear_lr_scaling = false;
  int workers = 1;
  std::optional<double> target_accuracy;
  DataArgs data;
};

nn::NetworkConfig network_from(const TrainArgs& a) {
  nn::NetworkConfig base = toy_network();
  if (!a.config.empty()) {
    require_file(a.config, "network config");
    base = nn::parse_network_config(read_file(a.config, "network config"));
  }
  std::string overrides;
  for (const auto& s : a.sets) overrides += s + '\n';
  return nn::parse_network_config(overrides, base);
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.data.stream != "joint" && a.data.stream != "bone") throw UsageError("--stream must be joint or bone");
  if (a.data.train_data.empty() != a.data.test_data.empty()) {
    throw UsageError("--train-data and --test-data go together");
  }
  if (!a.data.train_data.empty()) {
    require_file(a.data.train_data, "data file");
    require_file(a.data.test_data, "data file");
  }
  if (a.epochs < 0) throw UsageError("--epochs must be >= 0");
  if (a.batch_size == 0) throw UsageError("--batch-size must be positive");
  if (a.workers < 1) throw UsageError("--workers must be >= 1");
  const nn::NetworkConfig config = network_from(a);
  const auto topo = graph::resolve_topology(config.topology);
  const std::uint64_t data_seed = a.data.data_seed.value_or(a.seed);

  data::DatasetSplit raw;
  if (a.data.train_data.empty()) {
    if (config.num_classes != data::kSyntheticClasses) {
      throw UsageError("synthetic data has 4 classes, network has " + std::to_string(config.num_classes));
    }
    if (a.data.frames < 4) throw UsageError("--frames must be >= 4");
    raw = data::synth_split(a.data.train_samples, a.data.test_samples, data_seed, topo, a.data.frames);
  } else {
    raw.train = load_data_file(a.data.train_data);
    raw.test = load_data_file(a.data.test_data);
  }
  if (raw.train.empty()) throw UsageError("no training sequences");
  check_compatible(raw.train, config, topo);
  check_compatible(raw.test, config, topo);

  std::vector<data::SkeletonSequence> translated;
  for (const auto& s : raw.train) {
    translated.push_back(data::translate_to_center(to_stream(s, a.data.stream, topo), topo.center_joint()));
  }
  const auto scaler = data::ChannelScaler::fit(translated);
  const auto train_set = preprocess(raw.train, a.data.stream, topo, scaler);
  const auto test_set = preprocess(raw.test, a.data.stream, topo, scaler);

  fs::create_directories(a.out);
  {
    std::ofstream snap(fs::path(a.out) / "config.snapshot", std::ios::binary);
    if (!snap) throw UsageError("cannot write to run directory '" + a.out + "'");
    snap << "# network\n" << nn::serialize(config) << "# run\n";
    snap << "run.seed = " << a.seed << '\n'
         << "run.epochs = " << a.epochs << '\n'
         << "run.batch_size = " << a.batch_size << '\n'
         << "run.lr = " << fmt(a.lr) << '\n'
         << "run.milestones = " << join(a.milestones) << '\n'
         << "run.momentum = " << fmt(a.momentum) << '\n'
         << "run.weight_decay = " << fmt(a.weight_decay) << '\n'
         << "run.linear_lr_scaling = " << (a.linear_lr_scaling ? "true" : "false") << '\n'
         << "run.workers = " << a.workers << '\n'
         << "run.deterministic = " << (a.workers == 1 ? "true" : "false") << '\n';
    if (a.workers > 1) {
      snap << "# workers > 1: batch-norm statistics are computed per worker slice, so results\n"
              "# depend on the worker count and differ from a single-worker run.\n";
    }
    snap << "run.stream = " << a.data.stream << '\n';
    if (a.data.train_data.empty()) {
      snap << "run.data = synthetic\n"
           << "run.train_samples = " << a.data.train_samples << '\n'
           << "run.test_samples = " << a.data.test_samples << '\n'
           << "run.frames = " << a.data.frames << '\n'
           << "run.data_seed = " << data_seed << '\n';
    } else {
      snap << "run.data = files\n"
           << "run.train_data = " << fs::absolute(a.data.train_data).string() << '\n'
           << "run.test_data = " << fs::absolute(a.data.test_data).string() << '\n';
    }
    snap << "run.scale = " << join(scaler.scale) << '\n';
  }

  nn::MSG3DNet net(config, a.seed);
  std::ofstream metrics(fs::path(a.out) / "metrics.csv", std::ios::binary);
  if (!metrics) throw UsageError("cannot write to run directory '" + a.out + "'");
  const std::string header = "epoch,lr,train_loss,test_accuracy\n";
  metrics << header;
  out << header;

  train::TrainOptions opts;
  opts.epochs = a.epochs;
  opts.batch_size = a.batch_size;
  opts.lr = a.lr;
  opts.milestones = a.milestones;
  opts.momentum = a.momentum;
  opts.weight_decay = a.weight_decay;
  opts.linear_lr_scaling = a.linear_lr_scaling;
  opts.seed = a.seed;
  opts.target_accuracy = a.target_accuracy;
  opts.workers = a.workers;
  opts.on_epoch = [&](const train::EpochMetrics& m) {
    const std::string row = std::to_string(m.epoch) + ',' + fmt(m.lr) + ',' + fmt(m.train_loss) + ',' +
                            fmt(m.test_accuracy) + '\n';
    metrics << row << std::flush;
    out << row << std::flush;
  };
  train::train(net, train_set, test_set, opts);
  ad::save_checkpoint(fs::path(a.out) / "model.ckpt", net.state());
  return kOk;
}

// ---------------------------------------------------------------------------
// eval and fuse

struct EvalArgs {
  std::string run;
  std::string checkpoint;
  std::string data;
  std::string scores;
};

std::vector<data::SkeletonSequence> raw_test_data(const std::string& data_path, const LoadedRun& r) {
  return data_path.empty() ? raw_data_from_run(r.snapshot, r.topology).test : load_data_file(data_path);
}

std::vector<data::SkeletonSequence> prepared_test_data(const std::vector<data::SkeletonSequence>& raw,
                                                       const LoadedRun& r) {
  check_compatible(raw, r.snapshot.network, r.topology);
  return preprocess(raw, r.snapshot.at("run.stream"), r.topology, scaler_from_run(r.snapshot));
}

std::size_t correct(const std::vector<int>& predictions, const std::vector<data::SkeletonSequence>& seqs) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) n += predictions[i] == seqs[i].label;
  return n;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  LoadedRun r = load_run(a.run, a.checkpoint);
  const auto raw = raw_test_data(a.data, r);
  if (raw.empty()) throw UsageError("no test sequences");
  const auto seqs = prepared_test_data(raw, r);
  const auto e = evaluate_checked(r.net, seqs);
  out << "samples,correct,accuracy\n"
      << seqs.size() << ',' << correct(e.predictions, seqs) << ',' << fmt(e.accuracy) << '\n';
  if (!a.scores.empty()) {
    emit(a.scores, out, [&](std::ostream& o) {
      const auto classes = e.scores.dim(1);
      o << "label";
      for (std::size_t c = 0; c < classes; ++c) o << ",score_" << c;
      o << '\n';
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        o << seqs[i].label;
        for (std::size_t c = 0; c < classes; ++c) o << ',' << fmt(e.scores.values()[i * classes + c]);
        o << '\n';
      }
    });
  }
  return kOk;
}

struct FuseArgs {
  std::string joint;
  std::string bone;
  std::string data;
};

int cmd_fuse(const FuseArgs& a, std::ostream& out) {
  LoadedRun joint = load_run(a.joint, "");
  LoadedRun bone = load_run(a.bone, "");
  if (joint.snapshot.network.num_classes != bone.snapshot.network.num_classes) {
    throw UsageError("class count mismatch: " + std::to_string(joint.snapshot.network.num_classes) +
                     " vs " + std::to_string(bone.snapshot.network.num_classes));
  }
  if (joint.topology.num_joints() != bone.topology.num_joints()) {
    throw UsageError("the two runs use different topologies");
  }
  const auto raw = raw_test_data(a.data, joint);
  if (raw.empty()) throw UsageError("no test sequences");
  const auto joint_seqs = prepared_test_data(raw, joint);
  const auto bone_seqs = prepared_test_data(raw, bone);
  const auto ej = evaluate_checked(joint.net, joint_seqs);
  const auto eb = evaluate_checked(bone.net, bone_seqs);
  const auto fused = data::fuse_two_stream(ej.scores, eb.scores);
  out << "stream,accuracy\n"
      << "joint," << fmt(ej.accuracy) << '\n'
      << "bone," << fmt(eb.accuracy) << '\n'
      << "fused," << fmt(train::accuracy(fused, joint_seqs)) << '\n';
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------

const std::string& RunSnapshot::at(const std::string& key) const {
  const auto it = run.find(key);
  if (it == run.end()) throw std::invalid_argument("config.snapshot lacks '" + key + "'");
  return it->second;
}

RunSnapshot parse_snapshot(const std::string& text) {
  RunSnapshot snap;
  std::string network;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string::npos && line.compare(first, 4, "run.") == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("config.snapshot: malformed line '" + line + "'");
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t\r"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        return s;
      };
      snap.run[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
      network += '\n';
    } else {
      network += line + '\n';
    }
  }
  snap.network = nn::parse_network_config(network);
  return snap;
}

RunSnapshot load_snapshot(const fs::path& run_dir) {
  const fs::path path = run_dir / "config.snapshot";
  require_file(path.string(), "snapshot");
  return parse_snapshot(read_file(path, "snapshot"));
}

nn::NetworkConfig toy_network() {
  nn::NetworkConfig c;
  c.num_classes = data::kSyntheticClasses;
  c.channels = {24, 48, 96};
  c.pathways = {{3, 1}};
  return c;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale spatial-temporal graph convolution toolkit", "msg3d"};
  app.require_subcommand(1);

  GraphArgs g;
  auto* graph_cmd = app.add_subcommand("graph", "Graph construction and diagnostics as CSV");
  graph_cmd->require_subcommand(1);
  auto* adj = graph_cmd->add_subcommand("adj", "Binary skeleton adjacency A");
  add_common_graph_options(adj, g);
  adj->add_flag("--self-loops", g.self_loops, "Emit A + I");
  adj->add_option("--normalize", g.normalize, "Emit the normalized form: sym_self_loop, random_walk, sym_laplacian");
  auto* kadj = graph_cmd->add_subcommand("kadj", "k-hop adjacency with self-loops");
  add_common_graph_options(kadj, g);
  kadj->add_option("--k", g.k, "Hop distance")->required();
  kadj->add_flag("--normalized", g.normalized, "Emit the symmetric-normalized matrix");
  auto* st = graph_cmd->add_subcommand("st-dump", "Spatial-temporal window adjacency (tau*N square)");
  add_common_graph_options(st, g);
  st->add_option("--tau", g.tau, "Window size")->capture_default_str();
  st->add_option("--dilation", g.dilation, "Window dilation")->capture_default_str();
  st->add_option("--variant", g.variant, "cross_spacetime, grid_like or grid_like_dense_self")
      ->capture_default_str();
  auto* profile = graph_cmd->add_subcommand("profile", "Mean weight per hop distance from a center joint");
  add_common_graph_options(profile, g);
  profile->add_flag("--power", g.power, "Profile of the k-th power of the normalized adjacency");
  profile->add_flag("--disentangled", g.disentangled, "Profile of the normalized k-hop adjacency");
  profile->add_option("--k", g.k, "Power or hop distance")->required();
  profile->add_option("--center", g.center, "Center joint (default: topology center)");
  profile->add_option("--normalization", g.normalization, "Normalization for --power")->capture_default_str();

  TrainArgs t;
  auto* train_cmd = app.add_subcommand("train", "Train a network and write a run directory");
  train_cmd->add_option("--out", t.out, "Run directory (config.snapshot, metrics.csv, model.ckpt)")->required();
  train_cmd->add_option("--config", t.config,
                        "Network config file (key = value); without it a 4-class toy network is used");
  train_cmd->add_option("--set", t.sets, "Override a network config key: --set key=value (repeatable)")
      ->allow_extra_args(false);
  train_cmd->add_option("--seed", t.seed, "Seed for initialization, shuffling and synthetic data")
      ->capture_default_str();
  train_cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", t.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--lr", t.lr, "Base learning rate")->capture_default_str();
  train_cmd->add_option("--milestones", t.milestones, "Epochs at which the lr decays by 10x")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--momentum", t.momentum, "SGD momentum")->capture_default_str();
  train_cmd->add_option("--weight-decay", t.weight_decay, "L2 weight decay")->capture_default_str();
  train_cmd->add_flag("--linear-lr-scaling", t.linear_lr_scaling, "Scale lr by batch-size/32");
  train_cmd->add_option("--workers", t.workers,
                        "Data-parallel worker threads; > 1 changes batch-norm statistics")
      ->capture_default_str();
  train_cmd->add_option("--target-accuracy", t.target_accuracy, "Stop once test accuracy reaches this");
  train_cmd->add_option("--train-data", t.data.train_data, "Training sequence file (default: synthetic)");
  train_cmd->add_option("--test-data", t.data.test_data, "Test sequence file");
  train_cmd->add_option("--train-samples", t.data.train_samples, "Synthetic training samples")
      ->capture_default_str();
  train_cmd->add_option("--test-samples", t.data.test_samples, "Synthetic test samples")->capture_default_str();
  train_cmd->add_option("--frames", t.data.frames, "Synthetic sequence length")->capture_default_str();
  train_cmd->add_option("--data-seed", t.data.data_seed, "Synthetic data seed (default: --seed)");
  train_cmd->add_option("--stream", t.data.stream, "Input stream: joint or bone")->capture_default_str();

  EvalArgs e;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a run's checkpoint");
  eval_cmd->add_option("--run", e.run, "Run directory")->required();
  eval_cmd->add_option("--checkpoint", e.checkpoint, "Checkpoint (default: <run>/model.ckpt)");
  eval_cmd->add_option("--data", e.data, "Test sequence file (default: the run's test data)");
  eval_cmd->add_option("--scores", e.scores, "Write label and softmax scores per sample as CSV");

  FuseArgs f;
  auto* fuse_cmd = app.add_subcommand("fuse", "Sum softmax scores of a joint and a bone run");
  fuse_cmd->add_option("--joint", f.joint, "Joint-stream run directory")->required();
  fuse_cmd->add_option("--bone", f.bone, "Bone-stream run directory")->required();
  fuse_cmd->add_option("--data", f.data, "Test sequence file (default: the joint run's test data)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (adj->parsed()) graph_adj(g, out);
    else if (kadj->parsed()) graph_kadj(g, out);
    else if (st->parsed()) graph_st_dump(g, out);
    else if (profile->parsed()) graph_profile(g, out);
    else if (train_cmd->parsed()) return cmd_train(t, out);
    else if (eval_cmd->parsed()) return cmd_eval(e, out);
    else if (fuse_cmd->parsed()) return cmd_fuse(f, out);
    return kOk;
  } catch (const train::NumericalError& ex) {
    err << "error: " << ex.what() << '\n';
    return kNumerical;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kUsage;
  }
}

}  // namespace msg3d::cli
