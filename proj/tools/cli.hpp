#pragma once

#include "msg3d/data.hpp"
#include "msg3d/layers.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace msg3d::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kNumerical = 3 };

/// Runs one command line (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Network config plus `run.*` keys of a run directory's config.snapshot.
struct RunSnapshot {
  nn::NetworkConfig network;
  std::map<std::string, std::string> run;

  /// @throws std::invalid_argument if the key is absent.
  const std::string& at(const std::string& key) const;
};

RunSnapshot parse_snapshot(const std::string& text);
RunSnapshot load_snapshot(const std::filesystem::path& run_dir);

/// Network used when no config file is given: 4 classes on the NTU layout,
/// channels 24/48/96, one tau=3 window pathway.
nn::NetworkConfig toy_network();

}  // namespace msg3d::cli
