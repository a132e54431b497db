#ifndef BRACE_MANIFEST_HPP_
#define BRACE_MANIFEST_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace brace {

// Hash git would give the bytes as a blob: sha1("blob <size>\0" + content), hex.
std::string git_blob_hash(const std::string& content);

struct RunManifest {
  std::string subcommand;
  std::string config_path;  // empty when defaults were used
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string config_hash;  // git blob hash of the canonical config text
  std::map<std::string, std::string> arguments;

  std::string to_json() const;
};

// Writes <output_dir>/manifest.json, creating the directory.
void write_manifest(const RunManifest& m);

}  // namespace brace

#endif  // BRACE_MANIFEST_HPP_
