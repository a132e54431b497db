#include "brace/manifest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>

#include "brace/error.hpp"
#include "json.hpp"

namespace brace {

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error(ErrorCode::kIo, "sha1 context allocation failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error(ErrorCode::kIo, "sha1 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["subcommand"] = subcommand;
  j["config_path"] = config_path;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["config_hash"] = config_hash;
  j["arguments"] = arguments;
  return j.dump(2);
}

void write_manifest(const RunManifest& m) {
  const std::filesystem::path dir(m.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + (dir / "manifest.json").string());
  out << m.to_json() << '\n';
}

}  // namespace brace
