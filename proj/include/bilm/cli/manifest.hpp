#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bilm/errors.hpp"

namespace bilm::cli {

inline constexpr const char* kToolkitVersion = "1.0.0";

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: digest init failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), std::streamsize(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), std::size_t(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", md[i]);
    hex += two;
  }
  return hex;
}

// Record of one run: full effective configuration, seed, digests of every
// input, and the files written.
class Manifest {
 public:
  explicit Manifest(std::string subcommand) {
    j_["tool"] = "bilm";
    j_["version"] = kToolkitVersion;
    j_["subcommand"] = std::move(subcommand);
    j_["inputs"] = nlohmann::json::array();
    j_["outputs"] = nlohmann::json::array();
  }

  void set_config(const std::vector<std::pair<std::string, std::string>>& kv) {
    nlohmann::json c = nlohmann::json::object();
    nlohmann::json argv = nlohmann::json::array({"bilm", j_["subcommand"]});
    for (const auto& [k, v] : kv) {
      c[k] = v;
      // Config-file entries are already expanded into the other keys.
      if (!v.empty() && k != "config") argv.push_back("--" + k + "=" + v);
    }
    j_["config"] = std::move(c);
    j_["command"] = std::move(argv);
  }

  void set(const std::string& key, nlohmann::json value) { j_[key] = std::move(value); }

  void add_input(const std::string& role, const std::string& path) {
    j_["inputs"].push_back({{"role", role},
                            {"path", path},
                            {"bytes", std::filesystem::file_size(path)},
                            {"sha256", sha256_file(path)}});
  }

  void add_output(const std::string& path) { j_["outputs"].push_back(path); }

  const nlohmann::json& json() const { return j_; }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j_.dump(2) << "\n";
    if (!out) throw DataError("write failed for " + path);
  }

 private:
  nlohmann::json j_;
};

inline std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

}  // namespace bilm::cli
