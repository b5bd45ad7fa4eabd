#pragma once

// SHA-256 file digests (OpenSSL) and git-describe lookup for artifact stamping.
// Link against OpenSSL::Crypto when including this header.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "deeptruck/error.hpp"

namespace deeptruck {

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::Io, "sha256: digest initialization failed");
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &n);
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < n; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

/// Regular files under `root`, relative and sorted, skipping `exclude_dirs`
/// (top-level names) and the files named in `exclude_files`.
inline std::vector<std::filesystem::path> list_files(const std::filesystem::path& root,
                                                     const std::vector<std::string>& exclude_dirs = {},
                                                     const std::vector<std::string>& exclude_files = {}) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), root);
    const std::string top = rel.begin()->string();
    if (std::find(exclude_dirs.begin(), exclude_dirs.end(), top) != exclude_dirs.end()) continue;
    if (std::find(exclude_files.begin(), exclude_files.end(), rel.generic_string()) != exclude_files.end()) continue;
    out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// "<sha256>  <relative path>" lines, in sorted path order.
inline std::string checksum_manifest(const std::filesystem::path& root, const std::vector<std::string>& exclude_dirs,
                                     const std::vector<std::string>& exclude_files) {
  std::string s;
  for (const auto& rel : list_files(root, exclude_dirs, exclude_files))
    s += sha256_file(root / rel) + "  " + rel.generic_string() + "\n";
  return s;
}

#ifndef DEEPTRUCK_GIT_DESCRIBE
#define DEEPTRUCK_GIT_DESCRIBE "unknown"
#endif

/// `git describe --always --dirty` of the source tree, or the value baked in
/// at configure time when git is unavailable.
inline std::string git_describe(const std::filesystem::path& source_dir = {}) {
  std::string cmd = "git";
#ifdef DEEPTRUCK_SOURCE_DIR
  const std::filesystem::path dir = source_dir.empty() ? std::filesystem::path(DEEPTRUCK_SOURCE_DIR) : source_dir;
#else
  const std::filesystem::path& dir = source_dir;
#endif
  if (!dir.empty()) cmd += " -C '" + dir.string() + "'";
  cmd += " describe --always --dirty 2>/dev/null";
  std::string out;
  if (FILE* p = popen(cmd.c_str(), "r")) {
    char buf[256];
    while (std::fgets(buf, sizeof buf, p)) out += buf;
    pclose(p);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out.empty() ? DEEPTRUCK_GIT_DESCRIBE : out;
}

}  // namespace deeptruck
