#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "prefopt/policy.hpp"
#include "prefopt/preference_data.hpp"

namespace prefopt::testing {

inline std::vector<PreferenceTriple> random_batch(const Vocabulary& vocab, Rng& rng,
                                                  std::size_t n, int max_response = 4) {
  std::vector<PreferenceTriple> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(random_triple(vocab, rng, 1, 2, 1, max_response));
  }
  return out;
}

inline Policy with_logits(Vocabulary vocab, int order, const std::vector<double>& logits) {
  Policy p(vocab, order);
  std::copy(logits.begin(), logits.end(), p.logits().begin());
  return p;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("prefopt-" + tag + "-" + std::to_string(std::rand()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace prefopt::testing
