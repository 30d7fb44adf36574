// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unistd.h>

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ddp/ddp.hpp"

namespace fixture {

inline std::shared_ptr<const ddp::Schema> one_hot_schema(std::vector<std::size_t> vocabs,
                                                         bool with_item = true) {
  std::vector<ddp::FieldSpec> f;
  for (std::size_t i = 0; i < vocabs.size(); ++i)
    f.push_back({"f" + std::to_string(i), vocabs[i], false, ddp::FieldEncoding::Identity, 0});
  std::optional<std::string> item;
  if (with_item) item = "f0";
  return std::make_shared<const ddp::Schema>(std::move(f), item);
}

/// Fresh scratch directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ddp_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// A short stream suitable for protocol tests: fields of vocab 20.
inline ddp::SynthResult small_stream(std::size_t periods, std::size_t per_period, std::uint64_t seed,
                                     std::vector<std::size_t> drift = {}) {
  ddp::SynthConfig sc;
  sc.fields = 3;
  sc.vocab = {20};
  sc.periods = periods;
  sc.instances_per_period = per_period;
  sc.seed = seed;
  sc.drift_periods = std::move(drift);
  return ddp::synth_drift(sc);
}

inline ddp::RunConfig small_run(ddp::BaselineMode mode, std::size_t periods, std::size_t warmup) {
  ddp::RunConfig rc;
  rc.mode = mode;
  rc.periods = periods;
  rc.warmup = warmup;
  rc.batch_size = 128;
  rc.embedding_dim = 4;
  rc.hidden = {16, 16};
  rc.bins = 5;
  rc.check_leakage = true;
  return rc;
}

}  // namespace fixture
