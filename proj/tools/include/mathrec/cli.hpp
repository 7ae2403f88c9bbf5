// SPDX-License-Identifier: Apache-2.0
//
// The `mathrec` command line: build-data, train, eval, predict and
// synth-corpus subcommands over the core library.
#pragma once

#include <CLI11.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace mathrec::cli {

struct Options {
  std::string log_level = "info";

  struct {
    std::string corpus;
    std::string out;
    std::vector<std::string> fonts{"default"};
    std::vector<int> dpis{80, 120, 160};
    std::vector<int> buckets{0, 8, 16, 32, 64, 128, 256, 1024};
    int per_bucket = 0;
    std::uint64_t seed = 0;
    std::string vocab;
    std::string renderer;
    int workers = 1;
    int min_frequency = 1;
  } build;

  struct {
    std::string config;
    std::string resume;
    std::vector<std::string> overrides;
  } train;

  struct {
    std::string manifest;
    std::string checkpoint;
    int beam = 1;
    std::string out;
    int max_len = 0;
    int workers = 1;
  } eval;

  struct {
    std::string image;
    std::string checkpoint;
    int beam = 1;
    int max_len = 0;
  } predict;

  struct {
    std::size_t count = 100;
    std::string out;
    std::uint64_t seed = 0;
    int min_tokens = 1;
    int max_tokens = 32;
    std::string subset;
  } synth;
};

/// Builds the command tree bound to `opts`.
std::unique_ptr<CLI::App> make_app(Options& opts);

/// Parses and runs; returns the process exit code. Failures print one
/// `error: <Kind>: <message>` line on stderr.
int run(int argc, const char* const* argv);

}  // namespace mathrec::cli
