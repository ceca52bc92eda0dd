#pragma once

#include <string>

#include "starnet/trainer.hpp"

namespace starnet {

// Architecture grammar:
//   ff:<w0>-<w1>-...-<wK>        one layer per adjacent pair, w0 deepest
//   conv:<c>x<h>x<w>:k<k>m<m>u<u>[-k<k>m<m>u<u>...]
//                                 first triple is the deepest input shape;
//                                 each following spec consumes the previous
//                                 layer's output shape
// Throws ConfigError on malformed input.
Architecture parse_architecture(const std::string& description, double slope);

// Full command-line entry point (train / infer / reconstruct / validate /
// diagnose). Returns the process exit code:
//   0 success, 2 usage/config, 3 architecture violations, 4 file I/O or
//   format, 5 solver/numerical, 6 anything else.
int run_cli(int argc, const char* const* argv);

} // namespace starnet
