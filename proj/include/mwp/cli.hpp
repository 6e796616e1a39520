#pragma once

namespace mwp {

// Full command-line front end (generate | train | eval | predict | explain |
// gradcheck | ablate). Returns the process exit code: 0 success,
// 1 validation/config, 2 IO, 3 numeric failure.
int run_cli(int argc, const char* const* argv);

}  // namespace mwp
