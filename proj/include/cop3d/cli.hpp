#pragma once

#include <string>
#include <vector>

namespace cop3d::cli {

/// Entry point behind the cop3d binary. Returns the process exit code:
/// 0 success, 1 usage error, 2 config error, 3 runtime error. Diagnostics go
/// to stderr; results go to files under --out (and stdout where noted).
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

} // namespace cop3d::cli
