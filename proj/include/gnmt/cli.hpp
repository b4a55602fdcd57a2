#pragma once

namespace gnmt {

// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
// 5 completed with decode warnings.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitDecodeWarnings = 5;

int run_cli(int argc, const char* const* argv);

}  // namespace gnmt
