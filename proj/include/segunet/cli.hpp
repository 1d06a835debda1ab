#pragma once

namespace segunet::cli {

// Exit codes: 0 success, 1 unexpected failure, 2 config error, 3 data error,
// 4 training abort (non-finite loss), 5 checkpoint error. Each failure writes
// one machine-parseable "error: <kind>: <message>" line to stderr.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitTrainAbort = 4;
inline constexpr int kExitCheckpoint = 5;

int run(int argc, const char* const* argv);

}  // namespace segunet::cli
