#pragma once

// Command-line front end. Subcommands: train, impute, predict, synth, eval,
// split. Exit codes: 0 success, 1 user error, 2 numerical / internal failure.

namespace hlvae {

// Default output directory when --out is not given.
inline constexpr const char* kOutputDirEnv = "HLVAE_OUTPUT_DIR";

int run_cli(int argc, const char* const* argv);

}  // namespace hlvae
