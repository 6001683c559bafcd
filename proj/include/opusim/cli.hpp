#pragma once

// Command-line front end.  Subcommands:
//   pe-validate     error sweeps of the dot kernels, CSV per grid cell
//   dataflow-check  fused kernels against their unfused references
//   kv-bandwidth    KV traffic simulation on a synthetic or file trace
//   speedup         analytic prefill/decode throughput model
//   e2e             toy model run: calibrate, execute, trace, simulate
// Exit codes: 0 ok, 1 validation failure or detected fault, 2 usage or
// configuration error.

namespace opusim {

int cli_main(int argc, char** argv);

}  // namespace opusim
