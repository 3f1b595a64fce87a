#pragma once

namespace e2r {

// Subcommands: degrade, train, restore, eval, sweep, adapter.
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
int cli_main(int argc, const char* const* argv);

}  // namespace e2r
