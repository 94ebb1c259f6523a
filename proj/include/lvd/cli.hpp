#pragma once

namespace lvd {

// Entry point behind the lvd binary. Exit codes: 0 success, 2 usage,
// 3 configuration, 4 runtime.
int cli_main(int argc, const char* const* argv);

}  // namespace lvd
