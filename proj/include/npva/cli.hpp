// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace npva {

/// Entry point of the `npva` tool. Returns the process exit code; errors are
/// reported on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace npva
