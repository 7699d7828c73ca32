#pragma once

#include <string>

namespace ropedit_tests {

// Path to the built ropedit CLI binary, when CTest passed one.
const std::string& cli_binary_path();

}  // namespace ropedit_tests
