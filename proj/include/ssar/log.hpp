// SPDX-License-Identifier: Apache-2.0
//
// stderr logging. The level comes from SSAR_LOG (error, info, debug) unless
// set explicitly; the default is error.
#pragma once

#include <string>

namespace ssar::log {

enum class Level { error = 0, info = 1, debug = 2 };

Level level();
void set_level(Level level);
/// Parses error|info|debug; throws std::invalid_argument otherwise.
Level parse_level(const std::string& text);

void error(const std::string& message);
void info(const std::string& message);
void debug(const std::string& message);

}  // namespace ssar::log
