// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <initializer_list>
#include <string_view>

namespace npva {

/// Throws ConfigError unless `j` is an object whose keys all appear in
/// `known`. Catches misspelled config fields that would otherwise be ignored.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                std::string_view what);

} // namespace npva
