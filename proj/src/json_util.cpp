// Copyright Contributors to the npva project
// SPDX-License-Identifier: Apache-2.0
#include "npva/json_util.hpp"

#include "npva/error.hpp"

#include <algorithm>
#include <string>

namespace npva {

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                std::string_view what) {
    if (!j.is_object()) {
        throw ConfigError(std::string(what) + ": expected a JSON object");
    }
    for (const auto& item : j.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw ConfigError(std::string(what) + ": unknown field '" + item.key() + "'");
        }
    }
}

} // namespace npva
