// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <string_view>

namespace qcaption::util {

/// Replaces {name} placeholders from `vars`. Braces that do not enclose an
/// identifier are literal. Throws TemplateError for unknown placeholders.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& vars);

}  // namespace qcaption::util
