// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <string_view>

namespace prefedit {

/// The three annotation axes. The order is also the storage order of score triples.
enum class Dimension { kQuality = 0, kAlignment = 1, kPreservation = 2 };

inline constexpr std::array<Dimension, 3> kAllDimensions = {
    Dimension::kQuality, Dimension::kAlignment, Dimension::kPreservation};

std::string_view to_string(Dimension d);
Dimension dimension_from_string(std::string_view s);

inline constexpr std::size_t index_of(Dimension d) { return static_cast<std::size_t>(d); }

}  // namespace prefedit
