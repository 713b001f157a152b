#pragma once

#include "billiard/geometry.hpp"

namespace testutil {

/// Two-disk table with exactly pinned geometry numbers (|dD| = pi). Used for
/// closed-form unit examples; it is not corridor-free.
inline billiard::Table pinned_table() {
    return billiard::build_table({{{0.0, 0.0}, 0.3}, {{0.5, 0.5}, 0.2}});
}

/// The corridor-free default table used by all experiments.
inline billiard::Table default_table() {
    return billiard::build_table({{{0.0, 0.0}, 0.38}, {{0.5, 0.5}, 0.17}});
}

}  // namespace testutil
