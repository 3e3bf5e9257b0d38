#pragma once

#include "fff/accounting.hpp"  // IWYU pragma: export
#include "fff/bench.hpp"       // IWYU pragma: export
#include "fff/checks.hpp"      // IWYU pragma: export
#include "fff/encoder.hpp"     // IWYU pragma: export
#include "fff/engine.hpp"      // IWYU pragma: export
#include "fff/errors.hpp"      // IWYU pragma: export
#include "fff/io.hpp"          // IWYU pragma: export
#include "fff/oracle.hpp"      // IWYU pragma: export
#include "fff/tensor.hpp"      // IWYU pragma: export
#include "fff/weights.hpp"     // IWYU pragma: export
