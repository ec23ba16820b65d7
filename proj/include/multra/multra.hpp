#pragma once

// Umbrella header.

#include "multra/decompose.hpp"
#include "multra/io.hpp"
#include "multra/learning.hpp"
#include "multra/metrics.hpp"
#include "multra/patches.hpp"
#include "multra/simulate.hpp"
#include "multra/threading.hpp"
#include "multra/types.hpp"
