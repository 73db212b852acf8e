#pragma once

// Umbrella header.

#include "elmono/types.hpp"
#include "elmono/mesh.hpp"
#include "elmono/elasticity.hpp"
#include "elmono/hash.hpp"
#include "elmono/ntd.hpp"
#include "elmono/frechet.hpp"
#include "elmono/monotest.hpp"
#include "elmono/io.hpp"
#include "elmono/pipeline.hpp"
#include "elmono/verify.hpp"
