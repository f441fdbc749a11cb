#pragma once

#include "difftrace/adam.hpp"
#include "difftrace/camera.hpp"
#include "difftrace/chamfer.hpp"
#include "difftrace/diffmath.hpp"
#include "difftrace/error.hpp"
#include "difftrace/field.hpp"
#include "difftrace/fit.hpp"
#include "difftrace/image.hpp"
#include "difftrace/image_io.hpp"
#include "difftrace/inverse.hpp"
#include "difftrace/mlp.hpp"
#include "difftrace/objective.hpp"
#include "difftrace/parallel.hpp"
#include "difftrace/serialize.hpp"
#include "difftrace/shading.hpp"
#include "difftrace/tracer.hpp"
#include "difftrace/bench.hpp"
#include "difftrace/gradcheck.hpp"
#include "difftrace/scene.hpp"
#include "difftrace/app.hpp"
