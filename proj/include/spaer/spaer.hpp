#pragma once

#include "spaer/autodiff.hpp"
#include "spaer/csv_io.hpp"
#include "spaer/diffeo.hpp"
#include "spaer/eqfeatures.hpp"
#include "spaer/errors.hpp"
#include "spaer/field.hpp"
#include "spaer/geometry.hpp"
#include "spaer/model_io.hpp"
#include "spaer/motion.hpp"
#include "spaer/parallel.hpp"
#include "spaer/procrustes.hpp"
#include "spaer/rng.hpp"
#include "spaer/simulator.hpp"
#include "spaer/svd3.hpp"
#include "spaer/svg.hpp"
#include "spaer/temporal.hpp"
#include "spaer/tracker.hpp"
#include "spaer/volume.hpp"
#include "spaer/volume_io.hpp"
