#pragma once

#include "vsms/error.hpp"
#include "vsms/mesh.hpp"
#include "vsms/fem.hpp"
#include "vsms/random_field.hpp"
#include "vsms/gmsfem.hpp"
#include "vsms/vs.hpp"
#include "vsms/ensemble.hpp"
#include "vsms/coarse.hpp"
#include "vsms/mcmc.hpp"
#include "vsms/diagnostics.hpp"
#include "vsms/config.hpp"
#include "vsms/parallel.hpp"
#include "vsms/pipeline.hpp"
