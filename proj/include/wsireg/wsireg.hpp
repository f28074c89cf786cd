#pragma once

/// @file wsireg.hpp
/// Umbrella header.

#include "wsireg/affine.hpp"
#include "wsireg/annotations.hpp"
#include "wsireg/config.hpp"
#include "wsireg/error.hpp"
#include "wsireg/field.hpp"
#include "wsireg/initial_alignment.hpp"
#include "wsireg/memory.hpp"
#include "wsireg/nonrigid.hpp"
#include "wsireg/pipeline.hpp"
#include "wsireg/png.hpp"
#include "wsireg/preprocessing.hpp"
#include "wsireg/pyramid_io.hpp"
#include "wsireg/raster.hpp"
#include "wsireg/similarity.hpp"
#include "wsireg/synthetic.hpp"
#include "wsireg/tiff.hpp"
#include "wsireg/warping.hpp"
