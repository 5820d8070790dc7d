// Everything in one include.
#pragma once

#include "dcl/autograd.hpp"
#include "dcl/certificate.hpp"
#include "dcl/encoder.hpp"
#include "dcl/error.hpp"
#include "dcl/evaluation.hpp"
#include "dcl/geometry.hpp"
#include "dcl/losses.hpp"
#include "dcl/numeric.hpp"
#include "dcl/rng.hpp"
#include "dcl/text.hpp"
#include "dcl/training.hpp"
#include "dcl/verification.hpp"
#include "dcl/worldmodel.hpp"
