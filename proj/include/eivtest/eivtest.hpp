#pragma once

#include "eivtest/bfgs.hpp"
#include "eivtest/chi2.hpp"
#include "eivtest/elliptical.hpp"
#include "eivtest/errors.hpp"
#include "eivtest/fit.hpp"
#include "eivtest/inference.hpp"
#include "eivtest/io.hpp"
#include "eivtest/likelihood.hpp"
#include "eivtest/linalg.hpp"
#include "eivtest/model.hpp"
#include "eivtest/montecarlo.hpp"
#include "eivtest/random.hpp"
#include "eivtest/skovgaard.hpp"
