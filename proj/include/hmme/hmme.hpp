#ifndef HMME_HMME_HPP
#define HMME_HMME_HPP

// Everything except the CLI plumbing.
#include "hmme/derivatives.hpp"
#include "hmme/design.hpp"
#include "hmme/error.hpp"
#include "hmme/inference.hpp"
#include "hmme/linalg.hpp"
#include "hmme/mme.hpp"
#include "hmme/model.hpp"
#include "hmme/varcomp.hpp"

#endif  // HMME_HMME_HPP
