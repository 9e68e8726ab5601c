#pragma once

// Federated representation-ensemble learning simulator: heterogeneous
// clients with small private encoders collaboratively train a larger server
// encoder pair by exchanging only representations of a shared public set.

#include "fedrep/adam.hpp"
#include "fedrep/aggregation.hpp"
#include "fedrep/config.hpp"
#include "fedrep/encoder.hpp"
#include "fedrep/errors.hpp"
#include "fedrep/experiment.hpp"
#include "fedrep/federation.hpp"
#include "fedrep/gradcheck.hpp"
#include "fedrep/losses.hpp"
#include "fedrep/matrix.hpp"
#include "fedrep/metrics.hpp"
#include "fedrep/round_log.hpp"
#include "fedrep/rng.hpp"
#include "fedrep/synth.hpp"
