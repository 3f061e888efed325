#pragma once

#include "tagattack/attack.hpp"
#include "tagattack/candidates.hpp"
#include "tagattack/config.hpp"
#include "tagattack/encoder.hpp"
#include "tagattack/errors.hpp"
#include "tagattack/gcn.hpp"
#include "tagattack/graph.hpp"
#include "tagattack/influence.hpp"
#include "tagattack/linalg.hpp"
#include "tagattack/perturb.hpp"
#include "tagattack/prune.hpp"
#include "tagattack/rng.hpp"
#include "tagattack/shapley.hpp"
#include "tagattack/stealth.hpp"
#include "tagattack/synthetic.hpp"
#include "tagattack/text.hpp"
#include "tagattack/victim.hpp"
