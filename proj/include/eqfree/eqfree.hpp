#pragma once

#include "eqfree/expr.hpp"
#include "eqfree/system.hpp"
#include "eqfree/forms.hpp"
#include "eqfree/sets.hpp"
#include "eqfree/sdp.hpp"
#include "eqfree/lmi.hpp"
#include "eqfree/certificates.hpp"
#include "eqfree/incremental.hpp"
#include "eqfree/config.hpp"
#include "eqfree/pipeline.hpp"
