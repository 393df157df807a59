#pragma once

#include "efc/baselines.hpp"
#include "efc/benchmark_data.hpp"
#include "efc/bigint.hpp"
#include "efc/bytes.hpp"
#include "efc/encrypted_fir.hpp"
#include "efc/error.hpp"
#include "efc/fir.hpp"
#include "efc/he/bfv.hpp"
#include "efc/he/certify.hpp"
#include "efc/he/mock.hpp"
#include "efc/he/params.hpp"
#include "efc/he/poly.hpp"
#include "efc/he/wire.hpp"
#include "efc/hinf_design.hpp"
#include "efc/io/json.hpp"
#include "efc/lmi.hpp"
#include "efc/loop/scenario.hpp"
#include "efc/loop/service.hpp"
#include "efc/loop/transport.hpp"
#include "efc/loop/wire.hpp"
#include "efc/lti.hpp"
#include "efc/quantizer.hpp"
