#pragma once

#include "kvbench/spec_cards.hpp"
#include "kvbench/value_fabric.hpp"
#include "kvbench/workload.hpp"
#include "kvbench/store_api.hpp"
#include "kvbench/baseline_store.hpp"
#include "kvbench/reference/reference_store.hpp"
#include "kvbench/hack_gallery.hpp"
#include "kvbench/stores.hpp"
#include "kvbench/gate.hpp"
#include "kvbench/bench.hpp"
#include "kvbench/report.hpp"
