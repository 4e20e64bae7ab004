#pragma once

#include "mtkv/core.hpp"

namespace mtkv {

/// Coefficients of the simulated cost model. These are calibration knobs for
/// the discrete-event engine, not measurements; defaults are chosen so that
/// transfer and compute land in a realistic ratio for a PCIe-attached device.
struct CostModel {
  double bus_bandwidth = 25e9;   // bytes/s, host<->device
  double tx_setup = 10e-6;       // s per DMA transaction
  double host_bandwidth = 50e9;  // bytes/s, host-side copies
  double page_op = 50e-9;        // s per page for scatter/gather kernels
  double attn_coeff = 2e-10;     // s per (new x total) token pair per layer
  double linear_coeff = 1e-7;    // s per fresh token per layer
  double embed_coeff = 5e-8;     // s per fresh token
  double layout_coeff = 5e-8;    // s per fresh token

  // Fixed per-batch overheads (s), one per workflow step.
  double meta_fixed = 1e-4;
  double strip_fixed = 5e-5;
  double embed_fixed = 1e-4;
  double layout_fixed = 1e-4;
  double await_fixed = 5e-5;
  double update_fixed = 5e-5;
  double commit_per_chunk = 5e-6;
  double offload_submit = 3e-5;
  double post_fixed = 2e-4;

  void validate() const {
    MTKV_CHECK(bus_bandwidth > 0 && host_bandwidth > 0,
               "cost model: bandwidths must be positive");
    MTKV_CHECK(tx_setup >= 0 && page_op >= 0 && attn_coeff >= 0 &&
                   linear_coeff >= 0 && embed_coeff >= 0 && layout_coeff >= 0,
               "cost model: coefficients must be nonnegative");
  }
};

}  // namespace mtkv
