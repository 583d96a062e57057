// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "aqpim/pim_sim.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace aqpim {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUser = 2;

// Entry point of the `aqpim` tool. Errors are reported on `err` as
// {"error": {"kind": ..., "message": ...}}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Fidelity ablation arms.
struct FidelityArm {
  std::string name;
  bool weighted = false;
  bool presort = false;
};
FidelityArm fidelity_arm_from_string(const std::string& s);

// Strict parse of {"model": {...}, "batch", "seq_in", "seq_out"}.
Workload workload_from_json(const std::string& text);

}  // namespace aqpim
