#pragma once

// Finite-difference verification of batch_loss gradients for a whole
// architecture.

#include <cstdint>
#include <string>
#include <vector>

#include "roboka/model.hpp"

namespace roboka {

struct GradcheckOptions {
  int instances = 20;
  int entries_per_group = 4;  // random entries, plus the largest |grad| entry
  int batch = 4;
  int d_emb = 4;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Gradients smaller than this are compared in absolute terms.
  double abs_floor = 1e-5;
};

struct GroupCheck {
  std::string name;
  int checked = 0;
  // Entries whose one-sided differences disagree (ReLU / max-pool kink within
  // the step); excluded from max_rel_err.
  int nonsmooth = 0;
  int failures = 0;
  double max_rel_err = 0;
};

struct GradcheckReport {
  ArchTag arch{};
  int instances = 0;
  std::vector<GroupCheck> groups;
  double max_rel_err = 0;
  bool passed = false;
};

double relative_error(double analytic, double numeric, double abs_floor);

GradcheckReport gradcheck(ArchTag arch, std::uint64_t seed, const GradcheckOptions& opts = {});

}  // namespace roboka
