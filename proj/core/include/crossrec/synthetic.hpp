#pragma once

#include <cstdint>
#include <vector>

#include "crossrec/dataio.hpp"

namespace crossrec {

// Desk-scale synthetic corpus. Each user carries a latent preference in
// [0,1) shared across domains; with probability cross_affinity an item draw
// concentrates around the latent-preferred rank inside the step's domain,
// otherwise it is uniform within the domain. The domain of each step comes
// from a per-user mixture. The shared latent is the only cross-domain
// signal, so cross_affinity=0 makes domains statistically independent.
struct SynthConfig {
  std::size_t num_users = 500;
  std::size_t num_domains = 3;
  std::size_t items_per_domain = 100;
  std::size_t seq_len_min = 10;
  std::size_t seq_len_max = 50;
  double cross_affinity = 0.5;
  std::uint64_t seed = 42;

  void validate() const;
};

Corpus generate_synthetic(const SynthConfig& cfg);

// Same generation emitted in the event-log wire format; timestamps are the
// per-user step index.
std::vector<InteractionEvent> synthetic_events(const SynthConfig& cfg);

}  // namespace crossrec
