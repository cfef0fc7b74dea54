#include "crossrec/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "crossrec/rng.hpp"

namespace crossrec {

void SynthConfig::validate() const {
  if (num_domains < 1 || items_per_domain < 1) {
    throw ConfigError("synthetic: num_domains and items_per_domain must be >= 1");
  }
  if (seq_len_min < 1 || seq_len_max < seq_len_min) {
    throw ConfigError("synthetic: need 1 <= seq_len_min <= seq_len_max");
  }
  if (cross_affinity < 0.0 || cross_affinity > 1.0) {
    throw ConfigError("synthetic: cross_affinity must be in [0, 1]");
  }
}

namespace {

struct UserDraw {
  std::vector<std::int64_t> items;
  std::vector<std::int64_t> domains;
};

// Rank concentrated around the user's preferred rank with a geometric tail.
std::size_t affinity_rank(double latent, std::size_t m, Rng& rng) {
  auto preferred = static_cast<std::int64_t>(latent * static_cast<double>(m));
  if (preferred >= static_cast<std::int64_t>(m)) preferred = static_cast<std::int64_t>(m) - 1;
  double tail = std::max(1.0, static_cast<double>(m) / 32.0);
  double u = rng.uniform();
  while (u <= 0.0) u = rng.uniform();
  auto offset = static_cast<std::int64_t>(-tail * std::log(u));
  if (rng.uniform() < 0.5) offset = -offset;
  std::int64_t rank = preferred + offset;
  rank = std::clamp<std::int64_t>(rank, 0, static_cast<std::int64_t>(m) - 1);
  return static_cast<std::size_t>(rank);
}

UserDraw draw_user(const SynthConfig& cfg, Rng& rng) {
  double latent = rng.uniform();
  std::vector<double> mix(cfg.num_domains);
  double total = 0.0;
  for (auto& w : mix) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    w = -std::log(u);  // Dirichlet(1) via normalized exponentials
    total += w;
  }
  for (auto& w : mix) w /= total;

  std::size_t len = static_cast<std::size_t>(
      rng.range(static_cast<std::int64_t>(cfg.seq_len_min), static_cast<std::int64_t>(cfg.seq_len_max)));
  UserDraw draw;
  draw.items.reserve(len);
  draw.domains.reserve(len);
  for (std::size_t step = 0; step < len; ++step) {
    double u = rng.uniform();
    std::size_t domain = cfg.num_domains - 1;
    double acc = 0.0;
    for (std::size_t d = 0; d < cfg.num_domains; ++d) {
      acc += mix[d];
      if (u < acc) {
        domain = d;
        break;
      }
    }
    std::size_t rank;
    if (rng.uniform() < cfg.cross_affinity) {
      rank = affinity_rank(latent, cfg.items_per_domain, rng);
    } else {
      rank = rng.bounded(cfg.items_per_domain);
    }
    draw.items.push_back(static_cast<std::int64_t>(domain * cfg.items_per_domain + rank));
    draw.domains.push_back(static_cast<std::int64_t>(domain));
  }
  return draw;
}

}  // namespace

Corpus generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  Catalog& cat = corpus.catalog;
  cat.domain_items.resize(cfg.num_domains);
  for (std::size_t d = 0; d < cfg.num_domains; ++d) {
    cat.domain_ids.push_back("d" + std::to_string(d));
    cat.domain_index.emplace(cat.domain_ids.back(), static_cast<std::int64_t>(d));
    for (std::size_t r = 0; r < cfg.items_per_domain; ++r) {
      auto idx = static_cast<std::int64_t>(cat.item_ids.size());
      cat.item_ids.push_back("i" + std::to_string(idx));
      cat.item_index.emplace(cat.item_ids.back(), idx);
      cat.domain_of_item.push_back(static_cast<std::int64_t>(d));
      cat.domain_items[d].push_back(idx);
    }
  }

  Rng root(cfg.seed);
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    Rng user_rng = root.child(u);
    UserDraw draw = draw_user(cfg, user_rng);
    UserSequence seq;
    seq.user = static_cast<std::int64_t>(u);
    seq.items = std::move(draw.items);
    seq.domains = std::move(draw.domains);
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

std::vector<InteractionEvent> synthetic_events(const SynthConfig& cfg) {
  Corpus corpus = generate_synthetic(cfg);
  std::vector<InteractionEvent> events;
  for (const auto& seq : corpus.sequences) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      events.push_back({"u" + std::to_string(seq.user),
                        corpus.catalog.item_ids[static_cast<std::size_t>(seq.items[i])],
                        corpus.catalog.domain_ids[static_cast<std::size_t>(seq.domains[i])],
                        static_cast<std::int64_t>(i)});
    }
  }
  return events;
}

}  // namespace crossrec
