#include <cmath>
#include <cstring>
#include <optional>

#include "crossrec/ddsr.hpp"
#include "crossrec/grad_check.hpp"
#include "crossrec/rng.hpp"
#include "doctest.h"

using namespace crossrec;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from_values({rows, cols}, std::move(v), requires_grad);
}

// Loop-based re-implementation of the domain-state attention, independent
// of the tensor ops, for use as an oracle.
std::vector<double> ddsr_oracle(const std::vector<double>& h, std::size_t n, std::size_t k,
                                const std::vector<std::int64_t>& domains,
                                std::size_t num_domains, const DdsrParams& params,
                                bool exclude_absent = false) {
  auto wkv = params.w_kv.values();
  auto bkv = params.b_kv.values();
  auto wq = params.w_q.values();
  auto bq = params.b_q.values();

  std::vector<double> keys(n * k), vals(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 2 * k; ++c) {
      double acc = bkv[c];
      for (std::size_t l = 0; l < k; ++l) acc += h[i * k + l] * wkv[l * 2 * k + c];
      if (c < k) {
        keys[i * k + c] = acc;
      } else {
        vals[i * k + (c - k)] = acc;
      }
    }
  }

  std::vector<double> summed(n * k, 0.0);
  for (std::size_t d = 0; d < num_domains; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<std::size_t> pos = phi(domains, static_cast<std::int64_t>(d), i);
      if (exclude_absent && !pos) continue;
      std::vector<double> state(k, 0.0);
      if (pos) {
        for (std::size_t c = 0; c < k; ++c) state[c] = h[*pos * k + c];
      }
      std::vector<double> q(k);
      for (std::size_t c = 0; c < k; ++c) {
        double acc = bq[c];
        for (std::size_t l = 0; l < k; ++l) acc += state[l] * wq[l * k + c];
        q[c] = acc;
      }
      std::vector<double> scores(i + 1);
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < k; ++c) acc += q[c] * keys[j * k + c];
        scores[j] = acc / std::sqrt(static_cast<double>(k));
        mx = std::max(mx, scores[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        z += scores[j];
      }
      for (std::size_t j = 0; j <= i; ++j) {
        double w = scores[j] / z;
        for (std::size_t c = 0; c < k; ++c) summed[i * k + c] += w * vals[j * k + c];
      }
    }
  }

  std::vector<double> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t c = 0; c < k; ++c) mean += summed[i * k + c];
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double dev = summed[i * k + c] - mean;
      var += dev * dev;
    }
    var /= static_cast<double>(k);
    double inv = 1.0 / std::sqrt(var + 1e-6);
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] = (summed[i * k + c] - mean) * inv;
  }
  return out;
}

}  // namespace

TEST_CASE("phi selects the last matching position") {
  // domains (1,2,1,3) in the paper's 1-based indexing; 0-based here.
  std::vector<std::int64_t> domains{1, 2, 1, 3};
  CHECK(phi(domains, 1, 3) == std::size_t{2});
  CHECK_FALSE(phi(domains, 3, 1).has_value());
  CHECK(phi(domains, 2, 3) == std::size_t{1});
  CHECK(phi(domains, 1, 0) == std::size_t{0});
  CHECK_THROWS_AS(phi(domains, 1, 4), ShapeError);
}

TEST_CASE("domain state matrix") {
  Rng rng(3);
  Tape tape;

  SUBCASE("single domain copies every prefix state") {
    Tensor h = random_matrix(4, 3, rng, false);
    auto states = build_domain_states(tape, h, {0, 0, 0, 0}, 2);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(states.is_present(0, i));
      CHECK_FALSE(states.is_present(1, i));
      for (std::size_t c = 0; c < 3; ++c) {
        CHECK(states.states.at({0, i, c}) == h.at({i, c}));
        CHECK(states.states.at({1, i, c}) == 0.0);
      }
    }
  }

  SUBCASE("last-seen positions are gathered") {
    Tensor h = random_matrix(3, 2, rng, false);
    auto states = build_domain_states(tape, h, {1, 2, 1}, 3);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(states.states.at({1, 1, c}) == h.at({0, c}));
      CHECK(states.states.at({1, 2, c}) == h.at({2, c}));
      CHECK(states.states.at({2, 1, c}) == h.at({1, c}));
      CHECK(states.states.at({0, 1, c}) == 0.0);
    }
  }

  SUBCASE("sweep equals brute-force phi on random sequences") {
    for (int trial = 0; trial < 1000; ++trial) {
      std::size_t n = 1 + static_cast<std::size_t>(rng.bounded(200));
      std::size_t num_domains = 1 + static_cast<std::size_t>(rng.bounded(5));
      std::vector<std::int64_t> domains(n);
      for (auto& d : domains) d = static_cast<std::int64_t>(rng.bounded(num_domains));
      Tensor h = random_matrix(n, 2, rng, false);
      Tape t;
      auto states = build_domain_states(t, h, domains, num_domains);
      for (std::size_t d = 0; d < num_domains; ++d) {
        bool seen = false;
        for (std::size_t i = 0; i < n; ++i) {
          auto pos = phi(domains, static_cast<std::int64_t>(d), i);
          REQUIRE(states.is_present(d, i) == pos.has_value());
          REQUIRE((seen ? states.is_present(d, i) : true));  // monotone presence
          seen = states.is_present(d, i);
          for (std::size_t c = 0; c < 2; ++c) {
            double expected = pos ? h.at({*pos, c}) : 0.0;
            REQUIRE(states.states.at({d, i, c}) == expected);
          }
        }
      }
    }
  }
}

TEST_CASE("ddsr_attend single position equals layer_norm of V") {
  Rng rng(7);
  std::size_t k = 4;
  DdsrParams params = DdsrParams::init(k, rng);
  Tensor h = random_matrix(1, k, rng, false);
  Tape tape;
  auto states = build_domain_states(tape, h, {0}, 1);
  Tensor c = ddsr_attend(tape, h, states, params);

  Tensor kv = tape.add(tape.matmul(h, params.w_kv), params.b_kv);
  Tensor v = tape.slice_last(kv, k, k);
  Tensor expected = tape.layer_norm(v);
  for (std::size_t j = 0; j < k; ++j) {
    CHECK(c.at({0, j}) == doctest::Approx(expected.at({0, j})).epsilon(1e-12));
  }
}

TEST_CASE("ddsr_attend matches the hand-unrolled oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t k = 2 + static_cast<std::size_t>(rng.bounded(3));
    std::size_t n = 1 + static_cast<std::size_t>(rng.bounded(6));
    std::size_t num_domains = 1 + static_cast<std::size_t>(rng.bounded(3));
    bool exclude = rng.uniform() < 0.5;
    std::vector<std::int64_t> domains(n);
    for (auto& d : domains) d = static_cast<std::int64_t>(rng.bounded(num_domains));
    Rng prng = rng.child(trial);
    DdsrParams params = DdsrParams::init(k, prng);
    Tensor h = random_matrix(n, k, rng, false);

    Tape tape;
    auto states = build_domain_states(tape, h, domains, num_domains);
    Tensor c = ddsr_attend(tape, h, states, params, 0, exclude);

    std::vector<double> hv(h.values().begin(), h.values().end());
    auto expected = ddsr_oracle(hv, n, k, domains, num_domains, params, exclude);
    for (std::size_t i = 0; i < n * k; ++i) {
      REQUIRE(c.values()[i] == doctest::Approx(expected[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("ddsr output is causal") {
  Rng rng(13);
  std::size_t k = 4, n = 6;
  DdsrParams params = DdsrParams::init(k, rng);
  std::vector<std::int64_t> domains{0, 1, 2, 0, 1, 2};

  auto run = [&](const Tensor& h) {
    Tape tape;
    auto states = build_domain_states(tape, h, domains, 3);
    Tensor c = ddsr_attend(tape, h, states, params);
    return std::vector<double>(c.values().begin(), c.values().end());
  };
  Tensor h = random_matrix(n, k, rng, false);
  auto base = run(h);
  std::vector<double> perturbed(h.values().begin(), h.values().end());
  for (std::size_t c = 0; c < k; ++c) perturbed[(n - 1) * k + c] -= 2.5;
  for (std::size_t c = 0; c < k; ++c) perturbed[(n - 2) * k + c] += 1.5;
  auto changed = run(Tensor::from_values({n, k}, std::move(perturbed)));
  CHECK(std::memcmp(base.data(), changed.data(), (n - 2) * k * sizeof(double)) == 0);
}

TEST_CASE("padding yields zero rows and excluded keys") {
  Rng rng(17);
  std::size_t k = 4, n = 5, pad = 2;
  DdsrParams params = DdsrParams::init(k, rng);
  std::vector<std::int64_t> domains{0, 0, 1, 0, 1};
  Tensor h = random_matrix(n, k, rng, false);

  Tape tape;
  auto states = build_domain_states(tape, h, domains, 2);
  Tensor weights;
  Tensor c = ddsr_attend(tape, h, states, params, pad, false, &weights);
  for (std::size_t i = 0; i < pad; ++i) {
    for (std::size_t col = 0; col < k; ++col) CHECK(c.at({i, col}) == 0.0);
  }
  for (std::size_t d = 0; d < 2; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j < pad || i < pad || j > i) CHECK(weights.at({d, i, j}) == 0.0);
      }
    }
  }
}

TEST_CASE("combine is an elementwise sum") {
  Rng rng(19);
  Tape tape;
  Tensor a = random_matrix(3, 4, rng, false);
  Tensor zero = Tensor::zeros({3, 4});
  Tensor same = combine(tape, a, zero);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same.values()[i] == a.values()[i]);
  Tensor other = combine(tape, zero, a);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(other.values()[i] == a.values()[i]);
  Tensor b = random_matrix(3, 4, rng, false);
  Tensor ab = combine(tape, a, b);
  Tensor ba = combine(tape, b, a);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(ab.values()[i] == ba.values()[i]);
  CHECK_THROWS_AS(combine(tape, a, Tensor::zeros({4, 3})), ShapeError);
}

TEST_CASE("gradient through ddsr_attend") {
  Rng rng(23);
  std::size_t k = 4, n = 5;
  DdsrParams params = DdsrParams::init(k, rng);
  std::vector<std::int64_t> domains{0, 1, 0, 2, 1};
  Tensor h = random_matrix(n, k, rng);

  for (bool exclude : {false, true}) {
    CAPTURE(exclude);
    auto f = [&](Tape& t) {
      auto states = build_domain_states(t, h, domains, 3);
      Tensor c = ddsr_attend(t, h, states, params, 0, exclude);
      return t.scale(t.sum(t.mul(c, c)), 1.0 / static_cast<double>(c.size()));
    };
    auto rep = grad_check(f, {{"h", h},
                              {"w_kv", params.w_kv},
                              {"b_kv", params.b_kv},
                              {"w_q", params.w_q},
                              {"b_q", params.b_q}});
    CAPTURE(rep.worst_param);
    CHECK(rep.max_rel_err <= 1e-4);
  }
}
