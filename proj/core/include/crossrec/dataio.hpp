#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "crossrec/errors.hpp"

namespace crossrec {

struct InteractionEvent {
  std::string user;
  std::string item;
  std::string domain;
  std::int64_t timestamp = 0;
};

// Post-preprocessing user history: parallel item and domain index sequences.
struct UserSequence {
  std::int64_t user = 0;
  std::vector<std::int64_t> items;
  std::vector<std::int64_t> domains;

  std::size_t size() const { return items.size(); }
};

struct Catalog {
  std::vector<std::string> item_ids;    // index -> original id (may be synthesized)
  std::vector<std::string> domain_ids;
  std::unordered_map<std::string, std::int64_t> item_index;
  std::unordered_map<std::string, std::int64_t> domain_index;
  std::vector<std::int64_t> domain_of_item;          // total over item indices
  std::vector<std::vector<std::int64_t>> domain_items;  // partition of the item space

  std::size_t num_items() const { return domain_of_item.size(); }
  std::size_t num_domains() const { return domain_items.size(); }
};

struct Corpus {
  Catalog catalog;
  std::vector<UserSequence> sequences;
};

// Event-log wire format: one `user<TAB>item<TAB>domain<TAB>timestamp` per
// line, lines starting with '#' ignored.
std::vector<InteractionEvent> parse_events(std::istream& in, const std::string& source_name);
std::vector<InteractionEvent> ingest(const std::string& path);
void write_events(std::ostream& out, const std::vector<InteractionEvent>& events);
void write_events_file(const std::string& path, const std::vector<InteractionEvent>& events);

// Merge-then-filter pipeline: per-user histories sorted by timestamp (file
// order breaks ties), truncated to the most recent max_len events, then
// users/items below min_count occurrences and sequences shorter than
// min_len are removed, iterated jointly to a fixed point. Indices are
// densely assigned over the survivors.
Corpus preprocess(const std::vector<InteractionEvent>& events, std::size_t min_count = 5,
                  std::size_t min_len = 10, std::size_t max_len = 200);

struct EvalTarget {
  std::int64_t user = 0;       // index into the train sequence vector
  std::int64_t target_item = 0;
  std::int64_t target_domain = 0;
};

struct LeaveOneOut {
  std::vector<UserSequence> train;   // first n-1 items of each input sequence
  std::vector<EvalTarget> targets;   // held-out final items, aligned with train
};

LeaveOneOut split_leave_one_out(const std::vector<UserSequence>& sequences);

// Preprocessed corpus format: header `#users=<N> items=<M> domains=<D>`,
// then `user_idx<TAB>item,item,...<TAB>domain,domain,...` per user.
void write_corpus(std::ostream& out, const Corpus& corpus);
void write_corpus_file(const std::string& path, const Corpus& corpus);
Corpus read_corpus(std::istream& in, const std::string& source_name);
Corpus read_corpus_file(const std::string& path);

// Validates the item/domain-partition invariant of every sequence.
void check_corpus(const Corpus& corpus);

}  // namespace crossrec
