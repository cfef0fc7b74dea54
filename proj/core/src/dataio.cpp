#include "crossrec/dataio.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace crossrec {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

std::int64_t parse_int(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    std::int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(context + ": cannot parse integer from '" + s + "'");
  }
}

}  // namespace

std::vector<InteractionEvent> parse_events(std::istream& in, const std::string& source_name) {
  std::vector<InteractionEvent> events;
  std::unordered_map<std::string, std::string> item_domain;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw DataError(source_name + ": line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    for (int f = 0; f < 3; ++f) {
      if (fields[f].empty()) {
        throw DataError(source_name + ": line " + std::to_string(line_no) + ": empty field");
      }
    }
    std::int64_t ts = parse_int(fields[3], source_name + ": line " + std::to_string(line_no));
    if (ts < 0) {
      throw DataError(source_name + ": line " + std::to_string(line_no) + ": negative timestamp");
    }
    auto [it, inserted] = item_domain.emplace(fields[1], fields[2]);
    if (!inserted && it->second != fields[2]) {
      throw DataError(source_name + ": line " + std::to_string(line_no) + ": item '" + fields[1] +
                      "' appears under domains '" + it->second + "' and '" + fields[2] + "'");
    }
    events.push_back({fields[0], fields[1], fields[2], ts});
  }
  return events;
}

std::vector<InteractionEvent> ingest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event log: " + path);
  return parse_events(in, path);
}

void write_events(std::ostream& out, const std::vector<InteractionEvent>& events) {
  out << "# user\titem\tdomain\ttimestamp\n";
  for (const auto& e : events) {
    out << e.user << '\t' << e.item << '\t' << e.domain << '\t' << e.timestamp << '\n';
  }
}

void write_events_file(const std::string& path, const std::vector<InteractionEvent>& events) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write event log: " + path);
  write_events(out, events);
  if (!out) throw DataError("write failed: " + path);
}

Corpus preprocess(const std::vector<InteractionEvent>& events, std::size_t min_count,
                  std::size_t min_len, std::size_t max_len) {
  if (events.empty()) throw DataError("preprocess: no events");

  struct Row {
    std::size_t file_order;
    const InteractionEvent* ev;
  };
  // Group per user preserving file order, then sort each history by
  // timestamp with file order breaking ties.
  std::map<std::string, std::vector<Row>> by_user;
  for (std::size_t i = 0; i < events.size(); ++i) {
    by_user[events[i].user].push_back({i, &events[i]});
  }
  for (auto& [user, rows] : by_user) {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      if (a.ev->timestamp != b.ev->timestamp) return a.ev->timestamp < b.ev->timestamp;
      return a.file_order < b.file_order;
    });
  }

  // Joint fixed point of truncation, item min_count and user length floors.
  // Each pass only removes events, so the loop terminates.
  std::size_t user_floor = std::max(min_count, min_len);
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto& [user, rows] : by_user) {
      if (rows.size() > max_len) {
        rows.erase(rows.begin(), rows.end() - static_cast<std::ptrdiff_t>(max_len));
        changed = true;
      }
    }
    std::unordered_map<std::string, std::size_t> item_count;
    for (auto& [user, rows] : by_user) {
      for (const Row& r : rows) ++item_count[r.ev->item];
    }
    for (auto& [user, rows] : by_user) {
      auto kept = std::remove_if(rows.begin(), rows.end(), [&](const Row& r) {
        return item_count[r.ev->item] < min_count;
      });
      if (kept != rows.end()) {
        rows.erase(kept, rows.end());
        changed = true;
      }
    }
    for (auto it = by_user.begin(); it != by_user.end();) {
      if (it->second.size() < user_floor) {
        if (!it->second.empty()) changed = true;
        it = by_user.erase(it);
      } else {
        ++it;
      }
    }
  }

  if (by_user.empty()) throw DataError("preprocess: empty after filtering");

  Corpus corpus;
  Catalog& cat = corpus.catalog;
  auto intern_domain = [&](const std::string& id) {
    auto [it, inserted] = cat.domain_index.emplace(id, static_cast<std::int64_t>(cat.domain_ids.size()));
    if (inserted) {
      cat.domain_ids.push_back(id);
      cat.domain_items.emplace_back();
    }
    return it->second;
  };
  auto intern_item = [&](const std::string& id, std::int64_t domain) {
    auto [it, inserted] = cat.item_index.emplace(id, static_cast<std::int64_t>(cat.item_ids.size()));
    if (inserted) {
      cat.item_ids.push_back(id);
      cat.domain_of_item.push_back(domain);
      cat.domain_items[static_cast<std::size_t>(domain)].push_back(it->second);
    }
    return it->second;
  };

  for (auto& [user, rows] : by_user) {
    UserSequence seq;
    seq.user = static_cast<std::int64_t>(corpus.sequences.size());
    seq.items.reserve(rows.size());
    seq.domains.reserve(rows.size());
    for (const Row& r : rows) {
      std::int64_t d = intern_domain(r.ev->domain);
      seq.items.push_back(intern_item(r.ev->item, d));
      seq.domains.push_back(d);
    }
    corpus.sequences.push_back(std::move(seq));
  }
  return corpus;
}

LeaveOneOut split_leave_one_out(const std::vector<UserSequence>& sequences) {
  LeaveOneOut out;
  out.train.reserve(sequences.size());
  out.targets.reserve(sequences.size());
  for (const auto& seq : sequences) {
    if (seq.size() < 2) {
      throw DataError("split_leave_one_out: sequence for user " + std::to_string(seq.user) +
                      " has length " + std::to_string(seq.size()) + " (< 2)");
    }
    UserSequence train;
    train.user = seq.user;
    train.items.assign(seq.items.begin(), seq.items.end() - 1);
    train.domains.assign(seq.domains.begin(), seq.domains.end() - 1);
    out.targets.push_back({seq.user, seq.items.back(), seq.domains.back()});
    out.train.push_back(std::move(train));
  }
  return out;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  out << "#users=" << corpus.sequences.size() << " items=" << corpus.catalog.num_items()
      << " domains=" << corpus.catalog.num_domains() << "\n";
  for (const auto& seq : corpus.sequences) {
    out << seq.user << '\t';
    for (std::size_t i = 0; i < seq.items.size(); ++i) {
      if (i) out << ',';
      out << seq.items[i];
    }
    out << '\t';
    for (std::size_t i = 0; i < seq.domains.size(); ++i) {
      if (i) out << ',';
      out << seq.domains[i];
    }
    out << '\n';
  }
}

void write_corpus_file(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus: " + path);
  write_corpus(out, corpus);
  if (!out) throw DataError("write failed: " + path);
}

namespace {

std::vector<std::int64_t> parse_index_list(const std::string& s, const std::string& context) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_int(tok, context));
  return out;
}

}  // namespace

Corpus read_corpus(std::istream& in, const std::string& source_name) {
  std::string header;
  if (!std::getline(in, header)) throw DataError(source_name + ": empty corpus file");
  std::size_t nu = 0, ni = 0, nd = 0;
  if (std::sscanf(header.c_str(), "#users=%zu items=%zu domains=%zu", &nu, &ni, &nd) != 3) {
    throw DataError(source_name + ": bad corpus header '" + header + "'");
  }
  Corpus corpus;
  corpus.catalog.domain_of_item.assign(ni, -1);
  corpus.catalog.domain_items.resize(nd);
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_tabs(line);
    if (fields.size() != 3) {
      throw DataError(source_name + ": line " + std::to_string(line_no) + ": expected 3 fields");
    }
    std::string ctx = source_name + ": line " + std::to_string(line_no);
    UserSequence seq;
    seq.user = parse_int(fields[0], ctx);
    seq.items = parse_index_list(fields[1], ctx);
    seq.domains = parse_index_list(fields[2], ctx);
    if (seq.items.size() != seq.domains.size()) {
      throw DataError(ctx + ": item/domain length mismatch");
    }
    for (std::size_t i = 0; i < seq.items.size(); ++i) {
      std::int64_t item = seq.items[i], dom = seq.domains[i];
      if (item < 0 || item >= static_cast<std::int64_t>(ni) || dom < 0 ||
          dom >= static_cast<std::int64_t>(nd)) {
        throw DataError(ctx + ": index out of range");
      }
      std::int64_t& slot = corpus.catalog.domain_of_item[static_cast<std::size_t>(item)];
      if (slot == -1) {
        slot = dom;
        corpus.catalog.domain_items[static_cast<std::size_t>(dom)].push_back(item);
      } else if (slot != dom) {
        throw DataError(ctx + ": item " + std::to_string(item) + " appears under two domains");
      }
    }
    corpus.sequences.push_back(std::move(seq));
  }
  if (corpus.sequences.size() != nu) {
    throw DataError(source_name + ": header declares " + std::to_string(nu) + " users, found " +
                    std::to_string(corpus.sequences.size()));
  }
  for (std::size_t i = 0; i < corpus.catalog.domain_of_item.size(); ++i) {
    if (corpus.catalog.domain_of_item[i] == -1) {
      throw DataError(source_name + ": item " + std::to_string(i) + " never appears in any sequence");
    }
  }
  for (auto& items : corpus.catalog.domain_items) std::sort(items.begin(), items.end());
  return corpus;
}

Corpus read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus: " + path);
  return read_corpus(in, path);
}

void check_corpus(const Corpus& corpus) {
  const Catalog& cat = corpus.catalog;
  for (const auto& seq : corpus.sequences) {
    if (seq.items.size() != seq.domains.size()) {
      throw DataError("corpus check: ragged sequence for user " + std::to_string(seq.user));
    }
    for (std::size_t i = 0; i < seq.items.size(); ++i) {
      std::int64_t item = seq.items[i];
      if (item < 0 || item >= static_cast<std::int64_t>(cat.num_items())) {
        throw DataError("corpus check: item index out of range");
      }
      if (cat.domain_of_item[static_cast<std::size_t>(item)] != seq.domains[i]) {
        throw DataError("corpus check: item " + std::to_string(item) +
                        " used outside its domain partition");
      }
    }
  }
}

}  // namespace crossrec
