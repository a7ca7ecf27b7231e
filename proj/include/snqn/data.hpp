#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "snqn/rng.hpp"
#include "snqn/types.hpp"

namespace snqn {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  static DataError at_line(const std::string& source, std::size_t line, const std::string& what) {
    return DataError(source + ":" + std::to_string(line) + ": " + what);
  }
};

struct RawEvent {
  std::string session_id;
  std::int64_t timestamp = 0;
  std::string item_id;
  Interaction behavior = Interaction::click;
  bool operator==(const RawEvent&) const = default;
};

enum class LogFormat { rc15, retailrocket, generic_tsv };

LogFormat parse_log_format(const std::string& name);

/// generic_tsv: header "session_id\ttimestamp\titem_id\tbehavior", behavior in {click, purchase}.
std::vector<RawEvent> parse_generic_tsv(std::istream& in, const std::string& source = "<tsv>");
/// RetailRocket events.csv: timestamp,visitorid,event,itemid,transactionid. Sessions are
/// visitors; view -> click, addtocart and transaction -> purchase.
std::vector<RawEvent> parse_retailrocket(std::istream& in, const std::string& source = "<csv>");
/// RC15: clicks (session,timestamp,item,category) and buys (session,timestamp,item,price,qty).
/// Timestamps may be integers or ISO-8601 ("2014-04-07T10:51:09.277Z"), stored as epoch ms.
std::vector<RawEvent> parse_rc15(std::istream& clicks, std::istream& buys);

/// Reads `path` (and `buys_path` for rc15). Result is grouped by session in
/// order of first appearance and stably sorted by timestamp within a session.
std::vector<RawEvent> ingest(LogFormat format, const std::string& path,
                             const std::string& buys_path = "");
void group_sessions(std::vector<RawEvent>& events);

void write_generic_tsv(std::ostream& out, const std::vector<RawEvent>& events);

struct Session {
  std::string id;
  std::vector<ItemId> items;
  std::vector<Interaction> types;
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };
const char* to_string(Split s);

struct DatasetStats {
  std::size_t sequences = 0;
  std::size_t items = 0;
  std::size_t clicks = 0;
  std::size_t purchases = 0;
};

struct PreprocessConfig {
  std::size_t min_session_len = 3;
  std::size_t min_item_freq = 0;    // 0 disables the item filter
  std::size_t sample_sessions = 0;  // 0 keeps every session
  std::uint64_t seed = 0;
};

/// Sessions over a dense item vocabulary with an 8:1:1 split by session.
struct ReplayDataset {
  std::vector<std::string> vocab;  // dense index -> external item key
  std::vector<Session> sessions;
  std::vector<Split> split;        // parallel to sessions
  std::map<std::string, std::string> notes;

  std::size_t n_items() const { return vocab.size(); }
  ItemId padding_id() const { return static_cast<ItemId>(vocab.size()); }
  std::unordered_map<std::string, ItemId> index() const;
  DatasetStats stats() const;
  std::vector<std::size_t> sessions_in(Split s) const;
  /// FNV-1a over vocab, sessions and split assignment.
  std::string digest() const;
};

/// Item-frequency filter, then session-length filter, then session sampling;
/// then vocabulary assignment (first appearance) and the 8:1:1 split.
ReplayDataset preprocess(const std::vector<RawEvent>& events, const PreprocessConfig& cfg);

/// Directory layout: vocab.tsv, {train,val,test}.tsv, stats.json.
void save_dataset(const ReplayDataset& ds, const std::string& dir, const std::string& extra_json = "");
ReplayDataset load_dataset(const std::string& dir);

/// n distinct items uniform over [0, n_items) excluding `positive` (rejection
/// sampling). Throws std::invalid_argument when n > n_items - 1.
std::vector<ItemId> sample_negatives(ItemId positive, std::size_t n, std::size_t n_items, Rng& rng);

/// One transition per (session, t >= 1) in the split: state x_{1:t} (last 10),
/// action x_{t+1}, reward by x_{t+1}'s interaction type, terminal at session end.
/// Negatives are left empty.
std::vector<TDBatchItem> make_transitions(const ReplayDataset& ds, Split split,
                                          const RewardConfig& rewards);

/// Shuffled mini-batches over the training transitions. Epoch e's order and
/// negatives depend only on (seed, e).
class BatchStream {
 public:
  BatchStream(const ReplayDataset& ds, Split split, const RewardConfig& rewards,
              std::size_t batch_size, std::size_t neg_samples, std::uint64_t seed);

  /// Fills `out` with the next batch; starts a new epoch when one is exhausted.
  void next(std::vector<TDBatchItem>& out);
  std::uint64_t epoch() const { return epoch_; }
  /// Number of batches already drawn in the current epoch.
  std::size_t position() const { return cursor_; }
  std::size_t transitions() const { return base_.size(); }
  std::size_t batches_per_epoch() const;
  /// Every batch of epoch `e` in order (does not disturb the stream).
  std::vector<std::vector<TDBatchItem>> epoch_batches(std::uint64_t e) const;

 private:
  void start_epoch(std::uint64_t e);
  void fill(std::size_t begin, std::size_t end, Rng& neg_rng, std::vector<TDBatchItem>& out) const;

  std::vector<TDBatchItem> base_;
  std::size_t n_items_;
  std::size_t batch_size_;
  std::size_t neg_samples_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::uint32_t> order_;
  Rng neg_rng_;
};

}  // namespace snqn
