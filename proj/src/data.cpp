#include "snqn/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace snqn {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t") == std::string::npos;
}

bool parse_int(const std::string& s, std::int64_t& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

// Integer epoch value or ISO-8601 "YYYY-MM-DDTHH:MM:SS[.fff][Z]" as epoch milliseconds.
bool parse_timestamp(const std::string& s, std::int64_t& out) {
  if (parse_int(s, out)) return true;
  int y, mo, d, h, mi;
  double sec;
  char t;
  if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%lf", &y, &mo, &d, &t, &h, &mi, &sec) != 7)
    return false;
  if (t != 'T' && t != ' ') return false;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(mo)},
                                        std::chrono::day{unsigned(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec >= 61) return false;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  out = ((static_cast<std::int64_t>(days) * 24 + h) * 60 + mi) * 60000 +
        static_cast<std::int64_t>(std::llround(sec * 1000.0));
  return true;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

}  // namespace

LogFormat parse_log_format(const std::string& name) {
  if (name == "rc15") return LogFormat::rc15;
  if (name == "retailrocket") return LogFormat::retailrocket;
  if (name == "generic_tsv" || name == "tsv") return LogFormat::generic_tsv;
  throw std::invalid_argument("unknown log format '" + name +
                              "' (expected rc15, retailrocket or generic_tsv)");
}

std::vector<RawEvent> parse_generic_tsv(std::istream& in, const std::string& source) {
  std::vector<RawEvent> events;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (blank(line)) continue;
    if (!header) {
      if (line != "session_id\ttimestamp\titem_id\tbehavior")
        throw DataError::at_line(source, lineno, "expected header session_id<TAB>timestamp<TAB>item_id<TAB>behavior");
      header = true;
      continue;
    }
    auto f = split_fields(line, '\t');
    if (f.size() != 4) throw DataError::at_line(source, lineno, "expected 4 tab-separated fields");
    RawEvent ev;
    ev.session_id = f[0];
    if (!parse_timestamp(f[1], ev.timestamp))
      throw DataError::at_line(source, lineno, "bad timestamp '" + f[1] + "'");
    ev.item_id = f[2];
    if (f[0].empty() || f[2].empty()) throw DataError::at_line(source, lineno, "empty session or item id");
    if (f[3] == "click") {
      ev.behavior = Interaction::click;
    } else if (f[3] == "purchase") {
      ev.behavior = Interaction::purchase;
    } else {
      throw DataError::at_line(source, lineno, "unknown behavior '" + f[3] + "'");
    }
    events.push_back(std::move(ev));
  }
  return events;
}

std::vector<RawEvent> parse_retailrocket(std::istream& in, const std::string& source) {
  std::vector<RawEvent> events;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (blank(line)) continue;
    auto f = split_fields(line, ',');
    if (!header) {
      header = true;
      if (f.size() >= 4 && f[0] == "timestamp") continue;
    }
    if (f.size() < 4 || f.size() > 5)
      throw DataError::at_line(source, lineno, "expected timestamp,visitorid,event,itemid[,transactionid]");
    RawEvent ev;
    if (!parse_timestamp(f[0], ev.timestamp))
      throw DataError::at_line(source, lineno, "bad timestamp '" + f[0] + "'");
    ev.session_id = f[1];
    ev.item_id = f[3];
    if (f[1].empty() || f[3].empty()) throw DataError::at_line(source, lineno, "empty visitor or item id");
    if (f[2] == "view") {
      ev.behavior = Interaction::click;
    } else if (f[2] == "addtocart" || f[2] == "transaction") {
      ev.behavior = Interaction::purchase;
    } else {
      throw DataError::at_line(source, lineno, "unknown event '" + f[2] + "'");
    }
    events.push_back(std::move(ev));
  }
  return events;
}

std::vector<RawEvent> parse_rc15(std::istream& clicks, std::istream& buys) {
  std::vector<RawEvent> events;
  auto read = [&](std::istream& in, const char* source, Interaction kind, std::size_t min_fields) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (blank(line)) continue;
      auto f = split_fields(line, ',');
      if (f.size() < min_fields)
        throw DataError::at_line(source, lineno, "expected at least " + std::to_string(min_fields) + " fields");
      RawEvent ev;
      ev.session_id = f[0];
      if (!parse_timestamp(f[1], ev.timestamp))
        throw DataError::at_line(source, lineno, "bad timestamp '" + f[1] + "'");
      ev.item_id = f[2];
      if (f[0].empty() || f[2].empty()) throw DataError::at_line(source, lineno, "empty session or item id");
      ev.behavior = kind;
      events.push_back(std::move(ev));
    }
  };
  read(clicks, "clicks", Interaction::click, 3);
  read(buys, "buys", Interaction::purchase, 3);
  return events;
}

void group_sessions(std::vector<RawEvent>& events) {
  std::unordered_map<std::string, std::size_t> first;
  std::vector<std::size_t> rank(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    auto [it, fresh] = first.emplace(events[i].session_id, first.size());
    rank[i] = it->second;
  }
  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rank[a] != rank[b]) return rank[a] < rank[b];
    return events[a].timestamp < events[b].timestamp;
  });
  std::vector<RawEvent> out;
  out.reserve(events.size());
  for (auto i : order) out.push_back(std::move(events[i]));
  events = std::move(out);
}

std::vector<RawEvent> ingest(LogFormat format, const std::string& path, const std::string& buys_path) {
  std::vector<RawEvent> events;
  switch (format) {
    case LogFormat::generic_tsv: {
      auto in = open_or_throw(path);
      events = parse_generic_tsv(in, path);
      break;
    }
    case LogFormat::retailrocket: {
      auto in = open_or_throw(path);
      events = parse_retailrocket(in, path);
      break;
    }
    case LogFormat::rc15: {
      if (buys_path.empty()) throw std::invalid_argument("rc15 format needs a buys file");
      auto c = open_or_throw(path);
      auto b = open_or_throw(buys_path);
      events = parse_rc15(c, b);
      break;
    }
  }
  group_sessions(events);
  return events;
}

void write_generic_tsv(std::ostream& out, const std::vector<RawEvent>& events) {
  out << "session_id\ttimestamp\titem_id\tbehavior\n";
  for (const auto& e : events)
    out << e.session_id << '\t' << e.timestamp << '\t' << e.item_id << '\t' << to_string(e.behavior) << '\n';
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

std::unordered_map<std::string, ItemId> ReplayDataset::index() const {
  std::unordered_map<std::string, ItemId> m;
  for (std::size_t i = 0; i < vocab.size(); ++i) m.emplace(vocab[i], static_cast<ItemId>(i));
  return m;
}

DatasetStats ReplayDataset::stats() const {
  DatasetStats s;
  s.sequences = sessions.size();
  s.items = vocab.size();
  for (const auto& sess : sessions)
    for (auto t : sess.types) (t == Interaction::purchase ? s.purchases : s.clicks)++;
  return s;
}

std::vector<std::size_t> ReplayDataset::sessions_in(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sessions.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

std::string ReplayDataset::digest() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  const std::uint64_t nv = vocab.size();
  h = fnv1a(h, &nv, sizeof nv);
  for (const auto& v : vocab) {
    h = fnv1a(h, v.data(), v.size());
    h = fnv1a(h, "\0", 1);
  }
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& s = sessions[i];
    h = fnv1a(h, s.id.data(), s.id.size());
    h = fnv1a(h, "\0", 1);
    const auto sp = static_cast<std::uint8_t>(split[i]);
    h = fnv1a(h, &sp, 1);
    const std::uint64_t n = s.items.size();
    h = fnv1a(h, &n, sizeof n);
    h = fnv1a(h, s.items.data(), s.items.size() * sizeof(ItemId));
    h = fnv1a(h, s.types.data(), s.types.size());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ReplayDataset preprocess(const std::vector<RawEvent>& events, const PreprocessConfig& cfg) {
  if (events.empty()) throw DataError("no events to preprocess");
  std::vector<RawEvent> kept;
  if (cfg.min_item_freq > 0) {
    std::unordered_map<std::string, std::size_t> freq;
    for (const auto& e : events) ++freq[e.item_id];
    for (const auto& e : events)
      if (freq[e.item_id] >= cfg.min_item_freq) kept.push_back(e);
  } else {
    kept = events;
  }
  group_sessions(kept);

  std::vector<Session> raw;  // items hold -1 until the vocabulary is built
  std::vector<std::vector<const std::string*>> keys;
  for (std::size_t i = 0; i < kept.size();) {
    std::size_t j = i;
    while (j < kept.size() && kept[j].session_id == kept[i].session_id) ++j;
    if (j - i >= cfg.min_session_len) {
      Session s;
      s.id = kept[i].session_id;
      std::vector<const std::string*> k;
      for (std::size_t e = i; e < j; ++e) {
        s.types.push_back(kept[e].behavior);
        k.push_back(&kept[e].item_id);
      }
      raw.push_back(std::move(s));
      keys.push_back(std::move(k));
    }
    i = j;
  }
  if (raw.empty()) throw DataError("every session was removed by the filters");

  std::vector<std::size_t> chosen(raw.size());
  std::iota(chosen.begin(), chosen.end(), 0);
  if (cfg.sample_sessions > 0 && cfg.sample_sessions < raw.size()) {
    auto rng = make_rng(cfg.seed, "sample");
    shuffle_range(chosen.begin(), chosen.end(), rng);
    chosen.resize(cfg.sample_sessions);
    std::sort(chosen.begin(), chosen.end());
  }

  ReplayDataset ds;
  std::unordered_map<std::string, ItemId> vocab;
  for (auto idx : chosen) {
    Session s = std::move(raw[idx]);
    for (const auto* key : keys[idx]) {
      auto [it, fresh] = vocab.emplace(*key, static_cast<ItemId>(ds.vocab.size()));
      if (fresh) ds.vocab.push_back(*key);
      s.items.push_back(it->second);
    }
    ds.sessions.push_back(std::move(s));
  }

  const std::size_t n = ds.sessions.size();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(cfg.seed, "split");
  shuffle_range(perm.begin(), perm.end(), rng);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  ds.split.assign(n, Split::test);
  for (std::size_t i = 0; i < n; ++i)
    ds.split[perm[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
  if (cfg.sample_sessions > raw.size())
    ds.notes["sampling"] = "requested " + std::to_string(cfg.sample_sessions) + " sessions, only " +
                           std::to_string(raw.size()) + " available";
  return ds;
}

void save_dataset(const ReplayDataset& ds, const std::string& dir, const std::string& extra_json) {
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "vocab.tsv");
    out << "index\titem_id\n";
    for (std::size_t i = 0; i < ds.vocab.size(); ++i) out << i << '\t' << ds.vocab[i] << '\n';
    if (!out) throw DataError("failed writing vocab.tsv in " + dir);
  }
  for (Split sp : {Split::train, Split::val, Split::test}) {
    std::ofstream out(fs::path(dir) / (std::string(to_string(sp)) + ".tsv"));
    out << "ordinal\tsession_id\titems\tbehaviors\n";
    for (std::size_t i = 0; i < ds.sessions.size(); ++i) {
      if (ds.split[i] != sp) continue;
      const auto& s = ds.sessions[i];
      out << i << '\t' << s.id << '\t';
      for (std::size_t j = 0; j < s.items.size(); ++j) out << (j ? " " : "") << s.items[j];
      out << '\t';
      for (auto t : s.types) out << (t == Interaction::purchase ? 'p' : 'c');
      out << '\n';
    }
    if (!out) throw DataError("failed writing split files in " + dir);
  }
  nlohmann::ordered_json j;
  const auto st = ds.stats();
  j["sequences"] = st.sequences;
  j["items"] = st.items;
  j["clicks"] = st.clicks;
  j["purchases"] = st.purchases;
  j["train_sessions"] = ds.sessions_in(Split::train).size();
  j["val_sessions"] = ds.sessions_in(Split::val).size();
  j["test_sessions"] = ds.sessions_in(Split::test).size();
  j["digest"] = ds.digest();
  j["notes"] = ds.notes;
  if (!extra_json.empty()) j["config"] = nlohmann::ordered_json::parse(extra_json);
  std::ofstream out(fs::path(dir) / "stats.json");
  out << j.dump(2) << '\n';
}

ReplayDataset load_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir);
  ReplayDataset ds;
  {
    const std::string path = (fs::path(dir) / "vocab.tsv").string();
    auto in = open_or_throw(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (lineno == 1 || blank(line)) continue;
      auto f = split_fields(line, '\t');
      std::int64_t idx;
      if (f.size() != 2 || !parse_int(f[0], idx) || idx != static_cast<std::int64_t>(ds.vocab.size()))
        throw DataError::at_line(path, lineno, "malformed vocabulary row");
      ds.vocab.push_back(f[1]);
    }
  }
  struct Row {
    std::size_t ordinal;
    Session s;
    Split sp;
  };
  std::vector<Row> rows;
  for (Split sp : {Split::train, Split::val, Split::test}) {
    const std::string path = (fs::path(dir) / (std::string(to_string(sp)) + ".tsv")).string();
    auto in = open_or_throw(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      strip_cr(line);
      if (lineno == 1 || blank(line)) continue;
      auto f = split_fields(line, '\t');
      std::int64_t ord;
      if (f.size() != 4 || !parse_int(f[0], ord) || ord < 0)
        throw DataError::at_line(path, lineno, "malformed session row");
      Row r{static_cast<std::size_t>(ord), {}, sp};
      r.s.id = f[1];
      std::istringstream items(f[2]);
      std::int64_t id;
      while (items >> id) {
        if (id < 0 || id >= static_cast<std::int64_t>(ds.vocab.size()))
          throw DataError::at_line(path, lineno, "item index out of range");
        r.s.items.push_back(static_cast<ItemId>(id));
      }
      for (char c : f[3]) {
        if (c != 'c' && c != 'p') throw DataError::at_line(path, lineno, "unknown behavior code");
        r.s.types.push_back(c == 'p' ? Interaction::purchase : Interaction::click);
      }
      if (r.s.items.size() != r.s.types.size() || r.s.items.empty())
        throw DataError::at_line(path, lineno, "items and behaviors differ in length");
      rows.push_back(std::move(r));
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ordinal < b.ordinal; });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].ordinal != i) throw DataError("session ordinals in " + dir + " are not contiguous");
    ds.sessions.push_back(std::move(rows[i].s));
    ds.split.push_back(rows[i].sp);
  }
  std::ifstream stats(fs::path(dir) / "stats.json");
  if (stats) {
    auto j = nlohmann::json::parse(stats, nullptr, false);
    if (!j.is_discarded() && j.contains("notes") && j["notes"].is_object())
      for (auto& [k, v] : j["notes"].items())
        if (v.is_string()) ds.notes[k] = v.get<std::string>();
  }
  return ds;
}

std::vector<ItemId> sample_negatives(ItemId positive, std::size_t n, std::size_t n_items, Rng& rng) {
  if (n_items < 1 || n > n_items - 1)
    throw std::invalid_argument("cannot sample " + std::to_string(n) + " distinct negatives from " +
                                std::to_string(n_items) + " items");
  std::vector<ItemId> out;
  out.reserve(n);
  if (n * 2 > n_items) {
    // Dense case: partial Fisher-Yates over the candidates.
    std::vector<ItemId> pool;
    pool.reserve(n_items - 1);
    for (std::size_t i = 0; i < n_items; ++i)
      if (static_cast<ItemId>(i) != positive) pool.push_back(static_cast<ItemId>(i));
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }
  while (out.size() < n) {
    const auto a = static_cast<ItemId>(uniform_index(rng, n_items));
    if (a == positive || std::find(out.begin(), out.end(), a) != out.end()) continue;
    out.push_back(a);
  }
  return out;
}

std::vector<TDBatchItem> make_transitions(const ReplayDataset& ds, Split split,
                                          const RewardConfig& rewards) {
  std::vector<TDBatchItem> out;
  const ItemId pad = ds.padding_id();
  for (std::size_t si = 0; si < ds.sessions.size(); ++si) {
    if (ds.split[si] != split) continue;
    const auto& s = ds.sessions[si];
    const std::span<const ItemId> items(s.items);
    const std::span<const Interaction> types(s.types);
    for (std::size_t t = 1; t < s.items.size(); ++t) {
      TDBatchItem it;
      it.state = SessionSequence::from_history(items.first(t), types.first(t), pad);
      it.next_state = SessionSequence::from_history(items.first(t + 1), types.first(t + 1), pad);
      it.positive = s.items[t];
      it.target_type = s.types[t];
      it.reward = rewards.reward_for(s.types[t]);
      it.is_terminal = t + 1 == s.items.size();
      out.push_back(std::move(it));
    }
  }
  return out;
}

BatchStream::BatchStream(const ReplayDataset& ds, Split split, const RewardConfig& rewards,
                         std::size_t batch_size, std::size_t neg_samples, std::uint64_t seed)
    : base_(make_transitions(ds, split, rewards)),
      n_items_(ds.n_items()),
      batch_size_(batch_size),
      neg_samples_(neg_samples),
      seed_(seed) {
  if (batch_size_ == 0) throw std::invalid_argument("batch_size must be positive");
  if (base_.empty())
    throw DataError(std::string("split '") + to_string(split) + "' has no transitions");
  if (neg_samples_ > n_items_ - 1)
    throw std::invalid_argument("neg_samples must be at most n_items - 1");
  start_epoch(0);
}

std::size_t BatchStream::batches_per_epoch() const {
  return (base_.size() + batch_size_ - 1) / batch_size_;
}

void BatchStream::start_epoch(std::uint64_t e) {
  epoch_ = e;
  cursor_ = 0;
  order_.resize(base_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  auto rng = make_rng(seed_, "shuffle", e);
  shuffle_range(order_.begin(), order_.end(), rng);
  neg_rng_ = make_rng(seed_, "negatives", e);
}

void BatchStream::fill(std::size_t begin, std::size_t end, Rng& neg_rng,
                       std::vector<TDBatchItem>& out) const {
  out.clear();
  for (std::size_t i = begin; i < end; ++i) {
    TDBatchItem it = base_[order_[i]];
    it.negatives = sample_negatives(it.positive, neg_samples_, n_items_, neg_rng);
    out.push_back(std::move(it));
  }
}

void BatchStream::next(std::vector<TDBatchItem>& out) {
  if (cursor_ >= batches_per_epoch()) start_epoch(epoch_ + 1);
  const std::size_t begin = cursor_ * batch_size_;
  const std::size_t end = std::min(base_.size(), begin + batch_size_);
  fill(begin, end, neg_rng_, out);
  ++cursor_;
}

std::vector<std::vector<TDBatchItem>> BatchStream::epoch_batches(std::uint64_t e) const {
  BatchStream copy = *this;
  copy.start_epoch(e);
  std::vector<std::vector<TDBatchItem>> out(batches_per_epoch());
  for (auto& b : out) copy.next(b);
  return out;
}

}  // namespace snqn
