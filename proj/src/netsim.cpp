#include "dgnc/netsim.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dgnc {

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::PublicPoses: return "PublicPoses";
    case MessageKind::WeightUpdate: return "WeightUpdate";
    case MessageKind::FrameAlignmentResult: return "FrameAlignmentResult";
    case MessageKind::SpanningTreeGrow: return "SpanningTreeGrow";
    case MessageKind::Control: return "Control";
  }
  return "Unknown";
}

LedgerModule module_of(MessageKind kind) {
  switch (kind) {
    case MessageKind::FrameAlignmentResult:
    case MessageKind::SpanningTreeGrow: return LedgerModule::Init;
    default: return LedgerModule::Dpgo;
  }
}

namespace {

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& in, std::size_t pos) : in_(in), pos_(pos) {}
  std::uint64_t u64() {
    if (pos_ + 8 > in_.size()) throw WireError("truncated message");
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(in_[pos_ + k]) << (8 * k);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_;
};

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[at + k]) << (8 * k);
  return v;
}

void write_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b[at + k] = static_cast<std::uint8_t>(v >> (8 * k));
}

Message envelope(MessageKind kind, RobotId from, RobotId to, std::size_t count, std::size_t entry_bytes,
                 std::uint32_t reserved) {
  Message m;
  m.kind = kind;
  m.from = from;
  m.to = to;
  m.bytes.reserve(message_size(count, entry_bytes));
  Writer w(m.bytes);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u8(from);
  w.u8(to);
  w.u8(0);
  w.u32(0);  // round, stamped by Network::send
  w.u32(static_cast<std::uint32_t>(count));
  w.u32(reserved);
  w.u64(count * entry_bytes);
  return m;
}

// Validates the envelope and returns the entry count.
std::size_t check_envelope(const Message& msg, std::size_t entry_bytes) {
  if (msg.bytes.size() < kEnvelopeBytes) throw WireError("message shorter than envelope");
  if (msg.bytes[0] != static_cast<std::uint8_t>(msg.kind)) throw WireError("kind mismatch");
  const std::size_t count = read_u32(msg.bytes, 8);
  Reader r(msg.bytes, 16);
  const std::uint64_t length = r.u64();
  if (length != count * entry_bytes || msg.bytes.size() != kEnvelopeBytes + length) {
    throw WireError("payload length mismatch");
  }
  return count;
}

}  // namespace

std::uint32_t entry_count(const Message& msg) {
  if (msg.bytes.size() < kEnvelopeBytes) throw WireError("message shorter than envelope");
  return read_u32(msg.bytes, 8);
}

std::uint32_t reserved_field(const Message& msg) {
  if (msg.bytes.size() < kEnvelopeBytes) throw WireError("message shorter than envelope");
  return read_u32(msg.bytes, 12);
}

Message encode_poses(MessageKind kind, RobotId from, RobotId to, std::span<const PoseEntry> entries) {
  Message m = envelope(kind, from, to, entries.size(), kPoseEntryBytes, 0);
  Writer w(m.bytes);
  for (const PoseEntry& e : entries) {
    const Eigen::Quaterniond q = e.pose.rot().quaternion();
    w.f64(q.x());
    w.f64(q.y());
    w.f64(q.z());
    w.f64(q.w());
    for (int k = 0; k < 3; ++k) w.f64(e.pose.trans()(k));
    w.u64(e.id);
  }
  return m;
}

Message encode_lifted(MessageKind kind, RobotId from, RobotId to, int rank,
                      std::span<const LiftedEntry> entries) {
  if (rank < 3) throw WireError("lifted rank must be >= 3");
  const std::size_t eb = lifted_entry_bytes(rank);
  Message m = envelope(kind, from, to, entries.size(), eb, static_cast<std::uint32_t>(rank));
  Writer w(m.bytes);
  for (const LiftedEntry& e : entries) {
    if (e.pose.rank() != rank || e.pose.y_trans.size() != rank) throw WireError("lifted rank mismatch");
    for (int c = 0; c < 3; ++c) {
      for (int r = 0; r < rank; ++r) w.f64(e.pose.y_rot(r, c));
    }
    for (int r = 0; r < rank; ++r) w.f64(e.pose.y_trans(r));
    w.u64(e.id);
  }
  return m;
}

Message encode_scalars(MessageKind kind, RobotId from, RobotId to, std::span<const ScalarEntry> entries) {
  Message m = envelope(kind, from, to, entries.size(), kScalarEntryBytes, 0);
  Writer w(m.bytes);
  for (const ScalarEntry& e : entries) {
    w.f64(e.value);
    w.u64(e.key);
  }
  return m;
}

std::vector<PoseEntry> decode_poses(const Message& msg) {
  const std::size_t count = check_envelope(msg, kPoseEntryBytes);
  Reader r(msg.bytes, kEnvelopeBytes);
  std::vector<PoseEntry> out(count);
  for (PoseEntry& e : out) {
    Eigen::Quaterniond q;
    q.x() = r.f64();
    q.y() = r.f64();
    q.z() = r.f64();
    q.w() = r.f64();
    Vector3d t;
    for (int k = 0; k < 3; ++k) t(k) = r.f64();
    e.pose = Pose3d(Rot3d::from_quaternion(q), t);
    e.id = r.u64();
  }
  return out;
}

std::vector<LiftedEntry> decode_lifted(const Message& msg) {
  if (msg.bytes.size() < kEnvelopeBytes) throw WireError("message shorter than envelope");
  const int rank = static_cast<int>(reserved_field(msg));
  if (rank < 3) throw WireError("lifted rank must be >= 3");
  const std::size_t count = check_envelope(msg, lifted_entry_bytes(rank));
  Reader r(msg.bytes, kEnvelopeBytes);
  std::vector<LiftedEntry> out(count);
  for (LiftedEntry& e : out) {
    e.pose.y_rot.resize(rank, 3);
    e.pose.y_trans.resize(rank);
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < rank; ++k) e.pose.y_rot(k, c) = r.f64();
    }
    for (int k = 0; k < rank; ++k) e.pose.y_trans(k) = r.f64();
    e.id = r.u64();
  }
  return out;
}

std::vector<ScalarEntry> decode_scalars(const Message& msg) {
  const std::size_t count = check_envelope(msg, kScalarEntryBytes);
  Reader r(msg.bytes, kEnvelopeBytes);
  std::vector<ScalarEntry> out(count);
  for (ScalarEntry& e : out) {
    e.value = r.f64();
    e.key = r.u64();
  }
  return out;
}

void Ledger::record_sent(const Message& msg) {
  entries_.push_back({msg.round, msg.from, msg.to, msg.kind, msg.size()});
}

void Ledger::record_received(const Message& msg) {
  received_bytes_ += msg.size();
  received_per_round_[msg.round] += msg.size();
}

std::size_t Ledger::total_bytes() const {
  std::size_t n = 0;
  for (const LedgerEntry& e : entries_) n += e.bytes;
  return n;
}

std::size_t Ledger::total_bytes(LedgerModule module) const {
  std::size_t n = 0;
  for (const LedgerEntry& e : entries_) {
    if (module_of(e.kind) == module) n += e.bytes;
  }
  return n;
}

std::size_t Ledger::message_count(MessageKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [&](const LedgerEntry& e) { return e.kind == kind; }));
}

std::map<std::uint32_t, std::size_t> Ledger::sent_per_round() const {
  std::map<std::uint32_t, std::size_t> out;
  for (const LedgerEntry& e : entries_) out[e.round] += e.bytes;
  return out;
}

std::string Ledger::to_csv() const {
  std::ostringstream os;
  os << "round,from,to,kind,bytes\n";
  for (const LedgerEntry& e : entries_) {
    os << e.round << ',' << static_cast<int>(e.from) << ',' << static_cast<int>(e.to) << ','
       << to_string(e.kind) << ',' << e.bytes << '\n';
  }
  return os.str();
}

void Ledger::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_csv();
}

bool Ledger::operator==(const Ledger& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const LedgerEntry& a = entries_[k];
    const LedgerEntry& b = other.entries_[k];
    if (a.round != b.round || a.from != b.from || a.to != b.to || a.kind != b.kind || a.bytes != b.bytes) {
      return false;
    }
  }
  return received_per_round_ == other.received_per_round_;
}

Network::Network(std::vector<RobotId> robots) : robots_(std::move(robots)) {
  std::sort(robots_.begin(), robots_.end());
  robots_.erase(std::unique(robots_.begin(), robots_.end()), robots_.end());
  for (RobotId r : robots_) {
    next_seq_[r] = 0;
    inbox_[r];
  }
}

void Network::send(Message msg) {
  if (!next_seq_.contains(msg.from) || !inbox_.contains(msg.to)) {
    throw std::invalid_argument("send: unknown robot");
  }
  if (msg.from == msg.to) throw std::invalid_argument("send: robot cannot message itself");
  if (msg.bytes.size() < kEnvelopeBytes) throw WireError("message shorter than envelope");
  msg.round = round_;
  msg.seq = next_seq_[msg.from]++;
  msg.bytes[1] = msg.from;
  msg.bytes[2] = msg.to;
  write_u32(msg.bytes, 4, msg.round);
  for (const auto& [name, pred] : predicates_) {
    if (!pred(msg)) {
      throw LocalityViolation("predicate '" + name + "' rejected " + to_string(msg.kind) + " from " +
                              std::to_string(static_cast<int>(msg.from)) + " to " +
                              std::to_string(static_cast<int>(msg.to)));
    }
  }
  ledger_.record_sent(msg);
  pending_.push_back(std::move(msg));
}

std::vector<Message> Network::take_inbox(RobotId robot) {
  auto it = inbox_.find(robot);
  if (it == inbox_.end()) throw std::invalid_argument("take_inbox: unknown robot");
  std::vector<Message> out = std::move(it->second);
  it->second.clear();
  for (const Message& m : out) {
    if (m.round >= round_) throw std::logic_error("causality violated");
    ledger_.record_received(m);
  }
  return out;
}

void Network::barrier() {
  std::stable_sort(pending_.begin(), pending_.end(), [](const Message& a, const Message& b) {
    return std::tie(a.from, a.to, a.seq) < std::tie(b.from, b.to, b.seq);
  });
  for (Message& m : pending_) inbox_[m.to].push_back(std::move(m));
  pending_.clear();
  ++round_;
}

bool Network::idle() const {
  if (!pending_.empty()) return false;
  return std::all_of(inbox_.begin(), inbox_.end(), [](const auto& kv) { return kv.second.empty(); });
}

void Network::add_predicate(std::string name, MessagePredicate pred) {
  predicates_.emplace_back(std::move(name), std::move(pred));
}

RunSummary run_rounds(std::span<Actor* const> actors, std::uint32_t max_rounds, std::uint64_t seed) {
  std::vector<Actor*> order(actors.begin(), actors.end());
  std::sort(order.begin(), order.end(), [](const Actor* a, const Actor* b) { return a->id() < b->id(); });
  std::vector<RobotId> ids;
  for (const Actor* a : order) ids.push_back(a->id());
  Network net(ids);
  std::map<RobotId, std::mt19937_64> rngs;
  for (RobotId id : ids) {
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(id)};
    rngs.emplace(id, std::mt19937_64(ss));
  }

  RunSummary summary;
  while (summary.rounds < max_rounds) {
    const bool all_done =
        std::all_of(order.begin(), order.end(), [](const Actor* a) { return a->finished(); });
    if (all_done && net.idle()) break;
    for (Actor* a : order) {
      RoundContext ctx{net, a->id(), net.round(), net.take_inbox(a->id()), rngs.at(a->id())};
      try {
        a->on_round(ctx);
      } catch (const SimulationError&) {
        throw;
      } catch (const std::exception& e) {
        throw SimulationError(e.what(), net.round(), a->id());
      }
    }
    net.barrier();
    ++summary.rounds;
  }
  // drain whatever is still in flight so the ledger balances
  for (RobotId id : ids) (void)net.take_inbox(id);
  summary.ledger = net.ledger();
  return summary;
}

}  // namespace dgnc
