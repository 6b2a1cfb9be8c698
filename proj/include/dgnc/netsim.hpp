// Deterministic synchronous-rounds message simulator with a byte-exact
// wire encoding and a communication ledger.
//
// Envelope (little endian, 24 bytes):
//   kind:u8 from:u8 to:u8 pad:u8 round:u32 count:u32 reserved:u32 length:u64
// followed by `count` fixed-size entries. `length` is the entry byte count.

#ifndef DGNC_NETSIM_HPP
#define DGNC_NETSIM_HPP

#include "dgnc/geometry.hpp"
#include "dgnc/pose_graph.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dgnc {

enum class MessageKind : std::uint8_t {
  PublicPoses = 0,
  WeightUpdate = 1,
  FrameAlignmentResult = 2,
  SpanningTreeGrow = 3,
  Control = 4,
};

[[nodiscard]] const char* to_string(MessageKind kind);

inline constexpr std::size_t kEnvelopeBytes = 24;
inline constexpr std::size_t kPoseEntryBytes = 64;    // 7 f64 + 8-byte id
inline constexpr std::size_t kScalarEntryBytes = 16;  // f64 + 8-byte key

/// r×4 doubles plus the id.
[[nodiscard]] constexpr std::size_t lifted_entry_bytes(int rank) {
  return static_cast<std::size_t>(rank) * 4 * 8 + 8;
}

struct Message {
  MessageKind kind = MessageKind::Control;
  RobotId from = 0;
  RobotId to = 0;
  std::uint32_t round = 0;
  std::uint32_t seq = 0;  // per-sender, assigned by Network::send
  std::vector<std::uint8_t> bytes;

  [[nodiscard]] std::size_t size() const { return bytes.size(); }
};

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PoseEntry {
  std::uint64_t id = 0;
  Pose3d pose;
};

struct LiftedEntry {
  std::uint64_t id = 0;
  LiftedPosed pose;
};

struct ScalarEntry {
  std::uint64_t key = 0;
  double value = 0.0;
};

[[nodiscard]] Message encode_poses(MessageKind kind, RobotId from, RobotId to,
                                   std::span<const PoseEntry> entries);
[[nodiscard]] Message encode_lifted(MessageKind kind, RobotId from, RobotId to, int rank,
                                    std::span<const LiftedEntry> entries);
[[nodiscard]] Message encode_scalars(MessageKind kind, RobotId from, RobotId to,
                                     std::span<const ScalarEntry> entries);

[[nodiscard]] std::vector<PoseEntry> decode_poses(const Message& msg);
[[nodiscard]] std::vector<LiftedEntry> decode_lifted(const Message& msg);
[[nodiscard]] std::vector<ScalarEntry> decode_scalars(const Message& msg);

/// Entry count and reserved field from the envelope.
[[nodiscard]] std::uint32_t entry_count(const Message& msg);
[[nodiscard]] std::uint32_t reserved_field(const Message& msg);

/// Envelope plus `count` entries of `entry_bytes` each.
[[nodiscard]] constexpr std::size_t payload_size(std::size_t count, std::size_t entry_bytes) {
  return count * entry_bytes;
}
/// Envelope plus payload: what the ledger records.
[[nodiscard]] constexpr std::size_t message_size(std::size_t count, std::size_t entry_bytes) {
  return kEnvelopeBytes + payload_size(count, entry_bytes);
}

enum class LedgerModule { Init, Dpgo };

[[nodiscard]] LedgerModule module_of(MessageKind kind);

struct LedgerEntry {
  std::uint32_t round = 0;
  RobotId from = 0;
  RobotId to = 0;
  MessageKind kind = MessageKind::Control;
  std::size_t bytes = 0;
};

class Ledger {
 public:
  void record_sent(const Message& msg);
  void record_received(const Message& msg);

  [[nodiscard]] const std::vector<LedgerEntry>& entries() const { return entries_; }
  [[nodiscard]] std::size_t total_bytes() const;
  [[nodiscard]] std::size_t total_bytes(LedgerModule module) const;
  [[nodiscard]] std::size_t message_count() const { return entries_.size(); }
  [[nodiscard]] std::size_t message_count(MessageKind kind) const;
  [[nodiscard]] std::size_t bytes_received() const { return received_bytes_; }
  [[nodiscard]] std::map<std::uint32_t, std::size_t> sent_per_round() const;
  [[nodiscard]] const std::map<std::uint32_t, std::size_t>& received_per_round() const {
    return received_per_round_;
  }

  [[nodiscard]] std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;

  bool operator==(const Ledger& other) const;

 private:
  std::vector<LedgerEntry> entries_;
  std::size_t received_bytes_ = 0;
  std::map<std::uint32_t, std::size_t> received_per_round_;  // keyed by send round
};

class LocalityViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using MessagePredicate = std::function<bool(const Message&)>;

/// Messages sent during round k become visible at round k + 1, ordered by
/// (from, to, seq).
class Network {
 public:
  explicit Network(std::vector<RobotId> robots);

  void send(Message msg);
  /// Removes and returns every delivered message addressed to `robot`.
  [[nodiscard]] std::vector<Message> take_inbox(RobotId robot);
  /// Ends the current round and delivers everything sent during it.
  void barrier();

  [[nodiscard]] std::uint32_t round() const { return round_; }
  [[nodiscard]] const std::vector<RobotId>& robots() const { return robots_; }
  [[nodiscard]] bool idle() const;

  /// Checked on every send; a false result throws LocalityViolation.
  void add_predicate(std::string name, MessagePredicate pred);

  [[nodiscard]] const Ledger& ledger() const { return ledger_; }

 private:
  std::vector<RobotId> robots_;
  std::uint32_t round_ = 0;
  std::map<RobotId, std::uint32_t> next_seq_;
  std::vector<Message> pending_;
  std::map<RobotId, std::vector<Message>> inbox_;
  std::vector<std::pair<std::string, MessagePredicate>> predicates_;
  Ledger ledger_;
};

class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, std::uint32_t round, RobotId robot)
      : std::runtime_error("round " + std::to_string(round) + ", robot " +
                           std::to_string(static_cast<int>(robot)) + ": " + what),
        round_(round),
        robot_(robot) {}
  [[nodiscard]] std::uint32_t round() const { return round_; }
  [[nodiscard]] RobotId robot() const { return robot_; }

 private:
  std::uint32_t round_;
  RobotId robot_;
};

/// Per-round view handed to an actor.
struct RoundContext {
  Network& net;
  RobotId self;
  std::uint32_t round;
  std::vector<Message> inbox;
  std::mt19937_64& rng;

  void send(Message msg) {
    msg.from = self;
    net.send(std::move(msg));
  }
};

class Actor {
 public:
  virtual ~Actor() = default;
  [[nodiscard]] virtual RobotId id() const = 0;
  virtual void on_round(RoundContext& ctx) = 0;
  [[nodiscard]] virtual bool finished() const { return false; }
};

struct RunSummary {
  std::uint32_t rounds = 0;
  Ledger ledger;
};

/// Runs actors in ascending id order each round until all report finished
/// and no message is in flight, or `max_rounds` is reached. Actor RNGs are
/// seeded from (seed, id).
RunSummary run_rounds(std::span<Actor* const> actors, std::uint32_t max_rounds, std::uint64_t seed);

}  // namespace dgnc

#endif  // DGNC_NETSIM_HPP
