#include "dgnc/netsim.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace dgnc;

namespace {

class Echo : public Actor {
 public:
  Echo(RobotId self, RobotId peer, int rounds) : self_(self), peer_(peer), rounds_(rounds) {}
  RobotId id() const override { return self_; }
  void on_round(RoundContext& ctx) override {
    for (const Message& m : ctx.inbox) {
      CHECK(m.round < ctx.round);  // causality
      received_ += decode_scalars(m).size();
    }
    if (sent_ < rounds_) {
      const ScalarEntry e{ctx.rng(), static_cast<double>(ctx.round)};
      ctx.send(encode_scalars(MessageKind::Control, self_, peer_, std::span(&e, 1)));
      ++sent_;
    }
  }
  bool finished() const override { return sent_ >= rounds_; }
  std::size_t received() const { return received_; }

 private:
  RobotId self_, peer_;
  int rounds_;
  int sent_ = 0;
  std::size_t received_ = 0;
};

class Thrower : public Actor {
 public:
  RobotId id() const override { return 4; }
  void on_round(RoundContext& ctx) override {
    if (ctx.round == 2) throw std::runtime_error("boom");
  }
};

RunSummary echo_run(std::uint64_t seed) {
  Echo a(0, 1, 3), b(1, 0, 3);
  std::vector<Actor*> actors{&b, &a};
  return run_rounds(actors, 100, seed);
}

}  // namespace

TEST_SUITE("netsim") {
  TEST_CASE("payload sizes") {
    CHECK(payload_size(1, kPoseEntryBytes) == 64);
    CHECK(payload_size(1, kScalarEntryBytes) == 16);
    CHECK(message_size(0, kPoseEntryBytes) == 24);
    CHECK(lifted_entry_bytes(5) == 168);
    CHECK(lifted_entry_bytes(3) == 104);

    const PoseEntry p{NodeId{1, 7}.key(), Pose3d::identity()};
    const Message one = encode_poses(MessageKind::PublicPoses, 1, 0, std::span(&p, 1));
    CHECK(one.size() == 24 + 64);
    const Message empty = encode_poses(MessageKind::PublicPoses, 1, 0, std::span<const PoseEntry>{});
    CHECK(empty.size() == 24);
    const ScalarEntry w{42, 0.25};
    CHECK(encode_scalars(MessageKind::WeightUpdate, 0, 1, std::span(&w, 1)).size() == 24 + 16);
  }

  TEST_CASE("wire round trip") {
    std::mt19937_64 rng(1);
    std::vector<PoseEntry> poses;
    for (std::uint32_t k = 0; k < 5; ++k) poses.push_back({NodeId{2, k}.key(), test::random_pose(rng, 3.0)});
    const Message m = encode_poses(MessageKind::PublicPoses, 2, 1, poses);
    CHECK(entry_count(m) == 5);
    const auto back = decode_poses(m);
    REQUIRE(back.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) {
      CHECK(back[k].id == poses[k].id);
      CHECK(test::pose_distance(back[k].pose, poses[k].pose) < 1e-14);
    }

    std::vector<LiftedEntry> lifted{{9, LiftedPosed::lift(poses[0].pose, 5)}};
    const Message ml = encode_lifted(MessageKind::PublicPoses, 2, 1, 5, lifted);
    CHECK(ml.size() == 24 + lifted_entry_bytes(5));
    CHECK(reserved_field(ml) == 5);
    CHECK((decode_lifted(ml)[0].pose.y_rot - lifted[0].pose.y_rot).norm() == 0.0);

    const std::vector<ScalarEntry> s{{1, 0.5}, {2, -3.0}};
    const auto sb = decode_scalars(encode_scalars(MessageKind::WeightUpdate, 0, 1, s));
    CHECK(sb[1].key == 2);
    CHECK(sb[1].value == -3.0);

    Message bad = m;
    bad.bytes.pop_back();
    CHECK_THROWS_AS((void)decode_poses(bad), WireError);
    Message tiny;
    tiny.bytes.resize(10);
    CHECK_THROWS_AS((void)decode_scalars(tiny), WireError);
  }

  TEST_CASE("envelope layout is little endian") {
    const ScalarEntry w{0x0102030405060708ull, 1.0};
    Message m = encode_scalars(MessageKind::WeightUpdate, 3, 5, std::span(&w, 1));
    CHECK(m.bytes[0] == 1);
    CHECK(m.bytes[1] == 3);
    CHECK(m.bytes[2] == 5);
    CHECK(m.bytes[8] == 1);  // count
    CHECK(m.bytes[16] == 16);  // payload length
    CHECK(m.bytes[24 + 8] == 0x08);  // key follows the value
  }

  TEST_CASE("one robot without messages") {
    class Idle : public Actor {
     public:
      RobotId id() const override { return 0; }
      void on_round(RoundContext&) override {}
      bool finished() const override { return true; }
    } idle;
    std::vector<Actor*> actors{&idle};
    const RunSummary s = run_rounds(actors, 10, 0);
    CHECK(s.ledger.message_count() == 0);
    CHECK(s.rounds == 0);
  }

  TEST_CASE("echo protocol") {
    Echo a(0, 1, 3), b(1, 0, 3);
    std::vector<Actor*> actors{&a, &b};
    const RunSummary s = run_rounds(actors, 100, 7);
    CHECK(s.ledger.message_count() == 6);
    CHECK(a.received() == 3);
    CHECK(b.received() == 3);
    CHECK(s.ledger.total_bytes() == 6 * 40);
    CHECK(s.ledger.bytes_received() == s.ledger.total_bytes());
    const auto sent = s.ledger.sent_per_round();
    for (const auto& [round, bytes] : sent) CHECK(s.ledger.received_per_round().at(round) == bytes);
    CHECK(s.ledger.to_csv().starts_with("round,from,to,kind,bytes\n0,0,1,Control,40\n"));
  }

  TEST_CASE("seeded determinism") {
    CHECK(echo_run(3).ledger == echo_run(3).ledger);
    CHECK(echo_run(3).ledger.to_csv() == echo_run(3).ledger.to_csv());
  }

  TEST_CASE("delivery order") {
    Network net({0, 1, 2});
    const ScalarEntry e{0, 0.0};
    net.send(encode_scalars(MessageKind::Control, 2, 0, std::span(&e, 1)));
    net.send(encode_scalars(MessageKind::Control, 1, 0, std::span(&e, 1)));
    net.send(encode_scalars(MessageKind::Control, 1, 0, std::span(&e, 1)));
    CHECK(net.take_inbox(0).empty());  // nothing visible before the barrier
    net.barrier();
    const auto in = net.take_inbox(0);
    REQUIRE(in.size() == 3);
    CHECK(in[0].from == 1);
    CHECK(in[0].seq < in[1].seq);
    CHECK(in[2].from == 2);
    CHECK(net.idle());
  }

  TEST_CASE("handler errors carry round and robot") {
    Thrower t;
    std::vector<Actor*> actors{&t};
    try {
      (void)run_rounds(actors, 10, 0);
      FAIL("expected an error");
    } catch (const SimulationError& e) {
      CHECK(e.round() == 2);
      CHECK(e.robot() == 4);
    }
  }

  TEST_CASE("locality predicate") {
    Network net({0, 1});
    net.add_predicate("no-weights", [](const Message& m) { return m.kind != MessageKind::WeightUpdate; });
    const ScalarEntry e{0, 0.0};
    net.send(encode_scalars(MessageKind::Control, 0, 1, std::span(&e, 1)));
    CHECK_THROWS_AS(net.send(encode_scalars(MessageKind::WeightUpdate, 0, 1, std::span(&e, 1))),
                    LocalityViolation);
  }

  TEST_CASE("ledger modules") {
    CHECK(module_of(MessageKind::FrameAlignmentResult) == LedgerModule::Init);
    CHECK(module_of(MessageKind::SpanningTreeGrow) == LedgerModule::Init);
    CHECK(module_of(MessageKind::PublicPoses) == LedgerModule::Dpgo);
    CHECK(module_of(MessageKind::WeightUpdate) == LedgerModule::Dpgo);
    Network net({0, 1});
    const ScalarEntry e{0, 0.0};
    net.send(encode_scalars(MessageKind::FrameAlignmentResult, 0, 1, std::span(&e, 1)));
    net.send(encode_scalars(MessageKind::WeightUpdate, 0, 1, std::span(&e, 1)));
    CHECK(net.ledger().total_bytes(LedgerModule::Init) == 40);
    CHECK(net.ledger().total_bytes(LedgerModule::Dpgo) == 40);
    CHECK(net.ledger().message_count(MessageKind::WeightUpdate) == 1);
  }
}
