#include <doctest.h>

#include <atomic>
#include <thread>
#include <vector>

#include "barrier_script.hpp"
#include "modc/barrier.hpp"

using namespace modc;

namespace {

Errc code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::config_error;
}

}  // namespace

TEST_CASE("barrier word packs three fields into 128 bits") {
  const BarrierWord w{(std::uint64_t{1} << 47) + 5, (std::uint64_t{1} << 47) + 9, 0xfffffffeu};
  CHECK(BarrierWord::unpack(w.pack()) == w);
  const BarrierWord zero{};
  CHECK(zero.pack() == Word128{0, 0});
  // membership in the top 48 bits, waiting in the bottom 32
  const BarrierWord m{1, 0, 0};
  CHECK(m.pack().hi == (std::uint64_t{1} << 16));
  const BarrierWord r{0, 1, 0};
  CHECK(r.pack().lo == (std::uint64_t{1} << 32));
}

TEST_CASE("join and remove maintain the member count") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 8);
  b.join(0);
  CHECK(b.count_active() == 1);
  b.join(1);
  CHECK(b.remove(0));
  CHECK(b.count_active() == 1);
  CHECK(code_of([&] { b.join(1); }) == Errc::already_member);
  CHECK(code_of([&] { b.arrive(0); }) == Errc::not_member);
  CHECK(code_of([&] { b.join(8); }) == Errc::not_member);
}

TEST_CASE("concurrent joins are all counted") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 8);
  std::vector<std::thread> ts;
  for (WorkerId w = 0; w < 8; ++w) ts.emplace_back([&, w] { b.join(w); });
  for (auto& t : ts) t.join();
  CHECK(b.count_active() == 8);
  CHECK(b.word().membership_seq == 8);
}

TEST_CASE("single member releases immediately") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 4);
  b.join(0);
  const auto before = b.word();
  CHECK(b.arrive_and_wait(0) == BarrierOutcome::released);
  CHECK(b.word().release_seq == before.release_seq + 1);
  CHECK(b.word().waiting == 0);
}

TEST_CASE("two waiters and a third arrival all release") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 3);
  for (WorkerId w = 0; w < 3; ++w) b.join(w);
  auto t0 = b.arrive(0);
  auto t1 = b.arrive(1);
  CHECK(b.word().waiting == 2);
  CHECK(b.poll(*t0) == BarrierPoll::waiting);
  auto t2 = b.arrive(2);
  CHECK(t2->released_barrier);
  CHECK(b.poll(*t0) == BarrierPoll::released);
  CHECK(b.poll(*t1) == BarrierPoll::released);
  CHECK(b.word().release_seq == 1);
  CHECK(b.word().waiting == 0);
}

TEST_CASE("removing the missing member cancels both waits") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 3);
  for (WorkerId w = 0; w < 3; ++w) b.join(w);
  auto t0 = b.arrive(0);
  auto t1 = b.arrive(1);
  CHECK(b.remove(2));
  CHECK(b.poll(*t0) == BarrierPoll::membership_changed);
  CHECK(b.poll(*t1) == BarrierPoll::membership_changed);
  CHECK(b.word().waiting == 0);
  CHECK(b.word().release_seq == 0);

  // Re-arrival of the survivors releases with the smaller membership.
  auto r0 = b.arrive(0);
  CHECK_FALSE(r0->released_barrier);
  auto r1 = b.arrive(1);
  CHECK(r1->released_barrier);
  CHECK(b.poll(*r0) == BarrierPoll::released);
  CHECK(b.word().release_seq == 1);
}

TEST_CASE("removing a sole waiter's peer unblocks it") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 2);
  b.join(0);
  b.join(1);
  std::atomic<int> outcome{-1};
  std::thread waiter([&] { outcome = static_cast<int>(*b.arrive_and_wait(0)); });
  while (b.word().waiting != 1) std::this_thread::yield();
  CHECK(b.remove(1));
  waiter.join();
  CHECK(outcome.load() == static_cast<int>(BarrierOutcome::membership_changed));
  CHECK(b.arrive_and_wait(0) == BarrierOutcome::released);
}

TEST_CASE("double remove of one worker changes membership once") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 3);
  for (WorkerId w = 0; w < 3; ++w) b.join(w);
  CHECK(b.remove(2));
  const auto after_first = b.word().membership_seq;
  CHECK_FALSE(b.remove(2));
  CHECK(b.word().membership_seq == after_first);
  CHECK(b.count_active() == 2);
}

TEST_CASE("a removed member's pending arrival is discarded") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 3);
  for (WorkerId w = 0; w < 3; ++w) b.join(w);
  auto t0 = b.arrive(0);
  b.arrive(2);  // 2 halts while waiting
  CHECK(b.word().waiting == 2);
  CHECK(b.remove(2));
  CHECK(b.word().waiting == 0);
  CHECK(b.poll(*t0) == BarrierPoll::membership_changed);
  // 0 alone must not be enough: 1 is still a member.
  auto r0 = b.arrive(0);
  CHECK_FALSE(r0->released_barrier);
  CHECK(b.arrive(1)->released_barrier);
}

TEST_CASE("release is reported in preference to a later membership change") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 3);
  for (WorkerId w = 0; w < 2; ++w) b.join(w);
  auto t0 = b.arrive(0);
  CHECK(b.arrive(1)->released_barrier);
  b.join(2);  // membership moves on before 0 observes the release
  CHECK(b.poll(*t0) == BarrierPoll::released);
  CHECK(b.retract(*t0) == BarrierPoll::released);
}

TEST_CASE("retract withdraws a pending arrival") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 2);
  b.join(0);
  b.join(1);
  auto t0 = b.arrive(0);
  CHECK(b.retract(*t0) == BarrierPoll::waiting);
  CHECK(b.word().waiting == 0);
  // 1 arriving alone now waits instead of releasing.
  auto t1 = b.arrive(1);
  CHECK_FALSE(t1->released_barrier);
  CHECK(b.arrive(0)->released_barrier);
  CHECK(b.retract(*t1) == BarrierPoll::released);
}

TEST_CASE("arrival with a stale membership expectation is refused") {
  Pool pool(1 << 20);
  auto b = GroupBarrier::create(pool, 2);
  b.join(0);
  b.join(1);
  const auto m = b.word().membership_seq;
  CHECK(b.arrive(0, m + 1) == std::nullopt);
  CHECK(b.word().waiting == 0);
  CHECK(b.arrive(0, m).has_value());
}

TEST_CASE("exhaustive interleavings keep the barrier safe and live") {
  for (auto& [name, scenario] : barrier_script::standard_scenarios()) {
    CAPTURE(name);
    barrier_script::Explorer explorer(scenario);
    const auto report = explorer.run();
    for (const auto& m : report.messages) INFO(m);
    CHECK(report.violations == 0);
    CHECK(report.terminals > 0);
    CHECK(report.releasing_commits > 0);
    if (name != "no failure") CHECK(report.cancelled_waits > 0);
  }
}

TEST_CASE("the interleaving oracle rejects a clear-then-bump removal") {
  // Removing without the leading bump lets an arrival counted before the
  // clear release on the stale count; the witness check must notice.
  auto weak = barrier_script::remover(2, 2);
  weak.clear_then_bump = true;
  barrier_script::Scenario s{3, {barrier_script::survivor(0), barrier_script::survivor(1),
                                 barrier_script::dies_waiting(2), weak}};
  const auto report = barrier_script::Explorer(s).run();
  CHECK(report.violations > 0);
}

TEST_CASE("threaded phases with a member removed mid-run") {
  Pool pool(1 << 20);
  constexpr WorkerId members = 4;
  auto b = GroupBarrier::create(pool, members);
  for (WorkerId w = 0; w < members; ++w) b.join(w);
  constexpr int phases = 200;
  std::atomic<int> released_total{0};
  std::vector<std::thread> ts;
  for (WorkerId w = 0; w < members - 1; ++w) {
    ts.emplace_back([&, w] {
      int done = 0;
      while (done < phases) {
        if (b.arrive_and_wait(w) == BarrierOutcome::released) {
          ++done;
          ++released_total;
        }
      }
    });
  }
  // The last member takes part in a few phases, then is removed.
  int own = 0;
  while (own < 5) {
    if (b.arrive_and_wait(members - 1) == BarrierOutcome::released) ++own;
  }
  CHECK(b.remove(members - 1));
  for (auto& t : ts) t.join();
  CHECK(released_total.load() == phases * static_cast<int>(members - 1));
  CHECK(b.word().waiting == 0);
}
