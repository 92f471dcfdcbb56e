#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include "modc/deque.hpp"
#include "modc/heartbeat.hpp"

using namespace modc;

namespace {

TaskRef ref(std::uint64_t i) { return TaskRef{PoolAddress{(i + 1) * 8}}; }

Errc code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::config_error;
}

// Owner pushes `count` refs (popping every few pushes) while `thieves`
// threads steal; returns every delivered ref.
std::vector<std::uint64_t> stress(std::uint64_t count, int thieves, std::uint64_t capacity) {
  Pool pool(64 << 20);
  WorkQueue q = WorkQueue::create(pool, 0, capacity);
  std::atomic<bool> done{false};
  std::vector<std::vector<std::uint64_t>> got(thieves + 1);
  std::vector<std::thread> ts;
  for (int t = 1; t <= thieves; ++t) {
    ts.emplace_back([&, t] {
      for (;;) {
        const StealResult r = q.steal(static_cast<WorkerId>(t));
        if (r.status == StealStatus::ok) {
          got[t].push_back(r.task.addr.offset);
        } else if (r.status == StealStatus::empty) {
          if (done.load()) break;
          std::this_thread::yield();
        }
      }
    });
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    while (q.size_hint() >= static_cast<std::int64_t>(capacity) - 1) {
      const TaskRef t = q.pop(0);
      if (!t.addr.is_null()) got[0].push_back(t.addr.offset);
    }
    q.push(0, ref(i));
    if (i % 64 == 0) std::this_thread::yield();
    if (i % 3 == 0) {
      const TaskRef t = q.pop(0);
      if (!t.addr.is_null()) got[0].push_back(t.addr.offset);
    }
  }
  for (;;) {
    const TaskRef t = q.pop(0);
    if (t.addr.is_null()) break;
    got[0].push_back(t.addr.offset);
  }
  done.store(true);
  for (auto& t : ts) t.join();
  std::vector<std::uint64_t> all;
  for (auto& g : got) all.insert(all.end(), g.begin(), g.end());
  std::sort(all.begin(), all.end());
  CHECK(got[0].size() < all.size());  // thieves took part
  return all;
}

std::vector<std::uint64_t> pushed(std::uint64_t count) {
  std::vector<std::uint64_t> v;
  for (std::uint64_t i = 0; i < count; ++i) v.push_back(ref(i).addr.offset);
  return v;
}

}  // namespace

TEST_CASE("push then pop returns the same ref; empty pop and steal") {
  Pool pool(1 << 20);
  WorkQueue q = WorkQueue::create(pool, 0, 8);
  CHECK(q.pop(0).addr.is_null());
  CHECK(q.steal(1).status == StealStatus::empty);
  q.push(0, ref(1));
  CHECK(q.pop(0) == ref(1));
  CHECK(q.pop(0).addr.is_null());
}

TEST_CASE("owner end is LIFO, steal end is FIFO") {
  Pool pool(1 << 20);
  WorkQueue q = WorkQueue::create(pool, 0, 8);
  q.push(0, ref(0));
  q.push(0, ref(1));
  CHECK(q.pop(0) == ref(1));
  CHECK(q.pop(0) == ref(0));
  q.push(0, ref(0));
  q.push(0, ref(1));
  const StealResult s = q.steal(1);
  CHECK(s.status == StealStatus::ok);
  CHECK(s.task == ref(0));
}

TEST_CASE("capacity bound and ownership checks") {
  Pool pool(1 << 20);
  WorkQueue q = WorkQueue::create(pool, 0, 4);
  for (int i = 0; i < 4; ++i) q.push(0, ref(i));
  CHECK(code_of([&] { q.push(0, ref(9)); }) == Errc::queue_full);
  CHECK(code_of([&] { q.push(1, ref(9)); }) == Errc::not_owner);
  CHECK(code_of([&] { q.pop(1); }) == Errc::not_owner);
  CHECK(code_of([&] { WorkQueue::create(pool, 0, 6); }) == Errc::config_error);
}

TEST_CASE("wrap-around keeps order") {
  Pool pool(1 << 20);
  WorkQueue q = WorkQueue::create(pool, 0, 4);
  std::uint64_t next = 0, expect = 0;
  for (int round = 0; round < 20; ++round) {
    q.push(0, ref(next++));
    q.push(0, ref(next++));
    CHECK(q.steal(1).task == ref(expect++));
    CHECK(q.steal(2).task == ref(expect++));
  }
}

TEST_CASE("owner plus three thieves deliver exactly the pushed multiset") {
  for (int rep = 0; rep < 3; ++rep) CHECK(stress(10000, 3, 1 << 10) == pushed(10000));
}

TEST_CASE("four thieves on a pre-filled queue never duplicate") {
  Pool pool(1 << 20);
  WorkQueue q = WorkQueue::create(pool, 0, 1024);
  for (int i = 0; i < 1000; ++i) q.push(0, ref(i));
  std::vector<std::vector<std::uint64_t>> got(4);
  std::vector<std::thread> ts;
  for (int t = 0; t < 4; ++t) {
    ts.emplace_back([&, t] {
      for (;;) {
        const StealResult r = q.steal(static_cast<WorkerId>(t + 1));
        if (r.status == StealStatus::ok) got[t].push_back(r.task.addr.offset);
        if (r.status == StealStatus::empty) break;
      }
    });
  }
  for (auto& t : ts) t.join();
  std::vector<std::uint64_t> all;
  for (auto& g : got) all.insert(all.end(), g.begin(), g.end());
  std::sort(all.begin(), all.end());
  CHECK(all == pushed(1000));
}

TEST_CASE("last element goes to exactly one of pop and steal") {
  Pool pool(1 << 20);
  for (int round = 0; round < 2000; ++round) {
    WorkQueue q = WorkQueue::create(pool, 0, 2);
    q.push(0, ref(0));
    std::atomic<int> go{0};
    int stolen = 0, popped = 0;
    std::thread thief([&] {
      go.fetch_add(1);
      while (go.load() < 2) std::this_thread::yield();
      stolen = q.steal(1).status == StealStatus::ok ? 1 : 0;
    });
    go.fetch_add(1);
    while (go.load() < 2) std::this_thread::yield();
    popped = q.pop(0).addr.is_null() ? 0 : 1;
    thief.join();
    // A thief that lost its cas reports retry; the element is then the owner's.
    CHECK(stolen + popped == 1);
  }
}

TEST_CASE("take_ownership requires a dead owner and has one winner") {
  Pool pool(1 << 20);
  HeartbeatTable hb = HeartbeatTable::create(pool, 4);
  for (WorkerId w = 0; w < 4; ++w) hb.enroll(w);
  WorkQueue q = WorkQueue::create(pool, 0, 8);
  q.push(0, ref(5));
  CHECK_FALSE(q.take_ownership(hb, 1, 0));  // owner alive
  CHECK(q.owner() == 0);
  REQUIRE(hb.pronounce_dead(0));

  std::atomic<int> wins{0};
  std::vector<std::thread> ts;
  for (WorkerId c = 1; c <= 3; ++c)
    ts.emplace_back([&, c] { wins.fetch_add(q.take_ownership(hb, c, 0) ? 1 : 0); });
  for (auto& t : ts) t.join();
  CHECK(wins.load() == 1);
  const WorkerId heir = q.owner();
  CHECK(heir != 0);
  CHECK(q.pop(heir) == ref(5));
  CHECK(code_of([&] { q.push(0, ref(6)); }) == Errc::not_owner);
}
