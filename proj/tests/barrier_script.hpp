#pragma once

// Exhaustive scripted interleavings of the group barrier's step-level
// primitives. Each actor is a tiny program over prepare/commit/poll or
// over the three removal steps; the explorer runs every interleaving of
// the programs against one pool-resident barrier, restoring the barrier
// bytes between branches, and checks a witness at every step.

#include <cstring>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "modc/barrier.hpp"
#include "modc/pool.hpp"

namespace barrier_script {

using modc::ArrivePlan;
using modc::ArriveTicket;
using modc::BarrierPoll;
using modc::BarrierWord;
using modc::GroupBarrier;
using modc::WorkerId;

enum class Kind {
  survivor,      // arrives, waits, re-arrives after a membership change
  dies_waiting,  // arrives once and halts without polling
  remover,       // bump, clear slot, bump; starts once `after` is halted
};

struct Actor {
  Kind kind = Kind::survivor;
  WorkerId id = 0;
  WorkerId target = 0;           // remover only
  std::optional<std::size_t> after;  // remover: actor index that must halt first
  bool clear_then_bump = false;      // remover: the weaker two-step removal, for oracle checks
  int pc = 0;
  bool done = false;
  std::optional<ArrivePlan> plan;
  std::optional<ArriveTicket> ticket;
  std::vector<BarrierPoll> outcomes;
};

struct Scenario {
  std::uint32_t members = 3;
  std::vector<Actor> actors;
};

struct Report {
  std::uint64_t states = 0;
  std::uint64_t transitions = 0;
  std::uint64_t terminals = 0;
  std::uint64_t releasing_commits = 0;
  std::uint64_t witness_checks = 0;
  std::uint64_t cancelled_waits = 0;  // waits ended by a membership change
  std::uint64_t violations = 0;
  std::vector<std::string> messages;

  void violation(const std::string& m) {
    ++violations;
    if (messages.size() < 8) messages.push_back(m);
  }
};

class Explorer {
 public:
  explicit Explorer(Scenario s) : scenario_(std::move(s)), pool_(1 << 20) {
    barrier_.emplace(GroupBarrier::create(pool_, scenario_.members));
    for (WorkerId w = 0; w < scenario_.members; ++w) barrier_->join(w);
    span_ = 64 + 8 * std::uint64_t{scenario_.members};
    // Each removal bumps membership twice; every bump can cancel one wait.
    for (const Actor& a : scenario_.actors) max_arrivals_ += a.kind == Kind::remover ? 2 : 0;
    max_arrivals_ += 1;
  }

  Report run() {
    dfs(scenario_.actors);
    return report_;
  }

 private:
  std::vector<std::byte> snapshot() const {
    std::vector<std::byte> b(span_);
    pool_.read(barrier_->address(), b);
    return b;
  }
  void restore(const std::vector<std::byte>& b) { pool_.write(barrier_->address(), b); }

  static void put_word(std::ostringstream& o, const BarrierWord& w) {
    o << w.membership_seq << '.' << w.release_seq << '.' << w.waiting << ';';
  }

  std::string key(const std::vector<Actor>& actors, const std::vector<std::byte>& bytes) const {
    std::ostringstream o;
    o.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    for (const Actor& a : actors) {
      o << '|' << a.pc << a.done;
      if (a.plan) {
        put_word(o, a.plan->observed);
        o << a.plan->active;
      }
      if (a.ticket) {
        put_word(o, a.ticket->before);
        put_word(o, a.ticket->after);
        o << a.ticket->released_barrier;
      }
      for (BarrierPoll p : a.outcomes) o << static_cast<int>(p);
    }
    return o.str();
  }

  bool enabled(const std::vector<Actor>& actors, std::size_t i) const {
    const Actor& a = actors[i];
    if (a.done) return false;
    if (a.kind == Kind::remover) return !a.after || actors[*a.after].done;
    if (a.kind == Kind::survivor && a.pc == 2) return barrier_->poll(*a.ticket) != BarrierPoll::waiting;
    return true;
  }

  // Runs one step of actor i; checks the per-step witness.
  void step(std::vector<Actor>& actors, std::size_t i) {
    Actor& a = actors[i];
    if (a.kind == Kind::remover && a.clear_then_bump) {
      if (a.pc == 0) {
        if (!barrier_->remove_clear_slot(a.target)) report_.violation("removal slot clear failed");
      } else {
        barrier_->bump_membership();
        check_waiters_unblocked(actors);
        a.done = true;
      }
      ++a.pc;
      return;
    }
    if (a.kind == Kind::remover) {
      if (a.pc == 0) {
        barrier_->bump_membership();
        check_waiters_unblocked(actors);
      } else if (a.pc == 1) {
        if (!barrier_->remove_clear_slot(a.target)) report_.violation("removal slot clear failed");
      } else {
        barrier_->bump_membership();
        check_waiters_unblocked(actors);
        a.done = true;
      }
      ++a.pc;
      return;
    }
    if (a.pc == 0) {
      a.plan = barrier_->prepare_arrive(a.id);
      a.pc = 1;
      return;
    }
    if (a.pc == 1) {
      auto t = barrier_->commit_arrive(*a.plan);
      if (!t) {
        a.pc = 0;
        return;
      }
      ++report_.witness_checks;
      const std::uint32_t members_now = barrier_->count_active();
      if (t->released_barrier) {
        ++report_.releasing_commits;
        if (t->before.waiting + 1 != members_now) {
          std::ostringstream m;
          m << "release with witness waiting=" << t->before.waiting << " against " << members_now << " members";
          report_.violation(m.str());
        }
        if (t->after.release_seq != t->before.release_seq + 1 || t->after.waiting != 0) {
          report_.violation("releasing cas installed a malformed word");
        }
      } else if (t->after.waiting != t->before.waiting + 1) {
        report_.violation("arrival did not count itself");
      }
      a.ticket = t;
      if (a.kind == Kind::dies_waiting) {
        a.done = true;
        return;
      }
      a.pc = 2;
      return;
    }
    // pc 2: observe the outcome.
    const BarrierPoll p = barrier_->poll(*a.ticket);
    a.outcomes.push_back(p);
    if (p == BarrierPoll::released) {
      a.done = true;
    } else {
      ++report_.cancelled_waits;
      if (a.outcomes.size() >= max_arrivals_) {
        report_.violation("survivor exceeded its arrival budget");
        a.done = true;
      }
      a.pc = 0;
    }
  }

  // After a membership bump, every pending wait must be observable as over.
  void check_waiters_unblocked(const std::vector<Actor>& actors) {
    for (const Actor& a : actors) {
      if (a.kind == Kind::survivor && a.pc == 2 && barrier_->poll(*a.ticket) == BarrierPoll::waiting) {
        report_.violation("waiter still blocked after a membership change");
      }
    }
  }

  void check_invariants() {
    const BarrierWord w = barrier_->word();
    if (w.waiting > barrier_->count_active()) report_.violation("waiting exceeds the member count");
  }

  void terminal(const std::vector<Actor>& actors) {
    ++report_.terminals;
    for (const Actor& a : actors) {
      if (a.kind == Kind::remover) {
        if (!a.done) report_.violation("remover never ran");
        if (barrier_->is_member(a.target)) report_.violation("removed worker still a member");
        continue;
      }
      if (a.kind != Kind::survivor) continue;
      if (!a.done) {
        std::ostringstream m;
        m << "deadlock: survivor " << a.id << " blocked at pc " << a.pc;
        report_.violation(m.str());
      } else if (a.outcomes.empty() || a.outcomes.back() != BarrierPoll::released) {
        report_.violation("survivor finished without a release");
      }
    }
  }

  void dfs(std::vector<Actor> actors) {
    const std::vector<std::byte> bytes = snapshot();
    if (!seen_.insert(key(actors, bytes)).second) return;
    ++report_.states;
    bool any = false;
    for (std::size_t i = 0; i < actors.size(); ++i) {
      restore(bytes);
      if (!enabled(actors, i)) continue;
      any = true;
      ++report_.transitions;
      std::vector<Actor> next = actors;
      step(next, i);
      check_invariants();
      dfs(std::move(next));
    }
    restore(bytes);
    if (!any) terminal(actors);
  }

  Scenario scenario_;
  modc::Pool pool_;
  std::optional<GroupBarrier> barrier_;
  std::uint64_t span_ = 0;
  std::size_t max_arrivals_ = 0;
  std::set<std::string> seen_;
  Report report_;
};

inline Actor make_actor(Kind kind, WorkerId id) {
  Actor a;
  a.kind = kind;
  a.id = id;
  return a;
}
inline Actor survivor(WorkerId id) { return make_actor(Kind::survivor, id); }
inline Actor dies_waiting(WorkerId id) { return make_actor(Kind::dies_waiting, id); }
inline Actor remover(WorkerId target, std::optional<std::size_t> after = std::nullopt) {
  Actor a = make_actor(Kind::remover, 0);
  a.target = target;
  a.after = after;
  return a;
}

/// The standard suite: three members, one of which is lost either before
/// arriving or while waiting, plus a failure-free control.
inline std::vector<std::pair<std::string, Scenario>> standard_scenarios() {
  std::vector<std::pair<std::string, Scenario>> out;
  out.push_back({"no failure", Scenario{3, {survivor(0), survivor(1), survivor(2)}}});
  out.push_back({"peer lost before arriving", Scenario{3, {survivor(0), survivor(1), remover(2)}}});
  out.push_back({"peer lost while waiting", Scenario{3, {survivor(0), survivor(1), dies_waiting(2), remover(2, 2)}}});
  out.push_back({"two peers lost", Scenario{3, {survivor(0), dies_waiting(1), remover(1, 1), remover(2)}}});
  return out;
}

}  // namespace barrier_script
