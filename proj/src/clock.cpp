#include "modc/clock.hpp"

namespace modc {

std::uint64_t SteadyClock::now() const {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start_).count());
}

VirtualClock::VirtualClock(std::uint32_t workers)
    : live_(new std::atomic<bool>[workers]), seen_(new std::atomic<std::uint64_t>[workers]), workers_(workers) {
  for (std::uint32_t i = 0; i < workers; ++i) {
    live_[i].store(false);
    seen_[i].store(0);
  }
}

void VirtualClock::enlist(WorkerId w) {
  seen_[w].store(now_.load());
  live_[w].store(true);
}

void VirtualClock::retire(WorkerId w) {
  live_[w].store(false);
  try_advance();
}

void VirtualClock::tick(WorkerId w) {
  seen_[w].store(now_.load());
  try_advance();
}

void VirtualClock::try_advance() {
  std::uint64_t t = now_.load();
  bool any = false;
  for (std::uint32_t i = 0; i < workers_; ++i) {
    if (!live_[i].load()) continue;
    any = true;
    if (seen_[i].load() < t) return;
  }
  if (any) now_.compare_exchange_strong(t, t + 1);
}

}  // namespace modc
