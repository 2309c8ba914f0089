#ifndef EVSSM_EVENT_IO_HPP
#define EVSSM_EVENT_IO_HPP

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "evssm/common.hpp"

namespace evssm::io {

// One input spike: when it happened and on which channel.
struct Event {
  std::uint64_t timestamp_us = 0;
  std::uint32_t channel = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventSequence {
  std::vector<Event> events;  // timestamps non-decreasing
  std::uint32_t label = 0;

  friend bool operator==(const EventSequence&, const EventSequence&) = default;
};

struct EventDataset {
  std::uint32_t num_channels = 0;
  std::uint32_t num_classes = 0;
  std::vector<EventSequence> sequences;

  // Throws on non-monotonic timestamps or out-of-range channel/label.
  void validate() const;

  friend bool operator==(const EventDataset&, const EventDataset&) = default;
};

// "EVS1" container, little-endian throughout:
//   magic "EVS1" | u16 version=1 | u32 num_channels | u32 num_classes | u32 num_sequences
//   per sequence: u32 label | u64 event_count | per event: u64 timestamp_us | u32 channel
// Returns the number of bytes written. Validates the dataset before emitting anything.
std::size_t write_dataset(const EventDataset& dataset, std::ostream& sink);
std::size_t write_dataset_file(const EventDataset& dataset, const std::string& path);

EventDataset read_dataset(std::istream& source);
EventDataset read_dataset_file(const std::string& path);

// Synthetic two-class order-discrimination task. Each sequence is a burst on one
// channel group followed by a burst on the other; class 1 swaps the order. Channel
// assignment within a burst is round-robin, so per-channel event counts are identical
// across classes by construction and only temporal order carries the label.
struct SyntheticSpec {
  std::uint32_t num_channels = 8;  // >= 2; split into two groups
  std::uint32_t num_classes = 2;   // must be 2
  std::uint32_t num_sequences = 100;
  std::uint32_t events_per_burst = 16;       // >= 1
  std::uint64_t burst_gap_us = 5000;         // first-burst start to second-burst start
  std::uint64_t intra_burst_spacing_us = 200;
  std::uint64_t jitter_us = 100;             // uniform timestamp jitter in [-j, +j]
};

EventDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Timestamped feature vector flowing between model stages.
struct TimedVec {
  std::uint64_t timestamp_us = 0;
  Vec value;
};

// Non-overlapping windows of `stride` items averaged element-wise; the window takes
// the last member's timestamp and a trailing partial window averages over its actual
// size. Output length is ceil(n / stride).
std::vector<TimedVec> pool_stride(const std::vector<TimedVec>& items, std::size_t stride);

}  // namespace evssm::io

#endif  // EVSSM_EVENT_IO_HPP
