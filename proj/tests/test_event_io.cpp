#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <sstream>

#include "evssm/event_io.hpp"
#include "evssm/rng.hpp"

using namespace evssm;
using namespace evssm::io;

namespace {

EventDataset random_dataset(std::uint64_t seed, std::size_t sequences) {
  Rng rng(seed);
  EventDataset ds;
  ds.num_channels = 16;
  ds.num_classes = 4;
  for (std::size_t s = 0; s < sequences; ++s) {
    EventSequence seq;
    seq.label = static_cast<std::uint32_t>(rng.uniform_u64(ds.num_classes));
    std::uint64_t t = 0;
    const std::size_t n = rng.uniform_u64(50);
    for (std::size_t e = 0; e < n; ++e) {
      t += rng.uniform_u64(1000);
      seq.events.push_back({t, static_cast<std::uint32_t>(rng.uniform_u64(ds.num_channels))});
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

std::string to_bytes(const EventDataset& ds) {
  std::ostringstream out(std::ios::binary);
  write_dataset(ds, out);
  return out.str();
}

}  // namespace

TEST_CASE("empty dataset serializes to the 18-byte header") {
  EventDataset ds;
  ds.num_channels = 2;
  ds.num_classes = 2;
  std::ostringstream out(std::ios::binary);
  CHECK(write_dataset(ds, out) == 18);
  CHECK(out.str().size() == 18);
}

TEST_CASE("one sequence with one event costs 18 + 12 + 12 bytes") {
  EventDataset ds;
  ds.num_channels = 2;
  ds.num_classes = 2;
  ds.sequences.push_back({{{123, 1}}, 0});
  std::ostringstream out(std::ios::binary);
  CHECK(write_dataset(ds, out) == 42);
}

TEST_CASE("write/read round trip is the identity on a random dataset") {
  EventDataset ds = random_dataset(7, 100);
  std::istringstream in(to_bytes(ds), std::ios::binary);
  EventDataset back = read_dataset(in);
  CHECK(back == ds);
}

TEST_CASE("reader rejects each malformed container distinctly") {
  EventDataset ds = random_dataset(3, 4);
  std::string bytes = to_bytes(ds);

  SUBCASE("bad magic") {
    bytes[0] = 'X';
    std::istringstream in(bytes, std::ios::binary);
    CHECK_THROWS_WITH_AS(read_dataset(in), "bad magic", Error);
    try {
      std::istringstream in2(bytes, std::ios::binary);
      read_dataset(in2);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::bad_magic);
    }
  }
  SUBCASE("unsupported version") {
    bytes[4] = 9;
    std::istringstream in(bytes, std::ios::binary);
    try {
      read_dataset(in);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::bad_version);
    }
  }
  SUBCASE("truncated stream") {
    std::istringstream in(bytes.substr(0, bytes.size() - 3), std::ios::binary);
    try {
      read_dataset(in);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::truncated);
    }
  }
}

TEST_CASE("validation rejects out-of-range fields and time travel") {
  EventDataset ds;
  ds.num_channels = 4;
  ds.num_classes = 2;

  SUBCASE("channel == num_channels") {
    ds.sequences.push_back({{{10, 4}}, 0});
    try {
      std::ostringstream out;
      write_dataset(ds, out);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::channel_out_of_range);
    }
  }
  SUBCASE("label out of range") {
    ds.sequences.push_back({{{10, 1}}, 2});
    try {
      std::ostringstream out;
      write_dataset(ds, out);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::label_out_of_range);
    }
  }
  SUBCASE("non-monotonic timestamps") {
    ds.sequences.push_back({{{10, 1}, {9, 1}}, 0});
    try {
      std::ostringstream out;
      write_dataset(ds, out);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::non_monotonic_timestamps);
    }
  }
}

TEST_CASE("synthetic generation is deterministic per seed") {
  SyntheticSpec spec;
  spec.num_sequences = 40;
  EventDataset a = generate_synthetic(spec, 42);
  EventDataset b = generate_synthetic(spec, 42);
  CHECK(to_bytes(a) == to_bytes(b));
  EventDataset c = generate_synthetic(spec, 43);
  CHECK(to_bytes(a) != to_bytes(c));
}

TEST_CASE("class-conditional channel histograms are identical by construction") {
  SyntheticSpec spec;
  spec.num_channels = 10;
  spec.num_sequences = 200;
  spec.events_per_burst = 13;  // not a multiple of the group size
  EventDataset ds = generate_synthetic(spec, 5);

  std::map<std::uint32_t, std::uint64_t> h0, h1;
  for (const EventSequence& s : ds.sequences)
    for (const Event& e : s.events) (s.label == 0 ? h0 : h1)[e.channel] += 1;
  CHECK(h0 == h1);
}

TEST_CASE("synthetic generator rejects degenerate specs") {
  SyntheticSpec spec;
  spec.events_per_burst = 0;
  CHECK_THROWS_AS(generate_synthetic(spec, 1), Error);
  SyntheticSpec spec2;
  spec2.num_channels = 1;
  CHECK_THROWS_AS(generate_synthetic(spec2, 1), Error);
  SyntheticSpec spec3;
  spec3.num_classes = 3;
  CHECK_THROWS_AS(generate_synthetic(spec3, 1), Error);
}

TEST_CASE("pool_stride averages windows and keeps the last timestamp") {
  SUBCASE("hand example: [1],[3] with stride 2 -> [2] at the second timestamp") {
    std::vector<TimedVec> items = {{100, {1.0}}, {250, {3.0}}};
    auto out = pool_stride(items, 2);
    REQUIRE(out.size() == 1);
    CHECK(out[0].timestamp_us == 250);
    CHECK(out[0].value[0] == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("stride 1 is the identity") {
    std::vector<TimedVec> items = {{1, {1.0, 2.0}}, {2, {3.0, 4.0}}};
    auto out = pool_stride(items, 1);
    REQUIRE(out.size() == 2);
    CHECK(out[1].value[1] == 4.0);
  }
  SUBCASE("empty input -> empty output") { CHECK(pool_stride({}, 16).empty()); }
  SUBCASE("65536 items with stride 16 -> 4096 windows") {
    std::vector<TimedVec> items(65536, TimedVec{0, {1.0}});
    for (std::size_t i = 0; i < items.size(); ++i) items[i].timestamp_us = i;
    CHECK(pool_stride(items, 16).size() == 4096);
  }
  SUBCASE("output length is ceil(n/stride), trailing window averages its own size") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = rng.uniform_u64(40) + 1;
      const std::size_t stride = rng.uniform_u64(7) + 1;
      std::vector<TimedVec> items(n);
      for (std::size_t i = 0; i < n; ++i) items[i] = {i, {rng.uniform()}};
      auto out = pool_stride(items, stride);
      CHECK(out.size() == (n + stride - 1) / stride);
      // trailing window mean, computed directly
      const std::size_t base = (out.size() - 1) * stride;
      double mean = 0.0;
      for (std::size_t i = base; i < n; ++i) mean += items[i].value[0];
      mean /= static_cast<double>(n - base);
      CHECK(out.back().value[0] == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}
