#include "evssm/event_io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include "evssm/rng.hpp"

namespace evssm::io {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', '1'};
constexpr std::uint16_t kFormatVersion = 1;

void put_bytes(std::ostream& out, const unsigned char* p, std::size_t n) {
  out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) fail(Errc::io_failure, "write failed");
}

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
    fail(Errc::truncated, "truncated stream");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void EventDataset::validate() const {
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const EventSequence& seq = sequences[s];
    require(seq.label < num_classes, Errc::label_out_of_range,
            "sequence " + std::to_string(s) + ": label " + std::to_string(seq.label) +
                " >= num_classes " + std::to_string(num_classes));
    std::uint64_t prev = 0;
    for (std::size_t e = 0; e < seq.events.size(); ++e) {
      const Event& ev = seq.events[e];
      require(ev.channel < num_channels, Errc::channel_out_of_range,
              "sequence " + std::to_string(s) + ": channel " + std::to_string(ev.channel) +
                  " >= num_channels " + std::to_string(num_channels));
      require(e == 0 || ev.timestamp_us >= prev, Errc::non_monotonic_timestamps,
              "sequence " + std::to_string(s) + ": timestamps decrease at event " +
                  std::to_string(e));
      prev = ev.timestamp_us;
    }
  }
}

std::size_t write_dataset(const EventDataset& dataset, std::ostream& sink) {
  dataset.validate();
  std::size_t bytes = 0;
  put_bytes(sink, reinterpret_cast<const unsigned char*>(kMagic), 4);
  bytes += 4;
  put_le<std::uint16_t>(sink, kFormatVersion);
  bytes += 2;
  put_le<std::uint32_t>(sink, dataset.num_channels);
  put_le<std::uint32_t>(sink, dataset.num_classes);
  put_le<std::uint32_t>(sink, static_cast<std::uint32_t>(dataset.sequences.size()));
  bytes += 12;
  for (const EventSequence& seq : dataset.sequences) {
    put_le<std::uint32_t>(sink, seq.label);
    put_le<std::uint64_t>(sink, static_cast<std::uint64_t>(seq.events.size()));
    bytes += 12;
    for (const Event& ev : seq.events) {
      put_le<std::uint64_t>(sink, ev.timestamp_us);
      put_le<std::uint32_t>(sink, ev.channel);
      bytes += 12;
    }
  }
  sink.flush();
  if (!sink) fail(Errc::io_failure, "flush failed");
  return bytes;
}

std::size_t write_dataset_file(const EventDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open for writing: " + path);
  return write_dataset(dataset, out);
}

EventDataset read_dataset(std::istream& source) {
  char magic[4];
  source.read(magic, 4);
  if (source.gcount() != 4) fail(Errc::truncated, "truncated stream: missing magic");
  if (!std::equal(magic, magic + 4, kMagic)) fail(Errc::bad_magic, "bad magic");
  std::uint16_t version = get_le<std::uint16_t>(source);
  if (version != kFormatVersion)
    fail(Errc::bad_version, "unsupported format version " + std::to_string(version));

  EventDataset ds;
  ds.num_channels = get_le<std::uint32_t>(source);
  ds.num_classes = get_le<std::uint32_t>(source);
  std::uint32_t num_sequences = get_le<std::uint32_t>(source);
  ds.sequences.resize(num_sequences);
  for (std::uint32_t s = 0; s < num_sequences; ++s) {
    EventSequence& seq = ds.sequences[s];
    seq.label = get_le<std::uint32_t>(source);
    std::uint64_t count = get_le<std::uint64_t>(source);
    seq.events.resize(count);
    for (std::uint64_t e = 0; e < count; ++e) {
      seq.events[e].timestamp_us = get_le<std::uint64_t>(source);
      seq.events[e].channel = get_le<std::uint32_t>(source);
    }
  }
  ds.validate();
  return ds;
}

EventDataset read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open for reading: " + path);
  return read_dataset(in);
}

EventDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  require(spec.num_channels >= 2, Errc::bad_argument, "synthetic task needs >= 2 channels");
  require(spec.num_classes == 2, Errc::bad_argument, "synthetic task is two-class");
  require(spec.events_per_burst >= 1, Errc::bad_argument, "events_per_burst must be >= 1");

  EventDataset ds;
  ds.num_channels = spec.num_channels;
  ds.num_classes = 2;
  ds.sequences.resize(spec.num_sequences);

  const std::uint32_t group_a = spec.num_channels / 2;  // channels [0, group_a)
  const std::uint32_t group_b = spec.num_channels - group_a;
  const std::uint64_t base_start = 1000 + spec.jitter_us;  // keeps jittered times positive

  for (std::uint32_t s = 0; s < spec.num_sequences; ++s) {
    EventSequence& seq = ds.sequences[s];
    seq.label = s % 2;  // alternating labels give an exactly balanced dataset
    Rng rng = Rng::derive(seed, s);

    auto emit_burst = [&](std::uint64_t start, std::uint32_t chan_base, std::uint32_t chan_count) {
      for (std::uint32_t k = 0; k < spec.events_per_burst; ++k) {
        std::int64_t jitter = 0;
        if (spec.jitter_us > 0)
          jitter = static_cast<std::int64_t>(rng.uniform_u64(2 * spec.jitter_us + 1)) -
                   static_cast<std::int64_t>(spec.jitter_us);
        std::int64_t t = static_cast<std::int64_t>(start + k * spec.intra_burst_spacing_us) + jitter;
        Event ev;
        ev.timestamp_us = static_cast<std::uint64_t>(std::max<std::int64_t>(t, 0));
        ev.channel = chan_base + (k % chan_count);
        seq.events.push_back(ev);
      }
    };

    if (seq.label == 0) {
      emit_burst(base_start, 0, group_a);
      emit_burst(base_start + spec.burst_gap_us, group_a, group_b);
    } else {
      emit_burst(base_start, group_a, group_b);
      emit_burst(base_start + spec.burst_gap_us, 0, group_a);
    }
    std::stable_sort(seq.events.begin(), seq.events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp_us < b.timestamp_us; });
  }
  ds.validate();
  return ds;
}

std::vector<TimedVec> pool_stride(const std::vector<TimedVec>& items, std::size_t stride) {
  require(stride >= 1, Errc::bad_argument, "stride must be >= 1");
  std::vector<TimedVec> out;
  if (items.empty()) return out;
  out.reserve((items.size() + stride - 1) / stride);
  for (std::size_t base = 0; base < items.size(); base += stride) {
    std::size_t end = std::min(items.size(), base + stride);
    std::size_t width = end - base;
    TimedVec pooled;
    pooled.timestamp_us = items[end - 1].timestamp_us;
    pooled.value.assign(items[base].value.size(), 0.0);
    for (std::size_t k = base; k < end; ++k) {
      require(items[k].value.size() == pooled.value.size(), Errc::dimension_mismatch,
              "pool_stride: mixed vector sizes");
      axpy(1.0, items[k].value, pooled.value);
    }
    for (double& v : pooled.value) v /= static_cast<double>(width);
    out.push_back(std::move(pooled));
  }
  return out;
}

}  // namespace evssm::io
