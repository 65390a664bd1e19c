// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "nuclr/core/rng.hpp"
#include "nuclr/data/binning.hpp"
#include "nuclr/data/dataset_io.hpp"
#include "test_util.hpp"

using namespace nuclr;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

Recording small_spike_recording() {
  Recording r;
  r.session_id = "s1";
  r.subject_id = "m1";
  r.modality = Modality::Spikes;
  r.duration_s = 2.0;
  r.neurons = {{"n0", "g0", "pv", "V1"}, {"n1", "g0", std::nullopt, "V1"}, {"n2", "g1", "sst", std::nullopt}};
  r.spikes = {{0.1, 0.123456789012, 1.9}, {}, {0.5}};
  return r;
}

}  // namespace

TEST(BinSpikes, DirectCounting) {
  const std::vector<double> s{0.005, 0.012, 0.030};
  EXPECT_EQ(bin_spikes(s, 0.0, 0.06, 0.02), (std::vector<int>{2, 1, 0}));
}

TEST(BinSpikes, EmptyListGivesZeros) {
  EXPECT_EQ(bin_spikes({}, 0.0, 0.1, 0.02), (std::vector<int>(5, 0)));
}

TEST(BinSpikes, BoundarySpikeGoesToRightBin) {
  const std::vector<double> s{0.02};
  EXPECT_EQ(bin_spikes(s, 0.0, 0.06, 0.02), (std::vector<int>{0, 1, 0}));
  // Also with an offset window where (t - t0) / bin rounds below the integer.
  const std::vector<double> s2{0.12};
  EXPECT_EQ(bin_spikes(s2, 0.1, 0.06, 0.02), (std::vector<int>{0, 1, 0}));
}

TEST(BinSpikes, Errors) {
  EXPECT_EQ(code_of([] { bin_spikes({}, 0.0, 0.05, 0.02); }), ErrorCode::NonDivisibleWindow);
  EXPECT_EQ(code_of([] { bin_spikes({}, -1.0, 0.06, 0.02); }), ErrorCode::WindowOutOfRange);
  EXPECT_EQ(code_of([] { bin_spikes({}, 1.0, 0.06, 0.02, 1.05); }), ErrorCode::WindowOutOfRange);
}

TEST(BinSpikes, SumEqualsSpikesInWindowProperty) {
  RngStream rng(1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(rng.below(200));
    for (auto& t : s) t = rng.uniform(0.0, 20.0);
    std::sort(s.begin(), s.end());
    const double bin = (1 + rng.below(5)) * 0.01;
    const double t_ctx = bin * static_cast<double>(1 + rng.below(100));
    const double t0 = rng.uniform(0.0, 20.0 - t_ctx);
    const auto counts = bin_spikes(s, t0, t_ctx, bin, 20.0);
    const auto B = static_cast<double>(counts.size());
    const long inside = std::count_if(s.begin(), s.end(), [&](double t) { return t >= t0 && t < t0 + B * bin; });
    EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), 0L), inside);
  }
}

TEST(PatchBins, Reshape) {
  const std::vector<int> c{1, 0, 2, 0, 0, 1};
  auto p = patch_bins(c, 3);
  EXPECT_EQ(p.shape(), (Shape{2, 3}));
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{1, 0, 2, 0, 0, 1}));
  auto whole = patch_bins(c, 6);
  EXPECT_EQ(whole.shape(), (Shape{1, 6}));
  EXPECT_EQ(code_of([&] { patch_bins(c, 4); }), ErrorCode::NonDivisible);
}

TEST(PatchBins, DefaultsGiveTenPatchesOfFifty) {
  DataConfig c;
  EXPECT_EQ(patches_per_window(c), 10u);
  EXPECT_EQ(bins_per_patch(c), 50u);
  EXPECT_DOUBLE_EQ(DataConfig::defaults_for(Modality::Calcium).t_ctx_s, 30.0);
}

TEST(PatchBins, FlattenIsIdentityProperty) {
  RngStream rng(2, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t f = 1 + rng.below(7), p = 1 + rng.below(7);
    std::vector<int> c(f * p);
    for (auto& v : c) v = static_cast<int>(rng.below(5));
    auto patches = patch_bins(c, f);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(patches[i], c[i]);
  }
}

TEST(PatchTrace, ConstantTraceAndSnapping) {
  const std::vector<double> trace(300, 0.75);
  auto p = patch_trace(trace, 10.0, 0.0, 30.0, samples_per_patch(DataConfig::defaults_for(Modality::Calcium), 10.0));
  EXPECT_EQ(p.shape(), (Shape{30, 10}));
  for (double v : p.data()) EXPECT_EQ(v, 0.75);

  std::vector<double> ramp(100);
  std::iota(ramp.begin(), ramp.end(), 0.0);
  // t0 = 1.04 s snaps to sample 10 at 10 Hz.
  auto q = patch_trace(ramp, 10.0, 1.04, 2.0, 10);
  EXPECT_EQ(q[0], 10.0);
  EXPECT_EQ(q[19], 29.0);
  EXPECT_EQ(code_of([&] { patch_trace(ramp, 10.0, 9.0, 2.0, 10); }), ErrorCode::WindowOutOfRange);
}

TEST(MakeView, ShapesAndTimestamps) {
  auto rec = small_spike_recording();
  DataConfig c;
  c.t_ctx_s = 1.0;
  c.t_patch_s = 0.5;
  c.bin_size_s = 0.1;
  const std::vector<std::size_t> idx{0, 2};
  auto v = make_view(rec, idx, 0.0, c);
  EXPECT_EQ(v.patches.shape(), (Shape{2, 2, 5}));
  EXPECT_EQ(v.neuron_ids, (std::vector<std::string>{"n0", "n2"}));
  EXPECT_EQ(v.patch_timestamps_s, (std::vector<double>{0.25, 0.75}));
  // n0 spikes at 0.1 and 0.123 fall in bin 1; n2 at 0.5 falls in patch 1, bin 0.
  EXPECT_EQ(v.patches[1], 2.0);
  EXPECT_EQ(v.patches[10 + 5], 1.0);
}

TEST(Recording, GroupsPartitionNeurons) {
  auto rec = small_spike_recording();
  auto groups = rec.groups();
  ASSERT_EQ(groups.size(), 2u);
  std::vector<std::size_t> all;
  for (const auto& g : groups) all.insert(all.end(), g.neurons.begin(), g.neurons.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(DatasetIo, EmptyDirectoryIsSchemaError) {
  auto dir = nuclr::testing::temp_dir("empty_ds");
  EXPECT_EQ(code_of([&] { load_dataset(dir); }), ErrorCode::SchemaError);
}

TEST(DatasetIo, RoundTripSpikesAndCalcium) {
  auto dir = nuclr::testing::temp_dir("roundtrip_ds");
  Recording ca;
  ca.session_id = "c1";
  ca.subject_id = "m2";
  ca.modality = Modality::Calcium;
  ca.duration_s = 1.0;
  ca.sample_rate_hz = 5.0;
  ca.neurons = {{"a", "c1", "exc", std::nullopt}};
  ca.traces = {{0.1, -0.25, 3.0e-7, 1.0 / 3.0, 2.0}};
  const std::vector<Recording> recs{small_spike_recording(), ca};
  save_dataset(recs, dir);
  auto loaded = load_dataset(dir);
  EXPECT_EQ(loaded, recs);
  auto dir2 = nuclr::testing::temp_dir("roundtrip_ds2");
  save_dataset(loaded, dir2);
  EXPECT_EQ(load_dataset(dir2), loaded);
}

TEST(DatasetIo, NeuronWithoutRowsHasNoSpikesAndRowsAreSortedOnLoad) {
  auto dir = nuclr::testing::temp_dir("unsorted_ds");
  save_dataset({small_spike_recording()}, dir);
  {
    std::ofstream out(dir / "spikes" / "s1.csv", std::ios::binary);
    out << "neuron_id,time_s\nn0,1.5\nn0,0.25\n";
  }
  auto recs = load_dataset(dir);
  EXPECT_EQ(recs[0].spikes[0], (std::vector<double>{0.25, 1.5}));
  EXPECT_TRUE(recs[0].spikes[1].empty());
  EXPECT_TRUE(recs[0].spikes[2].empty());
}

TEST(DatasetIo, SchemaErrorsNameFileAndField) {
  auto dir = nuclr::testing::temp_dir("bad_ds");
  save_dataset({small_spike_recording()}, dir);
  {
    std::ofstream out(dir / "manifest.json");
    out << R"({"format_version":1,"sessions":[{"session_id":"s1","modality":"spikes","duration_s":2,"neurons":[]}]})";
  }
  try {
    load_dataset(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SchemaError);
    EXPECT_NE(std::string(e.what()).find("subject_id"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("manifest.json"), std::string::npos);
  }
  save_dataset({small_spike_recording()}, dir);
  std::filesystem::remove(dir / "spikes" / "s1.csv");
  EXPECT_EQ(code_of([&] { load_dataset(dir); }), ErrorCode::MissingActivity);
  save_dataset({small_spike_recording()}, dir);
  {
    std::ofstream out(dir / "spikes" / "s1.csv");
    out << "neuron_id,time_s\nghost,0.5\n";
  }
  EXPECT_EQ(code_of([&] { load_dataset(dir); }), ErrorCode::SchemaError);
}
