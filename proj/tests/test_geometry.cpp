// Copyright 2026 The retrofpn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "retro/geometry.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace retro;

namespace {

PointCloud cloud_of(std::vector<Vec3> pts, std::vector<int> labels = {}) {
  PointCloud c;
  c.coords = std::move(pts);
  c.labels = std::move(labels);
  return c;
}

/// Integer lattice points, so that many distances tie exactly.
PointCloud lattice_cloud(std::size_t n, std::mt19937_64& rng, int span) {
  std::uniform_int_distribution<int> u(0, span);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i)
    c.coords.push_back({static_cast<double>(u(rng)), static_cast<double>(u(rng)), static_cast<double>(u(rng))});
  return c;
}

void expect_brute_force(const PointCloud& source, const PointCloud& queries, std::size_t k) {
  const auto map = knn_query(source, queries, k);
  ASSERT_EQ(map.rows, queries.size());
  ASSERT_EQ(map.k, k);
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto want = oracle::brute_knn(source.coords, queries.coords[q], k);
    for (std::size_t j = 0; j < k; ++j) {
      ASSERT_EQ(map.index[q * k + j], want[j].index) << "query " << q << " rank " << j;
      ASSERT_NEAR(map.dist2[q * k + j], want[j].d2, 1e-15 * (1.0 + want[j].d2));
    }
  }
}

PointCloud shuffled(const PointCloud& c, std::mt19937_64& rng) {
  std::vector<std::uint32_t> perm(c.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  return select(c, perm);
}

}  // namespace

TEST(Knn, CoincidentQueryFindsItself) {
  std::mt19937_64 rng(1);
  PointCloud src = fixtures::random_cloud(100, rng);
  PointCloud q = cloud_of({src.coords[37]});
  const auto map = knn_query(src, q, 1);
  EXPECT_EQ(map.index[0], 37u);
  EXPECT_EQ(map.dist2[0], 0.0);
}

TEST(Knn, FullKReturnsAllSorted) {
  std::mt19937_64 rng(2);
  PointCloud src = fixtures::random_cloud(90, rng), q = fixtures::random_cloud(3, rng);
  const auto map = knn_query(src, q, src.size());
  for (std::size_t r = 0; r < q.size(); ++r) {
    std::set<std::uint32_t> seen(map.row(r).begin(), map.row(r).end());
    EXPECT_EQ(seen.size(), src.size());
    EXPECT_TRUE(std::is_sorted(map.row_dist2(r).begin(), map.row_dist2(r).end()));
  }
}

TEST(Knn, TwoHundredPointsMatchSortOracle) {
  std::mt19937_64 rng(3);
  PointCloud src = fixtures::random_cloud(200, rng), q = fixtures::random_cloud(50, rng);
  expect_brute_force(src, q, 8);
  expect_brute_force(src, src, 8);
}

TEST(Knn, RandomInstancesUpTo500MatchBruteForce) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> size(1, 500);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = size(rng);
    std::uniform_int_distribution<std::size_t> kk(1, std::min<std::size_t>(n, 16));
    const bool ties = trial % 2 == 0;
    PointCloud src = ties ? lattice_cloud(n, rng, 4) : fixtures::random_cloud(n, rng);
    PointCloud q = ties ? lattice_cloud(40, rng, 4) : fixtures::random_cloud(40, rng);
    expect_brute_force(src, q, kk(rng));
  }
}

TEST(Knn, TiesResolveBySmallerIndex) {
  PointCloud src = cloud_of({{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, 0, 5}});
  const auto map = knn_query(src, cloud_of({{0, 0, 0}}), 3);
  EXPECT_EQ(std::vector<std::uint32_t>(map.index.begin(), map.index.end()), (std::vector<std::uint32_t>{0, 1, 2}));
}

TEST(Knn, Errors) {
  std::mt19937_64 rng(5);
  PointCloud src = fixtures::random_cloud(5, rng);
  EXPECT_THROW(knn_query(src, src, 6), ArgumentError);
  EXPECT_THROW(knn_query(src, src, 0), ArgumentError);
  EXPECT_THROW(knn_query(PointCloud{}, src, 1), ArgumentError);
}

TEST(Knn, ConcurrentQueriesAgree) {
  std::mt19937_64 rng(6);
  PointCloud src = fixtures::random_cloud(2000, rng), q = fixtures::random_cloud(400, rng);
  KdTree tree(src.coords);
  NeighborMap a, b;
  std::thread t([&] { a = knn_query(tree, q.coords, 8); });
  b = knn_query(tree, q.coords, 8);
  t.join();
  EXPECT_EQ(a.index, b.index);
}

TEST(GridDownsample, LargeCellGivesOnePoint) {
  std::mt19937_64 rng(7);
  PointCloud c = fixtures::random_cloud(50, rng);
  EXPECT_EQ(grid_downsample(c, 10.0).size(), 1u);
}

TEST(GridDownsample, TinyCellKeepsEveryPoint) {
  PointCloud c = cloud_of({{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}, {0.3, 0.3, 0.3}}, {0, 1, 2, 3});
  PointCloud d = grid_downsample(c, 0.05);
  EXPECT_EQ(d.size(), c.size());
}

TEST(GridDownsample, MatchesHashGridOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud c = fixtures::random_cloud(400, rng, 4);
    for (std::size_t i = 0; i < c.size(); i += 7) c.labels[i] = kIgnoreLabel;
    const double cell = 0.1 + 0.05 * trial;
    PointCloud d = grid_downsample(c, cell);
    auto table = oracle::hash_grid(c, cell);
    ASSERT_EQ(d.size(), table.size());
    // Match each output point to the oracle cell containing its members' centroid.
    std::map<std::vector<long>, std::pair<Vec3, int>> want;
    for (const auto& [key, cellv] : table) {
      Vec3 ctr{0, 0, 0};
      for (auto i : cellv.members)
        for (int a = 0; a < 3; ++a) ctr[a] += c.coords[i][a] / static_cast<double>(cellv.members.size());
      want[{std::get<0>(key), std::get<1>(key), std::get<2>(key)}] = {ctr, oracle::counted_mode(c, cellv.members)};
    }
    std::size_t i = 0;
    for (const auto& [key, expected] : want) {  // both sides ordered by (x, y, z) key
      for (int a = 0; a < 3; ++a) EXPECT_NEAR(d.coords[i][a], expected.first[a], 1e-12);
      EXPECT_EQ(d.labels[i], expected.second);
      ++i;
    }
  }
}

TEST(GridDownsample, PermutationInvariant) {
  std::mt19937_64 rng(9);
  PointCloud c = fixtures::random_cloud(300, rng);
  PointCloud a = grid_downsample(c, 0.2), b = grid_downsample(shuffled(c, rng), 0.2);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(GridDownsample, AveragesFeatures) {
  PointCloud c = cloud_of({{0, 0, 0}, {0.1, 0.1, 0.1}}, {1, 1});
  c.features = {1, 2, 3, 6};
  c.feature_dim = 2;
  PointCloud d = grid_downsample(c, 1.0);
  EXPECT_EQ(d.features, (std::vector<double>{2, 4}));
}

TEST(GridDownsample, RejectsNonPositiveCell) {
  PointCloud c = cloud_of({{0, 0, 0}}, {0});
  EXPECT_THROW(grid_downsample(c, 0.0), ArgumentError);
  EXPECT_THROW(grid_downsample(c, -1.0), ArgumentError);
}

TEST(Voxelize, MajorityAndTieBreak) {
  PointCloud c = cloud_of({{0, 0, 0}, {0.1, 0, 0}, {0, 0.1, 0}}, {1, 1, 2});
  EXPECT_EQ(voxelize_majority(c, 1.0).labels, std::vector<int>{1});
  PointCloud tie = cloud_of({{0, 0, 0}, {0.1, 0, 0}}, {2, 1});
  EXPECT_EQ(voxelize_majority(tie, 1.0).labels, std::vector<int>{1});
}

TEST(Voxelize, IgnoreLabelOnlyWinsAlone) {
  PointCloud c = cloud_of({{0, 0, 0}, {0.1, 0, 0}, {0.2, 0, 0}}, {-1, -1, 3});
  EXPECT_EQ(voxelize_majority(c, 1.0).labels, std::vector<int>{3});
  PointCloud only = cloud_of({{0, 0, 0}, {0.1, 0, 0}}, {-1, -1});
  EXPECT_EQ(voxelize_majority(only, 1.0).labels, std::vector<int>{-1});
}

TEST(Voxelize, CentersOnCanonicalGrid) {
  PointCloud c = cloud_of({{1, 2, 3}, {1.25, 2.1, 3.9}}, {0, 0});
  PointCloud v = voxelize_majority(c, 0.5);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v.coords[0], (Vec3{1.25, 2.25, 3.25}));
  EXPECT_EQ(v.coords[1], (Vec3{1.25, 2.25, 3.75}));
}

TEST(Voxelize, RandomInstancesMatchCountingOracle) {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<std::size_t> size(1, 500);
  std::uniform_real_distribution<double> vox(0.05, 0.6);
  for (int trial = 0; trial < 60; ++trial) {
    PointCloud c = fixtures::random_cloud(size(rng), rng, 4);
    for (auto& l : c.labels)
      if (rng() % 5 == 0) l = kIgnoreLabel;
    const double voxel = vox(rng);
    PointCloud v = voxelize_majority(c, voxel);
    auto table = oracle::hash_grid(c, voxel);
    ASSERT_EQ(v.size(), table.size());
    std::map<std::tuple<long, long, long>, int> want;
    for (const auto& [key, cellv] : table) want[key] = oracle::counted_mode(c, cellv.members);
    std::size_t i = 0;
    for (const auto& [key, label] : want) ASSERT_EQ(v.labels[i++], label) << "trial " << trial;
  }
}

TEST(Voxelize, PermutationInvariantAndLabelsFromMembers) {
  std::mt19937_64 rng(11);
  PointCloud c = fixtures::random_cloud(300, rng);
  PointCloud a = voxelize_majority(c, 0.25), b = voxelize_majority(shuffled(c, rng), 0.25);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_EQ(a.labels, b.labels);
  const std::set<int> input(c.labels.begin(), c.labels.end());
  for (int l : a.labels) EXPECT_TRUE(input.count(l));
}

TEST(Voxelize, Errors) {
  PointCloud c = cloud_of({{0, 0, 0}}, {0});
  EXPECT_THROW(voxelize_majority(c, 0.0), ArgumentError);
  EXPECT_THROW(voxelize_majority(cloud_of({{0, 0, 0}}), 1.0), ArgumentError);
}

TEST(RandomDownsample, FullDrawIsIdentity) {
  std::mt19937_64 rng(12);
  PointCloud c = fixtures::random_cloud(40, rng);
  PointCloud d = random_downsample(c, c.size(), 3);
  EXPECT_EQ(d.coords, c.coords);
  EXPECT_EQ(d.labels, c.labels);
}

TEST(RandomDownsample, DeterministicSortedAndDistinct) {
  const auto a = random_sample_indices(100, 30, 5), b = random_sample_indices(100, 30, 5);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<std::uint32_t>(a.begin(), a.end()).size(), 30u);
  EXPECT_NE(a, random_sample_indices(100, 30, 6));
}

TEST(RandomDownsample, SelectionFrequencyIsUniform) {
  const std::size_t n = 40, draws = 10000;
  std::vector<std::size_t> hits(n, 0);
  for (std::size_t s = 0; s < draws; ++s)
    for (auto i : random_sample_indices(n, n / 2, s)) ++hits[i];
  for (std::size_t i = 0; i < n; ++i) {
    const double f = static_cast<double>(hits[i]) / draws;
    EXPECT_GE(f, 0.45) << i;
    EXPECT_LE(f, 0.55) << i;
  }
}

TEST(RandomDownsample, RejectsOversizedDraw) {
  std::mt19937_64 rng(13);
  PointCloud c = fixtures::random_cloud(10, rng);
  EXPECT_THROW(random_downsample(c, 11, 0), ArgumentError);
  EXPECT_THROW(random_downsample(c, 0, 0), ArgumentError);
}
