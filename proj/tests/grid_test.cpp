#include <gtest/gtest.h>

#include <cmath>

#include <uqno/grid.hpp>

using namespace uqno;

TEST(MakeUniformGrid, ThreePoints) {
  const Grid g = make_uniform_grid(3);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.5);
  EXPECT_EQ(g[2], 1.0);
}

TEST(MakeUniformGrid, FivePoints) {
  const Grid g = make_uniform_grid(5);
  const double expected[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(g[i], expected[i]);
  EXPECT_TRUE(g.is_uniform());
}

TEST(MakeUniformGrid, RejectsTooFewPoints) {
  EXPECT_THROW(make_uniform_grid(2), InvalidArgument);
  EXPECT_THROW(make_uniform_grid(0), InvalidArgument);
}

TEST(Grid, RejectsUnorderedOrOutOfRange) {
  EXPECT_THROW(Grid({0.0, 0.5, 0.5}), InvalidArgument);
  EXPECT_THROW(Grid({0.0, 0.7, 0.3}), InvalidArgument);
  EXPECT_THROW(Grid({-0.1, 0.5, 1.0}), InvalidArgument);
  EXPECT_THROW(Grid({0.0, 0.5, 1.1}), InvalidArgument);
  EXPECT_THROW(Grid({0.0, 1.0}), InvalidArgument);
  EXPECT_NO_THROW(Grid({0.0, 0.1, 1.0}));
  EXPECT_FALSE(Grid({0.0, 0.1, 1.0}).is_uniform());
}

TEST(Grid, TrapezoidWeightsIntegrateLinearExactly) {
  const Grid g({0.0, 0.1, 0.35, 0.6, 1.0});
  std::vector<double> v;
  for (double x : g.points()) v.push_back(3.0 * x + 1.0);
  EXPECT_NEAR(trapezoid_integral(GridFunction(g, v)), 2.5, 1e-14);
  double total = 0.0;
  for (double w : g.trapezoid_weights()) total += w;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(GridFunction, Invariants) {
  const Grid g = make_uniform_grid(4);
  EXPECT_THROW(GridFunction(g, std::vector<double>{1, 2, 3}), InvalidArgument);
  EXPECT_THROW(GridFunction(g, std::vector<double>{1, 2, NAN, 4}), InvalidArgument);
  EXPECT_THROW(GridFunction(g, std::vector<double>{1, 2, INFINITY, 4}), InvalidArgument);
  EXPECT_EQ(GridFunction(g, 2.0).values()[3], 2.0);
}

TEST(FunctionPair, GridsMustMatch) {
  const GridFunction a(make_uniform_grid(4), 1.0);
  const GridFunction b(make_uniform_grid(5), 1.0);
  EXPECT_THROW(FunctionPair(a, b), InvalidArgument);
  EXPECT_NO_THROW(FunctionPair(a, a));
}

TEST(Dataset, NonemptyAndMinPoints) {
  EXPECT_THROW(Dataset({}, SplitTag::kTest), InvalidArgument);
  const GridFunction a(make_uniform_grid(9), 1.0);
  const GridFunction b(make_uniform_grid(5), 1.0);
  const Dataset d({FunctionPair(a, a), FunctionPair(b, b)}, SplitTag::kCalibration);
  EXPECT_EQ(d.min_points(), 5u);
  EXPECT_THROW(require_split(d, SplitTag::kTest, "x"), InvalidArgument);
}

TEST(SplitTag, StringRoundTrip) {
  for (SplitTag t : {SplitTag::kTrainBase, SplitTag::kTrainQuantile, SplitTag::kCalibration,
                     SplitTag::kTest})
    EXPECT_EQ(split_tag_from_string(to_string(t)), t);
  EXPECT_THROW(split_tag_from_string("validation"), InvalidArgument);
}
