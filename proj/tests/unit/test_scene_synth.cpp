#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "handocc/scene_synth.hpp"

using namespace handocc;

TEST(Oracle, SphereContainsCenterOnly) {
  const auto s = AnalyticShape::sphere(0.1);
  EXPECT_TRUE(occupancy_oracle(s, Vec3(0, 0, 0)));
  EXPECT_FALSE(occupancy_oracle(s, Vec3(0.2, 0, 0)));
}

TEST(Oracle, UnionContainsSecondMember) {
  std::vector<AnalyticShape> parts{AnalyticShape::sphere(0.1, RigidTransform::translate(-0.5, 0, 0)),
                                   AnalyticShape::sphere(0.1, RigidTransform::translate(0.5, 0, 0))};
  const auto u = AnalyticShape::make_union(parts);
  EXPECT_TRUE(occupancy_oracle(u, Vec3(0.5, 0, 0)));
  EXPECT_FALSE(occupancy_oracle(u, Vec3(0, 0, 0)));
}

TEST(Oracle, PosedBoxUsesItsPose) {
  const RigidTransform pose{rotation_from_axis_angle(Vec3::UnitZ(), std::numbers::pi / 4), Vec3(0.2, 0, 0)};
  const auto b = AnalyticShape::box(Vec3(0.1, 0.1, 0.1), pose);
  // The rotated square reaches 0.1 * sqrt(2) along x from its center.
  EXPECT_TRUE(occupancy_oracle(b, Vec3(0.2 + 0.14, 0, 0)));
  EXPECT_FALSE(occupancy_oracle(b, Vec3(0.2 + 0.1415, 0, 0)));
}

TEST(RenderMask, SphereOnAxisIsCenteredDisc) {
  const CameraIntrinsics k = default_camera();
  const double depth = 3.0;
  const double radius = 0.5;
  const auto mask = render_mask(AnalyticShape::sphere(radius), RigidTransform::translate(0, 0, depth), k);
  double su = 0, sv = 0;
  for (int r = 0; r < k.height; ++r)
    for (int c = 0; c < k.width; ++c)
      if (mask.at(r, c)) {
        su += c + 0.5;
        sv += r + 0.5;
      }
  const double n = static_cast<double>(mask.count());
  EXPECT_NEAR(su / n, k.cx, 1.0);
  EXPECT_NEAR(sv / n, k.cy, 1.0);
  // Outline of a sphere seen from distance d: tangent cone half-angle asin(r/d).
  const double outline = k.fx * std::tan(std::asin(radius / depth));
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      const double d = std::hypot(c + 0.5 - k.cx, r + 0.5 - k.cy);
      if (d < outline - 1.0) EXPECT_EQ(mask.at(r, c), 1) << r << "," << c;
      if (d > outline + 1.5) EXPECT_EQ(mask.at(r, c), 0) << r << "," << c;
    }
  }
}

TEST(RenderMask, ShapeBehindCameraIsEmpty) {
  try {
    render_mask(AnalyticShape::sphere(0.5), RigidTransform::translate(0, 0, -3), default_camera());
    FAIL() << "expected EmptyMask";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyMask);
  }
}

TEST(RenderMask, FaceOnBoxIsRectangle) {
  const CameraIntrinsics k = default_camera();
  const Vec3 half(0.5, 0.3, 0.2);
  const double depth = 5.0;
  const auto mask = render_mask(AnalyticShape::box(half), RigidTransform::translate(0, 0, depth), k);
  // The near face spans the widest image extent.
  const double near = depth - half.z();
  const double u0 = k.cx - k.fx * half.x() / near, u1 = k.cx + k.fx * half.x() / near;
  const double v0 = k.cy - k.fy * half.y() / near, v1 = k.cy + k.fy * half.y() / near;
  for (int r = 0; r < k.height; ++r) {
    for (int c = 0; c < k.width; ++c) {
      const double u = c + 0.5, v = r + 0.5;
      const bool inside = u > u0 + 1 && u < u1 - 1 && v > v0 + 1 && v < v1 - 1;
      const bool outside = u < u0 - 1 || u > u1 + 1 || v < v0 - 1 || v > v1 + 1;
      if (inside) EXPECT_EQ(mask.at(r, c), 1);
      if (outside) EXPECT_EQ(mask.at(r, c), 0);
    }
  }
}

TEST(RenderMask, OccupiedPointsLandOnMaskPixels) {
  Rng rng(11);
  TrajectoryOptions opt;
  for (auto family : {ShapeFamily::Sphere, ShapeFamily::Box, ShapeFamily::Cylinder, ShapeFamily::Union}) {
    const auto shape = make_random_shape(family, rng);
    const auto traj = make_trajectory(4, rng, opt);
    for (const auto& frame : traj.frames) {
      const auto mask = render_mask(shape, frame.wrist, frame.camera);
      for (const Vec3& s : sample_shape_surface(shape, 3000, rng)) {
        const auto p = try_project(s, frame.wrist, frame.camera);
        ASSERT_TRUE(p);
        EXPECT_TRUE(mask.lookup(p->u, p->v));
      }
    }
  }
}

TEST(Sequence, NoOcclusionMatchesRenderExactly) {
  Rng rng(12);
  const auto shape = make_random_shape(ShapeFamily::Box, rng);
  const auto traj = make_trajectory(3, rng);
  const auto views = generate_sequence(shape, traj, make_hand_template(), {0.0, false}, 5);
  ASSERT_EQ(views.size(), 3u);
  for (std::size_t i = 0; i < views.size(); ++i) {
    EXPECT_EQ(views[i].mask, render_mask(shape, traj.frames[i].wrist, traj.frames[i].camera));
  }
}

TEST(Sequence, OcclusionRemovesRequestedFraction) {
  Rng rng(13);
  const auto shape = make_random_shape(ShapeFamily::Cylinder, rng);
  const auto traj = make_trajectory(5, rng);
  const auto clean = generate_sequence(shape, traj, make_hand_template(), {0.0, false}, 7);
  const auto occluded = generate_sequence(shape, traj, make_hand_template(), {0.3, false}, 7);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double ratio = static_cast<double>(occluded[i].mask.count()) / static_cast<double>(clean[i].mask.count());
    EXPECT_NEAR(ratio, 0.7, 0.02);
    // Occlusion only erases.
    for (std::size_t p = 0; p < clean[i].mask.pixels.size(); ++p) EXPECT_LE(occluded[i].mask.pixels[p], clean[i].mask.pixels[p]);
  }
}

TEST(Features, DepthChannelIsOptional) {
  Rng rng(15);
  const auto shape = make_random_shape(ShapeFamily::Box, rng);
  const auto traj = make_trajectory(2, rng);
  const auto with = generate_sequence(shape, traj, make_hand_template(), {}, 3);
  SequenceOptions opt;
  opt.depth_feature = false;
  const auto without = generate_sequence(shape, traj, make_hand_template(), opt, 3);
  ASSERT_EQ(with[0].feature_grid->channels, 3);
  ASSERT_EQ(without[0].feature_grid->channels, 2);
  const auto& a = *with[0].feature_grid;
  const auto& b = *without[0].feature_grid;
  for (int r = 0; r < a.height; ++r) {
    for (int c = 0; c < a.width; ++c) {
      EXPECT_EQ(a.at(0, r, c), b.at(0, r, c));
      EXPECT_EQ(a.at(2, r, c), b.at(1, r, c));
    }
  }
  EXPECT_EQ(with[0].global_feature, without[0].global_feature);
}

TEST(Sequence, SingleFrameTrajectoryIsRejected) {
  Rng rng(14);
  EXPECT_THROW(make_trajectory(1, rng), Error);
  Trajectory one;
  one.frames.push_back({look_at(kObjectCenter, Vec3::UnitZ(), 2.5, 0.0), default_camera()});
  EXPECT_THROW(generate_sequence(AnalyticShape::sphere(0.3), one, make_hand_template(), {}, 1), Error);
}

TEST(Sequence, SameSeedIsBitIdentical) {
  auto build = [] {
    Rng rng(15);
    const auto shape = make_random_shape(ShapeFamily::Union, rng);
    const auto traj = make_trajectory(3, rng);
    return generate_sequence(shape, traj, make_hand_template(), {0.3, true}, 99);
  };
  const auto a = build();
  const auto b = build();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].mask, b[i].mask);
    EXPECT_EQ(*a[i].feature_grid, *b[i].feature_grid);
    EXPECT_EQ(a[i].global_feature, b[i].global_feature);
  }
}

TEST(Shapes, RandomShapesFitTheVolume) {
  Rng rng(16);
  for (int i = 0; i < 40; ++i) {
    const auto shape = make_random_shape(static_cast<ShapeFamily>(i % 4), rng);
    EXPECT_NO_THROW(validate_shape(shape));
  }
}

TEST(Hand, TemplateHasFullSurface) {
  const auto hand = make_hand_template();
  EXPECT_NO_THROW(hand.validate());
  EXPECT_EQ(hand.surface_points.size(), static_cast<std::size_t>(kNumHandVertices));
}

TEST(FeatureGridSampling, CellCentersReturnStoredValues) {
  FeatureGrid g(1, 2, 2);
  g.at(0, 0, 0) = 1;
  g.at(0, 0, 1) = 2;
  g.at(0, 1, 0) = 3;
  g.at(0, 1, 1) = 4;
  double v = 0;
  g.sample(0.5, 0.5, &v);
  EXPECT_DOUBLE_EQ(v, 1);
  g.sample(1.5, 1.5, &v);
  EXPECT_DOUBLE_EQ(v, 4);
  g.sample(1.0, 1.0, &v);
  EXPECT_DOUBLE_EQ(v, 2.5);
  g.sample(-5, -5, &v);
  EXPECT_DOUBLE_EQ(v, 0);
}
