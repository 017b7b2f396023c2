#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "handocc/error.hpp"
#include "handocc/random.hpp"

namespace handocc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kNumJoints = 15;
inline constexpr int kNumHandVertices = 778;
inline constexpr int kArticulationDim = 3 * kNumJoints;

// Rodrigues' formula; `axis` need not be normalized.
inline Mat3 rotation_from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n == 0.0 || angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, axis / n).toRotationMatrix();
}

inline Mat3 rotation_from_rotvec(const Vec3& rotvec) {
  return rotation_from_axis_angle(rotvec, rotvec.norm());
}

/// Haar-uniform rotation (normalized Gaussian quaternion).
inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  const double det_err = std::abs(r.determinant() - 1.0);
  const double orth_err = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  return det_err <= tol && orth_err <= tol;
}

/// Re-orthonormalizes a nearly-orthogonal matrix (used after text round trips).
inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0) u.col(2) *= -1.0;
  return u * v.transpose();
}

/// x -> rotation * x + translation.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform translate(double x, double y, double z) {
    return {Mat3::Identity(), Vec3(x, y, z)};
  }
  static RigidTransform rotate(const Mat3& r) { return {r, Vec3::Zero()}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  Vec3 operator()(const Vec3& x) const { return apply(x); }

  RigidTransform inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  /// (a * b)(x) == a(b(x))
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }

  bool approx_equal(const RigidTransform& other, double tol) const {
    return (rotation - other.rotation).cwiseAbs().maxCoeff() <= tol &&
           (translation - other.translation).cwiseAbs().maxCoeff() <= tol;
  }
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 && cx < width && cy >= 0 &&
           cy < height;
  }
  void validate() const { require(valid(), "invalid camera intrinsics"); }

  bool operator==(const CameraIntrinsics&) const = default;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

inline constexpr double kMinDepth = 1e-9;

/// Pinhole projection of a wrist-frame point; nullopt when the point is not
/// in front of the camera.
inline std::optional<Projection> try_project(const Vec3& x, const RigidTransform& wrist,
                                             const CameraIntrinsics& k) {
  const Vec3 c = wrist.apply(x);
  if (c.z() <= kMinDepth) return std::nullopt;
  return Projection{k.fx * c.x() / c.z() + k.cx, k.fy * c.y() / c.z() + k.cy, c.z()};
}

inline Projection project(const Vec3& x, const RigidTransform& wrist, const CameraIntrinsics& k) {
  k.validate();
  auto p = try_project(x, wrist, k);
  if (!p) throw Error(ErrorCode::BehindCamera, "point projects behind the camera");
  return *p;
}

/// Scaled orthographic camera; image coordinates follow
/// u = W/2 + (W/2) * scale * (X + tx), v = H/2 + (W/2) * scale * (Y + ty).
struct WeakPerspectiveCamera {
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

inline std::array<double, 2> project_weak(const WeakPerspectiveCamera& w, int width, int height,
                                          const Vec3& x) {
  const double half = 0.5 * width;
  return {0.5 * width + half * w.scale * (x.x() + w.tx),
          0.5 * height + half * w.scale * (x.y() + w.ty)};
}

struct PerspectiveFromWeak {
  CameraIntrinsics intrinsics;
  /// Maps the weak camera's model frame into the perspective camera frame.
  RigidTransform adjustment;
};

inline constexpr double kDefaultAssumedDepth = 0.5;

/// Builds a pinhole camera that reproduces the weak-perspective projection
/// exactly for model points with z = 0, which land on the camera-frame plane
/// z = assumed_depth.
inline PerspectiveFromWeak weak_to_perspective(const WeakPerspectiveCamera& w, int width,
                                               int height,
                                               double assumed_depth = kDefaultAssumedDepth) {
  require(w.scale > 0, "weak perspective scale must be positive");
  require(assumed_depth > 0, "assumed depth must be positive");
  require(width > 0 && height > 0, "image size must be positive");
  const double focal = 0.5 * width * w.scale * assumed_depth;
  CameraIntrinsics k{focal, focal, 0.5 * width, 0.5 * height, width, height};
  return {k, RigidTransform::translate(w.tx, w.ty, assumed_depth)};
}

/// Posed hand. `joints[i]` maps joint-local coordinates into the wrist frame;
/// `surface_points` are expressed in the wrist frame.
struct HandFrame {
  RigidTransform wrist;
  std::vector<RigidTransform> joints = std::vector<RigidTransform>(kNumJoints);
  std::vector<Vec3> surface_points;

  void validate() const {
    require(joints.size() == kNumJoints, "hand must have exactly 15 joints");
    require(surface_points.empty() || surface_points.size() == kNumHandVertices,
            "hand surface must have 778 points when populated");
  }
};

using ArticulationFeatures = Eigen::Matrix<double, kArticulationDim, 1>;

/// The point expressed in every joint's local frame, joints in fixed order.
inline ArticulationFeatures to_joint_coordinates(const Vec3& x, const HandFrame& hand) {
  require(hand.joints.size() == kNumJoints, "hand must have exactly 15 joints");
  ArticulationFeatures out;
  for (int i = 0; i < kNumJoints; ++i) {
    const RigidTransform& j = hand.joints[static_cast<std::size_t>(i)];
    out.segment<3>(3 * i) = j.rotation.transpose() * (x - j.translation);
  }
  return out;
}

}  // namespace handocc
