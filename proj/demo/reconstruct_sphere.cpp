// Carves a sphere from 12 rendered silhouettes, meshes the hull and scores it
// against the analytic surface. Writes sphere_hull.obj to the working
// directory (or to the path given as the first argument).

#include <fstream>
#include <iostream>

#include "handocc/pipeline.hpp"

using namespace handocc;

int main(int argc, char** argv) {
  const std::string out = argc > 1 ? argv[1] : "sphere_hull.obj";
  const auto sphere = AnalyticShape::sphere(0.2, RigidTransform{Mat3::Identity(), kObjectCenter});

  Rng rng(7);
  TrajectoryOptions opt;
  opt.spread = true;
  SequenceOptions sopt;
  sopt.features = false;
  const auto views = generate_sequence(sphere, make_trajectory(12, rng, opt), make_hand_template(), sopt, 7);

  const auto grid = evaluate_grid(
      [&](std::span<const Vec3> pts, std::span<double> values) {
        for (std::size_t i = 0; i < pts.size(); ++i) values[i] = hull_label(pts[i], views);
      },
      64);
  const auto mesh = marching_cubes(grid);
  {
    std::ofstream os(out);
    write_obj(os, mesh);
  }

  constexpr double kMetricScale = 0.1;
  const double tau_mm = 2.0 * grid.spacing() * kMetricScale * 1000.0;
  const auto rec = to_meters(sample_surface(mesh, kDefaultSurfaceSamples, 1), kMetricScale);
  const auto gt = to_meters(sample_shape_surface(sphere, kDefaultSurfaceSamples, rng), kMetricScale);
  const auto f = fscore(rec, gt, tau_mm);
  std::cout << "views: " << views.size() << "\n"
            << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.triangles.size() << " triangles -> " << out
            << "\n"
            << "chamfer: " << chamfer(rec, gt) << " mm\n"
            << "F@" << tau_mm << "mm: " << f.f << " (precision " << f.precision << ", recall " << f.recall << ")\n";
}
