#include "avl/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <unsupported/Eigen/Polynomials>

#include "avl/errors.hpp"

namespace avl {

namespace {

double ramp_fraction(double excess, double ramp) {
  if (ramp <= 0.0) return excess > 0.0 ? 1.0 : 0.0;
  return std::min(1.0, excess / ramp);
}

}  // namespace

std::vector<Correspondence> observe(const Scene& scene, const OccupancyGrid& grid,
                                    const LandmarkMap& map, const Pose& true_pose,
                                    const CameraModel& cam, const NoiseConfig& noise, Rng& rng) {
  std::vector<Correspondence> out;
  for (const MappedLandmark& m : map.landmarks) {
    const TrueLandmark& truth = scene.landmarks.at(static_cast<std::size_t>(m.id));
    const auto px = project(truth.position, true_pose, cam);
    if (!px || incidence_deg(truth, true_pose.position()) > noise.max_incidence_deg ||
        !line_of_sight(grid, true_pose.position(), truth.position)) {
      continue;
    }

    // Fixed number of draws per observed landmark keeps streams aligned
    // across noise levels.
    const double scale = 2.0 - truth.quality;
    const bool outlier = rng.uniform() < noise.outlier_rate_base * scale / 2.0;
    const double nx = rng.normal();
    const double ny = rng.normal();
    const double ux = rng.uniform();
    const double uy = rng.uniform();
    const double keep = rng.uniform();
    double kept = 1.0;
    if (noise.view_drop_rate > 0.0) {
      const double dev = angle_between_deg(true_pose.position() - truth.position, m.stats.mean_view_dir);
      const double excess = std::max(0.0, dev - m.stats.cone_half_angle);
      kept *= 1.0 - noise.view_drop_rate * ramp_fraction(excess, noise.view_drop_ramp_deg);
    }
    if (noise.scale_drop_rate > 0.0) {
      const double d = (true_pose.position() - truth.position).norm();
      const double excess = std::max({0.0, std::log(d / m.stats.dist_max), std::log(m.stats.dist_min / d)});
      kept *= 1.0 - noise.scale_drop_rate * ramp_fraction(excess, noise.scale_drop_ramp);
    }
    if (keep < 1.0 - kept) continue;

    Correspondence c;
    c.landmark_id = m.id;
    c.map_point = m.position;
    c.is_outlier = outlier;
    if (outlier) {
      c.pixel = Vec2(ux * cam.width(), uy * cam.height());
    } else {
      const double sigma = noise.pixel_sigma_base * scale;
      c.pixel = *px + Vec2(nx, ny) * sigma;
      if (!cam.in_image(c.pixel)) continue;
    }
    out.push_back(c);
  }
  return out;
}

std::vector<Pose> solve_p3p(const std::array<Vec3, 3>& j, const std::array<Vec3, 3>& p) {
  std::vector<Pose> out;
  const double a2 = (p[1] - p[2]).squaredNorm();
  const double b2 = (p[0] - p[2]).squaredNorm();
  const double c2 = (p[0] - p[1]).squaredNorm();
  if (a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18) return out;
  const double ca = j[1].dot(j[2]);
  const double cb = j[0].dot(j[2]);
  const double cg = j[0].dot(j[1]);

  // Grunert's quartic in v = s3 / s1.
  const double k1 = (a2 - c2) / b2;
  const double k2 = (a2 + c2) / b2;
  const double cb2 = cb * cb, ca2 = ca * ca, cg2 = cg * cg;
  Eigen::Matrix<double, 5, 1> coeffs;  // ascending powers
  coeffs[4] = (k1 - 1.0) * (k1 - 1.0) - 4.0 * c2 / b2 * ca2;
  coeffs[3] = 4.0 * (k1 * (1.0 - k1) * cb - (1.0 - k2) * ca * cg + 2.0 * c2 / b2 * ca2 * cb);
  coeffs[2] = 2.0 * (k1 * k1 - 1.0 + 2.0 * k1 * k1 * cb2 + 2.0 * (b2 - c2) / b2 * ca2 -
                     4.0 * k2 * ca * cb * cg + 2.0 * (b2 - a2) / b2 * cg2);
  coeffs[1] = 4.0 * (-k1 * (1.0 + k1) * cb + 2.0 * a2 / b2 * cg2 * cb - (1.0 - k2) * ca * cg);
  coeffs[0] = (1.0 + k1) * (1.0 + k1) - 4.0 * a2 / b2 * cg2;

  int degree = 4;
  const double scale = coeffs.cwiseAbs().maxCoeff();
  if (scale == 0.0) return out;
  while (degree > 0 && std::abs(coeffs[degree]) < 1e-14 * scale) --degree;
  if (degree == 0) return out;

  std::vector<double> roots;
  {
    Eigen::VectorXd c = coeffs.head(degree + 1) / scale;
    Eigen::PolynomialSolver<double, Eigen::Dynamic> solver;
    solver.compute(c);
    for (Eigen::Index i = 0; i < solver.roots().size(); ++i) {
      const auto& r = solver.roots()[i];
      if (std::abs(r.imag()) > 1e-6 * std::max(1.0, std::abs(r.real()))) continue;
      double v = r.real();
      // Newton polish on the full quartic.
      for (int it = 0; it < 3; ++it) {
        double f = 0.0, df = 0.0;
        for (int k = degree; k >= 0; --k) {
          df = df * v + f;
          f = f * v + coeffs[k];
        }
        if (df == 0.0) break;
        v -= f / df;
      }
      roots.push_back(v);
    }
  }

  for (double v : roots) {
    if (v <= 0.0) continue;
    const double den = 2.0 * (cg - v * ca);
    if (std::abs(den) < 1e-14) continue;
    const double u = ((k1 - 1.0) * v * v - 2.0 * k1 * cb * v + 1.0 + k1) / den;
    if (u <= 0.0) continue;
    const double d = 1.0 + v * v - 2.0 * v * cb;
    if (d <= 0.0) continue;
    const double s1 = std::sqrt(b2 / d);
    const double s2 = u * s1;
    const double s3 = v * s1;

    Eigen::Matrix3d world, camera;
    world << p[0], p[1], p[2];
    camera << s1 * j[0], s2 * j[1], s3 * j[2];
    const Eigen::Matrix4d t = Eigen::umeyama(world, camera, false);
    const Mat3 r_cw = t.topLeftCorner<3, 3>();
    const Vec3 t_cw = t.topRightCorner<3, 1>();
    out.emplace_back(-r_cw.transpose() * t_cw, Quat(Mat3(r_cw.transpose())));
  }
  return out;
}

namespace {

double reprojection_sq(const Pose& pose, const Correspondence& c, const CameraModel& cam) {
  const Vec3 pc = pose.to_camera(c.map_point);
  if (pc.z() <= 1e-9) return std::numeric_limits<double>::infinity();
  return (project_camera_point(pc, cam) - c.pixel).squaredNorm();
}

double subset_cost(const Pose& pose, std::span<const Correspondence> corrs,
                   std::span<const int> subset, const CameraModel& cam) {
  double cost = 0.0;
  for (int i : subset) cost += reprojection_sq(pose, corrs[static_cast<std::size_t>(i)], cam);
  return cost;
}

std::vector<int> collect_inliers(const Pose& pose, std::span<const Correspondence> corrs,
                                 const CameraModel& cam, double threshold_sq, double* cost) {
  std::vector<int> inliers;
  double total = 0.0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const double e = reprojection_sq(pose, corrs[i], cam);
    if (e < threshold_sq) {
      inliers.push_back(static_cast<int>(i));
      total += e;
    } else {
      total += threshold_sq;
    }
  }
  if (cost) *cost = total;
  return inliers;
}

}  // namespace

Pose refine_pose(const Pose& initial, std::span<const Correspondence> corrs,
                 std::span<const int> subset, const CameraModel& cam, int max_iterations,
                 std::vector<double>* cost_trace) {
  Pose pose = initial;
  double cost = subset_cost(pose, corrs, subset, cam);
  if (cost_trace) cost_trace->push_back(cost);
  double lambda = 1e-4;
  for (int it = 0; it < max_iterations && std::isfinite(cost); ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (int i : subset) {
      const Correspondence& c = corrs[static_cast<std::size_t>(i)];
      const Vec3 pc = pose.to_camera(c.map_point);
      const Vec2 r = project_camera_point(pc, cam) - c.pixel;
      const Eigen::Matrix<double, 2, 6> j = pose_projection_jacobian(pc, cam);
      h.noalias() += j.transpose() * j;
      g.noalias() += j.transpose() * r;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
      Eigen::Matrix<double, 6, 6> damped = h;
      damped.diagonal() += lambda * (h.diagonal().array() + 1e-12).matrix();
      const Eigen::Matrix<double, 6, 1> delta = damped.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Pose candidate = retract(pose, delta);
      const double new_cost = subset_cost(candidate, corrs, subset, cam);
      if (new_cost < cost) {
        const double improvement = cost - new_cost;
        pose = candidate;
        cost = new_cost;
        if (cost_trace) cost_trace->push_back(cost);
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (delta.norm() < 1e-14 || improvement <= 1e-15 * (1.0 + cost)) return pose;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  return pose;
}

std::pair<double, double> pose_error(const Pose& estimated, const Pose& truth) {
  return {(estimated.position() - truth.position()).norm(),
          rotation_geodesic_deg(estimated.orientation(), truth.orientation())};
}

LocalizationResult estimate_pose(std::span<const Correspondence> corrs, const CameraModel& cam,
                                 const RansacConfig& ransac, Rng& rng, const Pose& truth) {
  LocalizationResult result;
  const std::size_t n = corrs.size();
  if (n < 4) return result;

  std::vector<Vec3> bearings(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& px = corrs[i].pixel;
    bearings[i] = Vec3((px.x() - cam.cx()) / cam.fx(), (px.y() - cam.cy()) / cam.fy(), 1.0)
                      .normalized();
  }

  const double thr_sq = ransac.inlier_threshold_px * ransac.inlier_threshold_px;
  Pose best_pose;
  std::size_t best_count = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  bool have_hypothesis = false;

  for (int it = 0; it < ransac.iterations; ++it) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      std::size_t cand;
      do {
        cand = static_cast<std::size_t>(rng.below(n));
      } while (std::find(idx.begin(), idx.begin() + k, cand) != idx.begin() + k);
      idx[static_cast<std::size_t>(k)] = cand;
    }
    const std::array<Vec3, 3> bj{bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]};
    const std::array<Vec3, 3> wp{corrs[idx[0]].map_point, corrs[idx[1]].map_point,
                                 corrs[idx[2]].map_point};
    const std::vector<Pose> sols = solve_p3p(bj, wp);
    const Pose* pick = nullptr;
    double pick_err = std::numeric_limits<double>::infinity();
    for (const Pose& s : sols) {
      const double e = reprojection_sq(s, corrs[idx[3]], cam);
      if (e < pick_err) {
        pick_err = e;
        pick = &s;
      }
    }
    if (!pick) continue;
    double cost = 0.0;
    const std::vector<int> inl = collect_inliers(*pick, corrs, cam, thr_sq, &cost);
    if (inl.size() > best_count || (inl.size() == best_count && cost < best_cost)) {
      best_count = inl.size();
      best_cost = cost;
      best_pose = *pick;
      have_hypothesis = true;
    }
  }
  if (!have_hypothesis || best_count < 4) return result;

  Pose pose = best_pose;
  std::vector<int> inliers = collect_inliers(pose, corrs, cam, thr_sq, nullptr);
  for (int round = 0; round < 2; ++round) {
    pose = refine_pose(pose, corrs, inliers, cam, ransac.refine_iterations);
    std::vector<int> updated = collect_inliers(pose, corrs, cam, thr_sq, nullptr);
    if (updated == inliers) break;
    inliers = std::move(updated);
  }

  result.inlier_count = static_cast<int>(inliers.size());
  result.inliers = std::move(inliers);
  if (result.inlier_count < ransac.min_inliers) return result;
  result.success = true;
  result.estimated_pose = pose;
  std::tie(result.pos_error_m, result.rot_error_deg) = pose_error(pose, truth);
  return result;
}

LocalizationResult localize(const Scene& scene, const OccupancyGrid& grid, const LandmarkMap& map,
                            const Pose& true_pose, const CameraModel& cam,
                            const OracleConfig& config, Rng& rng) {
  const std::vector<Correspondence> corrs =
      observe(scene, grid, map, true_pose, cam, config.noise, rng);
  return estimate_pose(corrs, cam, config.ransac, rng, true_pose);
}

}  // namespace avl
