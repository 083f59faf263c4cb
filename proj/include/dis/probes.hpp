#pragma once

#include <cmath>
#include <vector>

#include "dis/image.hpp"
#include "dis/vec.hpp"

namespace dis {

// Lat-long sphere of learnable RGB radiance cells with exact solid-angle
// quadrature weights. Band i spans polar angles [i, i+1] * pi/n_lat measured
// from +y; column j spans azimuth [j, j+1] * 2pi/n_lon. Sum of weights is
// 4*pi analytically (telescoping cosine bands).
struct LightProbeSphere {
  int n_lat = 0, n_lon = 0;
  std::vector<Vec3> radiance;      // linear RGB, >= 0
  std::vector<Vec3> directions;    // unit, at cell centers
  std::vector<double> solid_angles;

  int count() const { return n_lat * n_lon; }
  int cell(int lat, int lon) const { return lat * n_lon + lon; }
};

inline LightProbeSphere probe_sphere(int n_lat, int n_lon, const Vec3& init_radiance = {0, 0, 0}) {
  if (n_lat < 1 || n_lon < 1) throw std::invalid_argument("probe_sphere: counts must be >= 1");
  LightProbeSphere s;
  s.n_lat = n_lat;
  s.n_lon = n_lon;
  int n = n_lat * n_lon;
  s.radiance.assign(n, init_radiance);
  s.directions.resize(n);
  s.solid_angles.resize(n);
  double dphi = 2.0 * kPi / n_lon;
  for (int i = 0; i < n_lat; ++i) {
    double theta_top = kPi * i / n_lat;
    double theta_bot = kPi * (i + 1) / n_lat;
    double theta_c = 0.5 * (theta_top + theta_bot);
    double band = std::cos(theta_top) - std::cos(theta_bot);
    for (int j = 0; j < n_lon; ++j) {
      double phi = (j + 0.5) * dphi;
      int c = s.cell(i, j);
      s.directions[c] = {std::sin(theta_c) * std::cos(phi), std::cos(theta_c),
                         std::sin(theta_c) * std::sin(phi)};
      s.solid_angles[c] = dphi * band;
    }
  }
  return s;
}

// Cell index covering a direction (inverse of the lat-long layout).
inline int probe_cell_for_direction(const LightProbeSphere& s, const Vec3& dir_unit) {
  double theta = std::acos(clamp(dir_unit.y, -1.0, 1.0));
  double phi = std::atan2(dir_unit.z, dir_unit.x);
  if (phi < 0) phi += 2.0 * kPi;
  int i = std::min(s.n_lat - 1, static_cast<int>(theta / kPi * s.n_lat));
  int j = std::min(s.n_lon - 1, static_cast<int>(phi / (2.0 * kPi) * s.n_lon));
  return s.cell(i, j);
}

// Probe grid <-> image (width = n_lon, height = n_lat, row = latitude band).
inline Image probes_to_image(const LightProbeSphere& s) {
  Image img(s.n_lon, s.n_lat, 3);
  for (int i = 0; i < s.n_lat; ++i)
    for (int j = 0; j < s.n_lon; ++j) img.set_rgb(j, i, s.radiance[s.cell(i, j)]);
  return img;
}

inline void probes_from_image(LightProbeSphere& s, const Image& img) {
  if (img.width != s.n_lon || img.height != s.n_lat || img.channels != 3)
    throw std::invalid_argument("probes_from_image: image does not match probe grid");
  for (int i = 0; i < s.n_lat; ++i)
    for (int j = 0; j < s.n_lon; ++j) s.radiance[s.cell(i, j)] = img.rgb(j, i);
}

// Resample an equirectangular environment map (any resolution) onto the probe
// grid by solid-angle-weighted averaging of the covered texels. At the native
// resolution (width = n_lon, height = n_lat) this is the identity.
inline void probes_from_envmap(LightProbeSphere& s, const Image& envmap) {
  if (envmap.channels != 3 || envmap.width < 1 || envmap.height < 1)
    throw IoError("probes_from_envmap: malformed environment map");
  int n = s.count();
  std::vector<Vec3> sum(n, Vec3{0, 0, 0});
  std::vector<double> weight(n, 0.0);
  for (int y = 0; y < envmap.height; ++y) {
    double theta_top = kPi * y / envmap.height;
    double theta_bot = kPi * (y + 1) / envmap.height;
    double band = std::cos(theta_top) - std::cos(theta_bot);
    double texel_omega = band * 2.0 * kPi / envmap.width;
    double theta_c = 0.5 * (theta_top + theta_bot);
    int lat = std::min(s.n_lat - 1, static_cast<int>(theta_c / kPi * s.n_lat));
    for (int x = 0; x < envmap.width; ++x) {
      double phi_c = (x + 0.5) * 2.0 * kPi / envmap.width;
      int lon = std::min(s.n_lon - 1, static_cast<int>(phi_c / (2.0 * kPi) * s.n_lon));
      int c = s.cell(lat, lon);
      sum[c] += texel_omega * envmap.rgb(x, y);
      weight[c] += texel_omega;
    }
  }
  for (int c = 0; c < n; ++c)
    if (weight[c] > 0) s.radiance[c] = sum[c] / weight[c];
}

}  // namespace dis
