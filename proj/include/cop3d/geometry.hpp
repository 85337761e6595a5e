#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "cop3d/errors.hpp"

namespace cop3d::geometry {

constexpr double kPi = 3.14159265358979323846;

/// Wraps an angle to [-pi, pi).
double wrap_angle(double theta);

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

struct Mat3 {
    // row-major
    std::array<std::array<double, 3>, 3> m{};

    Vec3 operator*(const Vec3& v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }
    Mat3 operator*(const Mat3& o) const;
    Mat3 transposed() const;
};

/// Pinhole camera: focal length and principal point, both in pixels.
struct CameraIntrinsics {
    double f = 700.0;
    double cx = 621.0;
    double cy = 187.5;

    void validate() const;
};

/// 2D pixel coordinates.
struct PixelPoint {
    double u = 0.0, v = 0.0;
};

/// Axis-aligned image-plane box, pixels (or normalized units; callers pick one).
struct Box2D {
    double u_min = 0.0, v_min = 0.0, u_max = 0.0, v_max = 0.0;

    double width() const { return u_max - u_min; }
    double height() const { return v_max - v_min; }
    double area() const { return width() * height(); }
    double center_u() const { return 0.5 * (u_min + u_max); }
    double center_v() const { return 0.5 * (v_min + v_max); }

    void validate() const;
};

/// 3D box in the camera frame. Axis convention is KITTI's camera frame:
/// x right (along object length l at yaw 0), y down (height h), z forward
/// (along object width w at yaw 0), yaw about the vertical y axis.
struct Box3D {
    Vec3 center;           // (x_c, y_c, z_c) meters
    double w = 1.0;        // extent along local z
    double h = 1.0;        // vertical extent
    double l = 1.0;        // extent along local x
    double yaw = 0.0;      // radians, in [-pi, pi)

    void validate() const;
};

/// Local corner offset (dx, dy, dz) with dx in {-l/2,+l/2}, dy in {-h/2,+h/2},
/// dz in {-w/2,+w/2}.
struct CornerOffset {
    double dx = 0.0, dy = 0.0, dz = 0.0;

    /// Corner from sign choices (each +1 or -1) and the box dimensions.
    static CornerOffset of(const Box3D& box, int sx, int sy, int sz) {
        return {0.5 * sx * box.l, 0.5 * sy * box.h, 0.5 * sz * box.w};
    }
};

/// Rotation about the camera's vertical (y) axis:
///   [[cos t, 0, sin t], [0, 1, 0], [-sin t, 0, cos t]]
Mat3 rotation_y(double theta);

/// The 8 corners c + R(yaw) * offset. Order: sign triples (sx, sy, sz) iterate
/// sz fastest, then sy, then sx, each over (-1, +1):
/// index = ((sx+1)/2)*4 + ((sy+1)/2)*2 + ((sz+1)/2.
std::array<Vec3, 8> box_corners(const Box3D& box);

/// The 8 local corner offsets in the same order as box_corners.
std::array<CornerOffset, 8> corner_offsets(const Box3D& box);

/// u = f*X/Z + cx, v = f*Y/Z + cy. Throws NonPositiveDepth if Z <= 0.
PixelPoint project_point(const CameraIntrinsics& cam, const Vec3& p);

/// alpha = [R(theta)*offset]_x (horizontal displacement) and
/// beta  = [R(theta)*offset]_z (effective depth contribution).
struct AlphaBeta {
    double alpha = 0.0, beta = 0.0;
};

AlphaBeta alpha_beta(const CornerOffset& corner, double theta);
AlphaBeta alpha_beta(const Box3D& box, const CornerOffset& corner);

/// Analytic theta-derivatives: alpha' = beta, beta' = -alpha.
AlphaBeta alpha_beta_dtheta(const CornerOffset& corner, double theta);

/// u-coordinate of the projected corner:
///   F = f*(x_c + alpha) / (z_c + beta) + cx.
/// Throws DegenerateDepth if z_c + beta <= 0.
double projection_F(const CameraIntrinsics& cam, double x_c, double z_c,
                    const CornerOffset& corner, double theta);

struct PartialsF {
    double dF_dtheta = 0.0;
    double dF_dz = 0.0;
};

/// Analytic partials of F with respect to theta and z_c.
PartialsF partials_F(const CameraIntrinsics& cam, double x_c, double z_c,
                     const CornerOffset& corner, double theta);

/// Implicit coupling dz_c/dtheta = -(dF/dtheta)/(dF/dz_c): how much depth has
/// to change per radian of yaw to keep the projected u fixed. Throws
/// UndefinedCoupling when |dF/dz| < tol.
double coupling_dz_dtheta(const CameraIntrinsics& cam, double x_c, double z_c,
                          const CornerOffset& corner, double theta,
                          double tol = 1e-12);

/// Bisection solve of F(z) = u0 for z within [z_lo, z_hi], to |F-u0| <= 1e-9 px.
/// Throws NoRootInBracket if F(z_lo)-u0 and F(z_hi)-u0 do not change sign.
double solve_depth_for_u(const CameraIntrinsics& cam, const CornerOffset& corner,
                         double theta, double x_c, double u0, double z_lo,
                         double z_hi);

/// Axis-aligned hull of the 8 projected corners. Throws NonPositiveDepth if
/// any corner lies at Z <= 0.
Box2D project_box2d(const CameraIntrinsics& cam, const Box3D& box);

/// Standard intersection-over-union; zero-area boxes yield 0.
double iou2d(const Box2D& a, const Box2D& b);

/// GIoU = IoU - (hull - union)/hull, in [-1, 1].
double giou2d(const Box2D& a, const Box2D& b);

/// BEV footprint corners of the box in the x-z ground plane, counter-clockwise.
std::array<std::array<double, 2>, 4> bev_corners(const Box3D& box);

/// Area of the intersection of two convex polygons (Sutherland-Hodgman clip
/// of `subject` against `clip`, then shoelace).
double convex_intersection_area(const std::vector<std::array<double, 2>>& subject,
                                const std::vector<std::array<double, 2>>& clip);

/// Rotated-box 3D IoU: BEV polygon intersection times vertical overlap over
/// union volume. Vertical extent of a box is [y_c - h, y_c] (bottom-anchored).
double iou3d(const Box3D& a, const Box3D& b);

} // namespace cop3d::geometry
