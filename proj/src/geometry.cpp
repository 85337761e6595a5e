#include "cop3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cop3d::geometry {

double wrap_angle(double theta) {
    if (theta >= -kPi && theta < kPi) return theta;
    theta = std::fmod(theta + kPi, 2.0 * kPi);
    if (theta < 0) theta += 2.0 * kPi;
    return theta - kPi;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += m[i][k] * o.m[k][j];
            r.m[i][j] = s;
        }
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
    return r;
}

void CameraIntrinsics::validate() const {
    if (!(f > 0.0)) throw InvalidConfig("camera focal length must be > 0");
    if (!std::isfinite(cx) || !std::isfinite(cy))
        throw InvalidConfig("camera principal point must be finite");
}

void Box2D::validate() const {
    if (!(u_min <= u_max) || !(v_min <= v_max))
        throw InvalidConfig("Box2D requires u_min <= u_max and v_min <= v_max");
}

void Box3D::validate() const {
    if (!(w > 0.0 && h > 0.0 && l > 0.0))
        throw InvalidConfig("Box3D dimensions must be > 0");
    if (!(center.z > 0.0))
        throw InvalidConfig("Box3D must lie in front of the camera (z_c > 0)");
    if (!(yaw >= -kPi && yaw < kPi))
        throw InvalidConfig("Box3D yaw must lie in [-pi, pi)");
}

Mat3 rotation_y(double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Mat3 r;
    r.m = {{{c, 0.0, s}, {0.0, 1.0, 0.0}, {-s, 0.0, c}}};
    return r;
}

std::array<CornerOffset, 8> corner_offsets(const Box3D& box) {
    std::array<CornerOffset, 8> out;
    int i = 0;
    for (int sx : {-1, 1})
        for (int sy : {-1, 1})
            for (int sz : {-1, 1}) out[i++] = CornerOffset::of(box, sx, sy, sz);
    return out;
}

std::array<Vec3, 8> box_corners(const Box3D& box) {
    const Mat3 rot = rotation_y(box.yaw);
    std::array<Vec3, 8> out;
    const auto offsets = corner_offsets(box);
    for (int i = 0; i < 8; ++i) {
        const Vec3 d{offsets[i].dx, offsets[i].dy, offsets[i].dz};
        out[i] = box.center + rot * d;
    }
    return out;
}

PixelPoint project_point(const CameraIntrinsics& cam, const Vec3& p) {
    if (!(p.z > 0.0))
        throw NonPositiveDepth("cannot project point with Z <= 0 (Z=" +
                               std::to_string(p.z) + ")");
    return {cam.f * p.x / p.z + cam.cx, cam.f * p.y / p.z + cam.cy};
}

AlphaBeta alpha_beta(const CornerOffset& corner, double theta) {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    // [R(theta)*d]_x and [R(theta)*d]_z; the y component is untouched by R_y.
    return {c * corner.dx + s * corner.dz, -s * corner.dx + c * corner.dz};
}

AlphaBeta alpha_beta(const Box3D& box, const CornerOffset& corner) {
    return alpha_beta(corner, box.yaw);
}

AlphaBeta alpha_beta_dtheta(const CornerOffset& corner, double theta) {
    const AlphaBeta ab = alpha_beta(corner, theta);
    return {ab.beta, -ab.alpha};
}

double projection_F(const CameraIntrinsics& cam, double x_c, double z_c,
                    const CornerOffset& corner, double theta) {
    const AlphaBeta ab = alpha_beta(corner, theta);
    const double denom = z_c + ab.beta;
    if (!(denom > 0.0))
        throw DegenerateDepth("z_c + beta must be > 0 (got " +
                              std::to_string(denom) + ")");
    return cam.f * (x_c + ab.alpha) / denom + cam.cx;
}

PartialsF partials_F(const CameraIntrinsics& cam, double x_c, double z_c,
                     const CornerOffset& corner, double theta) {
    const AlphaBeta ab = alpha_beta(corner, theta);
    const AlphaBeta abd = alpha_beta_dtheta(corner, theta);
    const double denom = z_c + ab.beta;
    if (!(denom > 0.0))
        throw DegenerateDepth("z_c + beta must be > 0 (got " +
                              std::to_string(denom) + ")");
    const double denom2 = denom * denom;
    PartialsF p;
    p.dF_dtheta =
        cam.f * (abd.alpha * denom - (x_c + ab.alpha) * abd.beta) / denom2;
    p.dF_dz = -cam.f * (x_c + ab.alpha) / denom2;
    return p;
}

double coupling_dz_dtheta(const CameraIntrinsics& cam, double x_c, double z_c,
                          const CornerOffset& corner, double theta, double tol) {
    const PartialsF p = partials_F(cam, x_c, z_c, corner, theta);
    if (std::fabs(p.dF_dz) < tol)
        throw UndefinedCoupling("|dF/dz| below tolerance; coupling undefined");
    return -p.dF_dtheta / p.dF_dz;
}

double solve_depth_for_u(const CameraIntrinsics& cam, const CornerOffset& corner,
                         double theta, double x_c, double u0, double z_lo,
                         double z_hi) {
    constexpr double kPixelTol = 1e-9;
    constexpr int kMaxIter = 200;

    auto residual = [&](double z) {
        return projection_F(cam, x_c, z, corner, theta) - u0;
    };

    double f_lo = residual(z_lo);
    double f_hi = residual(z_hi);
    if (f_lo == 0.0) return z_lo;
    if (f_hi == 0.0) return z_hi;
    if ((f_lo > 0.0) == (f_hi > 0.0))
        throw NoRootInBracket("F(z)-u0 does not change sign over the bracket");

    double lo = z_lo, hi = z_hi;
    for (int i = 0; i < kMaxIter; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double f_mid = residual(mid);
        if (std::fabs(f_mid) <= kPixelTol) return mid;
        if ((f_mid > 0.0) == (f_lo > 0.0)) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

Box2D project_box2d(const CameraIntrinsics& cam, const Box3D& box) {
    const auto corners = box_corners(box);
    Box2D out{std::numeric_limits<double>::infinity(),
              std::numeric_limits<double>::infinity(),
              -std::numeric_limits<double>::infinity(),
              -std::numeric_limits<double>::infinity()};
    for (const Vec3& c : corners) {
        const PixelPoint p = project_point(cam, c);
        out.u_min = std::min(out.u_min, p.u);
        out.v_min = std::min(out.v_min, p.v);
        out.u_max = std::max(out.u_max, p.u);
        out.v_max = std::max(out.v_max, p.v);
    }
    return out;
}

namespace {

double intersection_area_2d(const Box2D& a, const Box2D& b) {
    const double iw =
        std::min(a.u_max, b.u_max) - std::max(a.u_min, b.u_min);
    const double ih =
        std::min(a.v_max, b.v_max) - std::max(a.v_min, b.v_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

} // namespace

double iou2d(const Box2D& a, const Box2D& b) {
    const double inter = intersection_area_2d(a, b);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

double giou2d(const Box2D& a, const Box2D& b) {
    const double inter = intersection_area_2d(a, b);
    const double uni = a.area() + b.area() - inter;
    const double hull_w = std::max(a.u_max, b.u_max) - std::min(a.u_min, b.u_min);
    const double hull_h = std::max(a.v_max, b.v_max) - std::min(a.v_min, b.v_min);
    const double hull = hull_w * hull_h;
    const double iou = uni > 0.0 ? inter / uni : 0.0;
    if (hull <= 0.0) return iou;
    return iou - (hull - uni) / hull;
}

std::array<std::array<double, 2>, 4> bev_corners(const Box3D& box) {
    const double c = std::cos(box.yaw);
    const double s = std::sin(box.yaw);
    const double hl = 0.5 * box.l;
    const double hw = 0.5 * box.w;
    // Local footprint corners (dx, dz), counter-clockwise in the x-z plane.
    const double local[4][2] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
    std::array<std::array<double, 2>, 4> out;
    for (int i = 0; i < 4; ++i) {
        const double dx = local[i][0];
        const double dz = local[i][1];
        out[i] = {box.center.x + c * dx + s * dz,
                  box.center.z - s * dx + c * dz};
    }
    return out;
}

namespace {

double shoelace_area(const std::vector<std::array<double, 2>>& poly) {
    const size_t n = poly.size();
    if (n < 3) return 0.0;
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const auto& p = poly[i];
        const auto& q = poly[(i + 1) % n];
        s += p[0] * q[1] - q[0] * p[1];
    }
    return 0.5 * std::fabs(s);
}

} // namespace

double convex_intersection_area(const std::vector<std::array<double, 2>>& subject,
                                const std::vector<std::array<double, 2>>& clip) {
    if (subject.size() < 3 || clip.size() < 3) return 0.0;

    // Orient the clip polygon counter-clockwise so "inside" is a left turn.
    std::vector<std::array<double, 2>> clip_ccw(clip.begin(), clip.end());
    double signed_area = 0.0;
    for (size_t i = 0; i < clip_ccw.size(); ++i) {
        const auto& p = clip_ccw[i];
        const auto& q = clip_ccw[(i + 1) % clip_ccw.size()];
        signed_area += p[0] * q[1] - q[0] * p[1];
    }
    if (signed_area < 0.0) std::reverse(clip_ccw.begin(), clip_ccw.end());

    std::vector<std::array<double, 2>> poly(subject.begin(), subject.end());
    for (size_t e = 0; e < clip_ccw.size() && !poly.empty(); ++e) {
        const auto& a = clip_ccw[e];
        const auto& b = clip_ccw[(e + 1) % clip_ccw.size()];
        auto side = [&](const std::array<double, 2>& p) {
            return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        };
        std::vector<std::array<double, 2>> next;
        next.reserve(poly.size() + 4);
        for (size_t i = 0; i < poly.size(); ++i) {
            const auto& cur = poly[i];
            const auto& prv = poly[(i + poly.size() - 1) % poly.size()];
            const double sc = side(cur);
            const double sp = side(prv);
            if (sc >= 0.0) {
                if (sp < 0.0) {
                    const double t = sp / (sp - sc);
                    next.push_back({prv[0] + t * (cur[0] - prv[0]),
                                    prv[1] + t * (cur[1] - prv[1])});
                }
                next.push_back(cur);
            } else if (sp >= 0.0) {
                const double t = sp / (sp - sc);
                next.push_back({prv[0] + t * (cur[0] - prv[0]),
                                prv[1] + t * (cur[1] - prv[1])});
            }
        }
        poly.swap(next);
    }
    return shoelace_area(poly);
}

double iou3d(const Box3D& a, const Box3D& b) {
    const auto ca = bev_corners(a);
    const auto cb = bev_corners(b);
    const std::vector<std::array<double, 2>> pa(ca.begin(), ca.end());
    const std::vector<std::array<double, 2>> pb(cb.begin(), cb.end());
    const double bev_inter = convex_intersection_area(pa, pb);

    // Vertical extent is bottom-anchored: the box occupies [y_c - h, y_c].
    const double y_overlap =
        std::min(a.center.y, b.center.y) -
        std::max(a.center.y - a.h, b.center.y - b.h);
    if (y_overlap <= 0.0 || bev_inter <= 0.0) return 0.0;

    const double inter = bev_inter * y_overlap;
    const double vol_a = a.w * a.l * a.h;
    const double vol_b = b.w * b.l * b.h;
    const double uni = vol_a + vol_b - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

} // namespace cop3d::geometry
