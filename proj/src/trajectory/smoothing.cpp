#include "opmodenet/errors.hpp"
#include "opmodenet/trajectory.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace opmodenet::trajectory {

namespace {

struct Fit {
    double pos, speed, accel;
};

/// Weighted least squares of y on [1, u, u^2] with u = (t - center) / scale,
/// dropping the quadratic term when fewer than 3 samples carry weight.
Fit local_fit(std::span<const double> t, std::span<const double> y, std::span<const double> w, double center,
              double scale) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (w[i] > 0.0) rows.push_back(i);
    const int degree = rows.size() >= 3 ? 2 : 1;
    Eigen::MatrixXd a(rows.size(), degree + 1);
    Eigen::VectorXd b(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::size_t i = rows[r];
        const double sw = std::sqrt(w[i]);
        const double u = (t[i] - center) / scale;
        a(r, 0) = sw;
        a(r, 1) = sw * u;
        if (degree == 2) a(r, 2) = sw * u * u;
        b(r) = sw * y[i];
    }
    const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
    return {c(0), c(1) / scale, degree == 2 ? 2.0 * c(2) / (scale * scale) : 0.0};
}

}  // namespace

SmoothedSeries smooth(std::span<const double> times, std::span<const double> positions, const SmoothParams& params) {
    if (times.size() != positions.size()) throw ShapeError("smooth: times and positions differ in length");
    if (times.size() < 2) throw ValidationError("smooth: need at least 2 samples");
    for (std::size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1])) throw ValidationError("smooth: timestamps must increase");

    SmoothedSeries out;
    const double t0 = times.front(), tn = times.back();
    const std::size_t k = std::max<std::size_t>(params.bandwidth_points, 1);
    out.global_fallback = times.size() < k || tn - t0 < params.bandwidth_s;

    std::vector<double> w(times.size());
    std::vector<double> dist(times.size());
    const double center = 0.5 * (t0 + tn);
    const double span = std::max(tn - t0, 1.0);
    for (double g = std::ceil(t0); g <= std::floor(tn); g += 1.0) {
        Fit f;
        if (out.global_fallback) {
            std::fill(w.begin(), w.end(), 1.0);
            const Fit c = local_fit(times, positions, w, center, span);
            const double u = g - center;
            f = {c.pos + c.speed * u + 0.5 * c.accel * u * u, c.speed + c.accel * u, c.accel};
        } else {
            for (std::size_t i = 0; i < times.size(); ++i) dist[i] = std::abs(times[i] - g);
            std::vector<double> sorted = dist;
            std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
            // Slightly past the k-th nearest sample so that it keeps a weight.
            const double h = std::max(params.bandwidth_s, sorted[k - 1] * (1.0 + 1e-6));
            for (std::size_t i = 0; i < times.size(); ++i) {
                const double r = dist[i] / h;
                w[i] = r < 1.0 ? std::pow(1.0 - r * r * r, 3) : 0.0;
            }
            f = local_fit(times, positions, w, g, h);
        }
        out.t.push_back(g);
        out.position_m.push_back(f.pos);
        out.speed_mps.push_back(std::max(0.0, f.speed));
        out.accel_mps2.push_back(f.accel);
    }
    for (std::size_t i = 1; i < out.position_m.size(); ++i)
        out.position_m[i] = std::max(out.position_m[i], out.position_m[i - 1]);
    return out;
}

}  // namespace opmodenet::trajectory
