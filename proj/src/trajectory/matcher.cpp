#include "opmodenet/errors.hpp"
#include "opmodenet/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace opmodenet::trajectory {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ViterbiPiece backtrack(std::size_t start, std::size_t end, const std::vector<double>& score,
                       const std::vector<std::vector<std::size_t>>& back) {
    ViterbiPiece piece;
    piece.start = start;
    std::size_t best = 0;
    for (std::size_t j = 1; j < score.size(); ++j)
        if (score[j] > score[best]) best = j;
    piece.score = score[best];
    piece.states.assign(end - start, 0);
    std::size_t s = best;
    for (std::size_t t = end; t-- > start;) {
        piece.states[t - start] = s;
        if (t > start) s = back[t][s];
    }
    return piece;
}

/// Lazily built shortest-path trees keyed by source link.
class PathCache {
public:
    PathCache(const RoadNetwork& net, double bound) : net_(net), bound_(bound) {}

    const RoadNetwork::ShortestPaths& from(std::size_t link) {
        auto& slot = trees_[link];
        if (!slot) slot = std::make_unique<RoadNetwork::ShortestPaths>(net_, link, bound_);
        return *slot;
    }

private:
    const RoadNetwork& net_;
    double bound_;
    std::unordered_map<std::size_t, std::unique_ptr<RoadNetwork::ShortestPaths>> trees_;
};

bool same_link_forward(const Candidate& a, const Candidate& b, double tolerance) {
    return a.link == b.link && b.offset_m >= a.offset_m - tolerance;
}

bool twins(const RoadNetwork& net, std::size_t a, std::size_t b) {
    const auto& la = net.links()[a];
    return la.reverse && *la.reverse == net.links()[b].id;
}

struct RouteStep {
    double distance;
    bool u_turn;
    double backtrack_m = 0.0;
};

RouteStep route_step(const Candidate& a, const Candidate& b, const RoadNetwork& net, PathCache& cache,
                     double tolerance) {
    // Jitter along one link counts as the distance between the projections;
    // the backward part is charged again so the twin of a busy link loses.
    if (same_link_forward(a, b, tolerance))
        return {std::abs(b.offset_m - a.offset_m), false, std::max(0.0, a.offset_m - b.offset_m)};
    const auto& tree = cache.from(a.link);
    const double between = tree.distance_to_start_of(b.link);
    if (!std::isfinite(between)) return {between, false};
    const double rest = std::max(0.0, net.links()[a.link].length_m - a.offset_m);
    auto path = tree.path_to_start_of(b.link);
    path.insert(path.begin(), a.link);
    path.push_back(b.link);
    bool u_turn = false;
    for (std::size_t k = 1; k < path.size(); ++k) u_turn = u_turn || twins(net, path[k - 1], path[k]);
    return {rest + between + b.offset_m, u_turn, 0.0};
}

}  // namespace

std::vector<ViterbiPiece> viterbi(const Lattice& lattice) {
    std::vector<ViterbiPiece> pieces;
    const std::size_t n = lattice.emission.size();
    if (n == 0) return pieces;
    std::vector<std::vector<std::size_t>> back(n);
    std::vector<double> score = lattice.emission[0];
    std::size_t start = 0;
    for (std::size_t t = 1; t < n; ++t) {
        const auto& em = lattice.emission[t];
        std::vector<double> next(em.size(), kNegInf);
        back[t].assign(em.size(), 0);
        bool reachable = false;
        for (std::size_t j = 0; j < em.size(); ++j) {
            for (std::size_t i = 0; i < score.size(); ++i) {
                const double s = score[i] + lattice.transition[t][i][j];
                if (s > next[j]) {
                    next[j] = s;
                    back[t][j] = i;
                }
            }
            next[j] += em[j];
            reachable = reachable || std::isfinite(next[j]);
        }
        if (!reachable) {
            pieces.push_back(backtrack(start, t, score, back));
            start = t;
            next = em;
        }
        score = std::move(next);
    }
    pieces.push_back(backtrack(start, n, score, back));
    return pieces;
}

MatchResult map_match(const TraceSegment& segment, const RoadNetwork& network, const MatchParams& params) {
    const auto& pts = segment.points;
    MatchResult result;
    result.point_link.assign(pts.size(), std::nullopt);

    std::vector<std::vector<Candidate>> cands(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        cands[i] = network.candidates(pts[i].pos, params.radius_m);
        if (cands[i].empty()) ++result.unmatched_points;
    }
    if (pts.empty() ||
        static_cast<double>(result.unmatched_points) > params.max_unmatched_fraction * static_cast<double>(pts.size())) {
        result.rejected = true;
        result.reason = "off-network: " + std::to_string(result.unmatched_points) + " of " +
                        std::to_string(pts.size()) + " points have no candidate link";
        return result;
    }

    double max_gc = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) max_gc = std::max(max_gc, geo::haversine_m(pts[i - 1].pos, pts[i].pos));
    PathCache cache(network, max_gc + params.max_detour_m);

    std::size_t i = 0;
    while (i < pts.size()) {
        if (cands[i].empty()) {
            ++i;
            continue;
        }
        std::size_t end = i;
        while (end < pts.size() && !cands[end].empty()) ++end;

        Lattice lattice;
        for (std::size_t t = i; t < end; ++t) {
            std::vector<double> em;
            for (const auto& c : cands[t]) em.push_back(-c.distance_m * c.distance_m / (2.0 * params.sigma_m * params.sigma_m));
            lattice.emission.push_back(std::move(em));
            std::vector<std::vector<double>> tr;
            if (t > i) {
                const double gc = geo::haversine_m(pts[t - 1].pos, pts[t].pos);
                tr.assign(cands[t - 1].size(), std::vector<double>(cands[t].size(), kNegInf));
                for (std::size_t a = 0; a < cands[t - 1].size(); ++a)
                    for (std::size_t b = 0; b < cands[t].size(); ++b) {
                        const auto r =
                            route_step(cands[t - 1][a], cands[t][b], network, cache, params.reverse_tolerance_m);
                        if (std::isfinite(r.distance))
                            tr[a][b] = -(std::abs(r.distance - gc) + r.backtrack_m) / params.lambda_m -
                                       (r.u_turn ? params.u_turn_penalty : 0.0);
                    }
            }
            lattice.transition.push_back(std::move(tr));
        }

        for (const auto& vp : viterbi(lattice)) {
            MatchedPiece piece;
            for (std::size_t k = 0; k < vp.states.size(); ++k) {
                const std::size_t p = i + vp.start + k;
                const Candidate& c = cands[p][vp.states[k]];
                result.point_link[p] = c.link;
                piece.point_indices.push_back(p);
                piece.point_links.push_back(c.link);
                piece.point_offsets.push_back(c.offset_m);
            }
            if (piece.point_indices.size() < 2) continue;

            piece.route.push_back(piece.point_links[0]);
            piece.route_start.push_back(0.0);
            piece.positions.push_back(piece.point_offsets[0]);
            for (std::size_t k = 1; k < piece.point_indices.size(); ++k) {
                const Candidate a{piece.point_links[k - 1], 0.0, piece.point_offsets[k - 1]};
                const Candidate b{piece.point_links[k], 0.0, piece.point_offsets[k]};
                if (!same_link_forward(a, b, params.reverse_tolerance_m)) {
                    double start = piece.route_start.back() + network.links()[a.link].length_m;
                    for (std::size_t li : cache.from(a.link).path_to_start_of(b.link)) {
                        piece.route.push_back(li);
                        piece.route_start.push_back(start);
                        start += network.links()[li].length_m;
                    }
                    piece.route.push_back(b.link);
                    piece.route_start.push_back(start);
                }
                piece.positions.push_back(piece.route_start.back() + b.offset_m);
            }
            result.pieces.push_back(std::move(piece));
        }
        i = end;
    }
    return result;
}

}  // namespace opmodenet::trajectory
