#include "opmodenet/errors.hpp"
#include "opmodenet/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

namespace opmodenet::trajectory {

namespace {

long long cell_key(long ix, long iy) {
    return (static_cast<long long>(ix) << 32) ^ static_cast<long long>(static_cast<std::uint32_t>(iy));
}

geo::LatLon centroid(const std::vector<roadnet::RoadLink>& links) {
    double lat = 0.0, lon = 0.0;
    std::size_t n = 0;
    for (const auto& l : links)
        for (const auto& p : l.geometry) {
            lat += p.lat;
            lon += p.lon;
            ++n;
        }
    if (n == 0) return {};
    return {lat / n, lon / n};
}

}  // namespace

RoadNetwork::RoadNetwork(std::vector<roadnet::RoadLink> links, double cell_m)
    : links_(std::move(links)), proj_(centroid(links_)), cell_m_(cell_m) {
    std::map<roadnet::NodeId, std::size_t> node_index;
    auto dense = [&](roadnet::NodeId id) {
        auto [it, inserted] = node_index.emplace(id, node_index.size());
        if (inserted) out_links_.emplace_back();
        return it->second;
    };
    xy_.resize(links_.size());
    cum_.resize(links_.size());
    for (std::size_t i = 0; i < links_.size(); ++i) {
        const auto& l = links_[i];
        if (l.geometry.size() < 2) throw ValidationError("link geometry needs 2 vertices", {std::to_string(l.id.value)});
        if (!by_id_.emplace(l.id, i).second) throw ValidationError("duplicate link id", {std::to_string(l.id.value)});
        from_node_.push_back(dense(l.from));
        to_node_.push_back(dense(l.to));
        out_links_[from_node_.back()].push_back(i);
        cum_[i].push_back(0.0);
        for (std::size_t k = 0; k < l.geometry.size(); ++k) {
            xy_[i].push_back(proj_.to_xy(l.geometry[k]));
            if (k) cum_[i].push_back(cum_[i].back() + geo::haversine_m(l.geometry[k - 1], l.geometry[k]));
        }
        for (std::size_t k = 0; k + 1 < xy_[i].size(); ++k) {
            const auto a = xy_[i][k], b = xy_[i][k + 1];
            const long x0 = static_cast<long>(std::floor(std::min(a.x, b.x) / cell_m_));
            const long x1 = static_cast<long>(std::floor(std::max(a.x, b.x) / cell_m_));
            const long y0 = static_cast<long>(std::floor(std::min(a.y, b.y) / cell_m_));
            const long y1 = static_cast<long>(std::floor(std::max(a.y, b.y) / cell_m_));
            for (long x = x0; x <= x1; ++x)
                for (long y = y0; y <= y1; ++y) cells_[cell_key(x, y)].emplace_back(i, k);
        }
    }
}

std::optional<std::size_t> RoadNetwork::index_of(roadnet::LinkId id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

std::vector<Candidate> RoadNetwork::candidates(geo::LatLon p, double radius_m) const {
    const auto q = proj_.to_xy(p);
    const long x0 = static_cast<long>(std::floor((q.x - radius_m) / cell_m_));
    const long x1 = static_cast<long>(std::floor((q.x + radius_m) / cell_m_));
    const long y0 = static_cast<long>(std::floor((q.y - radius_m) / cell_m_));
    const long y1 = static_cast<long>(std::floor((q.y + radius_m) / cell_m_));
    std::map<std::size_t, Candidate> best;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (long x = x0; x <= x1; ++x)
        for (long y = y0; y <= y1; ++y) {
            auto it = cells_.find(cell_key(x, y));
            if (it == cells_.end()) continue;
            for (const auto& [li, k] : it->second) {
                if (!seen.emplace(li, k).second) continue;
                const auto a = xy_[li][k], b = xy_[li][k + 1];
                const double dx = b.x - a.x, dy = b.y - a.y;
                const double len2 = dx * dx + dy * dy;
                double f = len2 > 0.0 ? ((q.x - a.x) * dx + (q.y - a.y) * dy) / len2 : 0.0;
                f = std::clamp(f, 0.0, 1.0);
                const double d = std::hypot(a.x + f * dx - q.x, a.y + f * dy - q.y);
                if (d > radius_m) continue;
                const double off = cum_[li][k] + f * (cum_[li][k + 1] - cum_[li][k]);
                auto [pos, inserted] = best.try_emplace(li, Candidate{li, d, off});
                if (!inserted && d < pos->second.distance_m) pos->second = Candidate{li, d, off};
            }
        }
    std::vector<Candidate> out;
    out.reserve(best.size());
    for (const auto& [li, c] : best) out.push_back(c);
    return out;
}

geo::LatLon RoadNetwork::point_on(std::size_t link, double offset_m) const {
    return geo::point_at(links_[link].geometry, offset_m);
}

RoadNetwork::ShortestPaths::ShortestPaths(const RoadNetwork& net, std::size_t from_link, double bound_m) : net_(&net), bound_(bound_m) {
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    const std::size_t source = net.to_node_[from_link];
    dist_[source] = 0.0;
    heap.emplace(0.0, source);
    while (!heap.empty()) {
        const auto [d, u] = heap.top();
        heap.pop();
        if (d > dist_[u]) continue;
        if (d > bound_m) break;
        for (std::size_t li : net.out_links_[u]) {
            const std::size_t v = net.to_node_[li];
            const double nd = d + net.links_[li].length_m;
            auto it = dist_.find(v);
            if (it == dist_.end() || nd < it->second) {
                dist_[v] = nd;
                via_[v] = li;
                heap.emplace(nd, v);
            }
        }
    }
}

double RoadNetwork::ShortestPaths::distance_to_start_of(std::size_t link) const {
    auto it = dist_.find(net_->from_node_[link]);
    // Entries past the bound are tentative.
    if (it == dist_.end() || it->second > bound_) return std::numeric_limits<double>::infinity();
    return it->second;
}

std::vector<std::size_t> RoadNetwork::ShortestPaths::path_to_start_of(std::size_t link) const {
    std::vector<std::size_t> path;
    std::size_t node = net_->from_node_[link];
    if (!std::isfinite(distance_to_start_of(link))) return path;
    for (auto it = via_.find(node); it != via_.end(); it = via_.find(node)) {
        path.push_back(it->second);
        node = net_->from_node_[it->second];
    }
    std::reverse(path.begin(), path.end());
    return path;
}

}  // namespace opmodenet::trajectory
