#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/roadnet.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace opmodenet::roadnet {

namespace {

enum class Flow { both, forward, backward };

Flow flow_of(const std::map<std::string, std::string>& tags) {
    auto it = tags.find("oneway");
    if (it == tags.end()) return Flow::both;
    const std::string v = io::to_lower(io::trim(it->second));
    if (v == "yes" || v == "true" || v == "1") return Flow::forward;
    if (v == "-1" || v == "reverse") return Flow::backward;
    return Flow::both;
}

std::optional<bool> one_way_tag(const std::map<std::string, std::string>& tags) {
    auto it = tags.find("oneway");
    if (it == tags.end()) return std::nullopt;
    const std::string v = io::to_lower(io::trim(it->second));
    if (v == "yes" || v == "true" || v == "1" || v == "-1" || v == "reverse") return true;
    if (v == "no" || v == "false" || v == "0") return false;
    return std::nullopt;
}

std::optional<double> speed_limit_mph(const std::map<std::string, std::string>& tags) {
    auto it = tags.find("maxspeed");
    if (it == tags.end()) return std::nullopt;
    std::string v = io::to_lower(io::trim(it->second));
    double factor = 1.0 / 1.609344;  // bare numbers are km/h
    if (auto pos = v.find("mph"); pos != std::string::npos) {
        factor = 1.0;
        v = io::trim(v.substr(0, pos));
    } else if (auto pos2 = v.find("km/h"); pos2 != std::string::npos) {
        v = io::trim(v.substr(0, pos2));
    }
    try {
        const double x = io::parse_double(v);
        if (!(x > 0.0) || !std::isfinite(x)) return std::nullopt;
        return factor == 1.0 ? x : x * factor;
    } catch (const ParseError&) {
        return std::nullopt;
    }
}

std::optional<int> lanes_tag(const std::map<std::string, std::string>& tags) {
    auto it = tags.find("lanes");
    if (it == tags.end()) return std::nullopt;
    try {
        const auto n = io::parse_int(it->second);
        if (n >= 1) return static_cast<int>(n);
    } catch (const ParseError&) {
    }
    return std::nullopt;
}

std::string tag_or_empty(const std::map<std::string, std::string>& tags, const std::string& key) {
    auto it = tags.find(key);
    return it == tags.end() ? std::string{} : it->second;
}

/// Tags that must agree for two ways to merge through a pass-through node.
/// A change of street name also ends a link.
using ModelKey =
    std::tuple<std::string, std::optional<bool>, std::optional<double>, std::optional<int>, std::string, std::string>;

ModelKey model_key(const std::map<std::string, std::string>& tags) {
    return {tag_or_empty(tags, "highway"), one_way_tag(tags), speed_limit_mph(tags), lanes_tag(tags),
            tag_or_empty(tags, "town"),    tag_or_empty(tags, "name")};
}

struct Edge {
    std::size_t way;
    NodeId a;
    NodeId b;
};

/// Direction of travel allowed on an edge when walked from `start`.
Flow flow_when_walked(const Edge& e, Flow way_flow, NodeId start) {
    if (way_flow == Flow::both) return Flow::both;
    const bool walked_forward = (e.a == start);
    if (way_flow == Flow::forward) return walked_forward ? Flow::forward : Flow::backward;
    return walked_forward ? Flow::backward : Flow::forward;
}

struct Chain {
    std::vector<NodeId> nodes;
    std::size_t way;  ///< way supplying the link attributes
    std::vector<WayId> ways;
    Flow flow;  ///< relative to `nodes` order
};

}  // namespace

BuildResult build_links(const NetworkExtract& extract) {
    std::vector<Edge> edges;
    std::map<NodeId, std::vector<std::size_t>> incident;
    std::vector<Flow> way_flow;
    std::vector<ModelKey> way_key;
    for (std::size_t wi = 0; wi < extract.ways.size(); ++wi) {
        const auto& w = extract.ways[wi];
        way_flow.push_back(flow_of(w.tags));
        way_key.push_back(model_key(w.tags));
        for (std::size_t i = 1; i < w.nodes.size(); ++i) {
            if (w.nodes[i - 1] == w.nodes[i]) continue;
            incident[w.nodes[i - 1]].push_back(edges.size());
            incident[w.nodes[i]].push_back(edges.size());
            edges.push_back({wi, w.nodes[i - 1], w.nodes[i]});
        }
    }

    auto other_end = [&](std::size_t e, NodeId n) { return edges[e].a == n ? edges[e].b : edges[e].a; };

    std::set<NodeId> boundary;
    for (const auto& [node, inc] : incident) {
        if (inc.size() != 2) {
            boundary.insert(node);
            continue;
        }
        const Edge& e1 = edges[inc[0]];
        const Edge& e2 = edges[inc[1]];
        if (way_key[e1.way] != way_key[e2.way]) {
            boundary.insert(node);
            continue;
        }
        // Chain walked e1 -> node -> e2 must keep one consistent flow.
        const Flow f1 = flow_when_walked(e1, way_flow[e1.way], other_end(inc[0], node));
        const Flow f2 = flow_when_walked(e2, way_flow[e2.way], node);
        if (f1 != f2) boundary.insert(node);
    }

    std::vector<bool> used(edges.size(), false);
    std::vector<Chain> chains;

    auto walk = [&](NodeId start, std::size_t first_edge, bool ring) {
        Chain chain;
        chain.nodes.push_back(start);
        chain.way = edges[first_edge].way;
        chain.flow = flow_when_walked(edges[first_edge], way_flow[chain.way], start);
        NodeId cur = start;
        std::size_t e = first_edge;
        while (true) {
            used[e] = true;
            const WayId wid = extract.ways[edges[e].way].id;
            if (chain.ways.empty() || chain.ways.back() != wid) chain.ways.push_back(wid);
            cur = other_end(e, cur);
            chain.nodes.push_back(cur);
            if (boundary.contains(cur) || (ring && cur == start)) break;
            const auto& inc = incident.at(cur);
            const std::size_t next = inc[0] == e ? inc[1] : inc[0];
            if (used[next]) break;
            e = next;
        }
        chains.push_back(std::move(chain));
    };

    for (NodeId s : boundary)
        for (std::size_t e : incident.at(s))
            if (!used[e]) walk(s, e, false);

    // Remaining edges form isolated rings of pass-through nodes.
    for (std::size_t e = 0; e < edges.size(); ++e) {
        if (used[e]) continue;
        // Find the smallest node on the ring to anchor it canonically.
        NodeId anchor = edges[e].a;
        {
            NodeId cur = edges[e].a;
            std::size_t ce = e;
            std::set<std::size_t> seen;
            while (seen.insert(ce).second) {
                cur = other_end(ce, cur);
                anchor = std::min(anchor, cur);
                const auto& inc = incident.at(cur);
                ce = inc[0] == ce ? inc[1] : inc[0];
            }
        }
        walk(anchor, incident.at(anchor)[0], true);
    }

    struct Directed {
        std::vector<NodeId> nodes;
        const Chain* chain;
        bool two_way;
    };
    std::vector<Directed> primaries;
    for (const auto& chain : chains) {
        std::vector<NodeId> fwd = chain.nodes;
        std::vector<NodeId> bwd(fwd.rbegin(), fwd.rend());
        switch (chain.flow) {
            case Flow::both:
                primaries.push_back({std::min(fwd, bwd), &chain, true});
                break;
            case Flow::forward:
                primaries.push_back({fwd, &chain, false});
                break;
            case Flow::backward:
                primaries.push_back({bwd, &chain, false});
                break;
        }
    }
    std::stable_sort(primaries.begin(), primaries.end(), [](const Directed& x, const Directed& y) {
        return std::tie(x.nodes.front(), x.nodes.back(), x.nodes) < std::tie(y.nodes.front(), y.nodes.back(), y.nodes);
    });

    BuildResult result;
    std::uint32_t next_id = 0;
    auto make_link = [&](const std::vector<NodeId>& nodes, const Chain& chain) {
        RoadLink link;
        link.from = nodes.front();
        link.to = nodes.back();
        link.node_path = nodes;
        for (NodeId n : nodes) link.geometry.push_back(extract.nodes.at(n));
        link.length_m = geo::polyline_length_m(link.geometry);
        const auto& tags = extract.ways[chain.way].tags;
        link.road_type = tag_or_empty(tags, "highway");
        link.one_way = one_way_tag(tags);
        link.speed_limit_mph = speed_limit_mph(tags);
        link.lanes = lanes_tag(tags);
        link.name = tag_or_empty(tags, "name");
        link.town = tag_or_empty(tags, "town");
        link.source_ways = chain.ways;
        return link;
    };
    for (const auto& p : primaries) {
        RoadLink fwd = make_link(p.nodes, *p.chain);
        if (!(fwd.length_m > 0.0)) {
            result.dropped_zero_length += p.two_way ? 2 : 1;
            continue;
        }
        fwd.id = LinkId{next_id++};
        if (!p.two_way) {
            fwd.directed_edge = true;
            result.links.push_back(std::move(fwd));
            continue;
        }
        std::vector<NodeId> rev_nodes(p.nodes.rbegin(), p.nodes.rend());
        RoadLink rev = make_link(rev_nodes, *p.chain);
        rev.id = LinkId{next_id++};
        rev.reverse = fwd.id;
        fwd.reverse = rev.id;
        result.links.push_back(std::move(fwd));
        result.links.push_back(std::move(rev));
    }
    return result;
}

NetworkExtract links_to_extract(std::span<const RoadLink> links, const NetworkExtract& source) {
    NetworkExtract out;
    for (const auto& link : links) {
        if (link.reverse && link.reverse->value < link.id.value) continue;
        Way w;
        w.id = link.id.value;
        w.nodes = link.node_path;
        if (!link.road_type.empty()) w.tags["highway"] = link.road_type;
        if (link.directed_edge)
            w.tags["oneway"] = "yes";
        else if (link.one_way.has_value())
            w.tags["oneway"] = *link.one_way ? "yes" : "no";
        if (link.speed_limit_mph) w.tags["maxspeed"] = io::format_double(*link.speed_limit_mph) + " mph";
        if (link.lanes) w.tags["lanes"] = std::to_string(*link.lanes);
        if (!link.name.empty()) w.tags["name"] = link.name;
        if (!link.town.empty()) w.tags["town"] = link.town;
        for (NodeId n : w.nodes) out.nodes.emplace(n, source.nodes.at(n));
        out.ways.push_back(std::move(w));
    }
    return out;
}

const RoadLink& find_link(std::span<const RoadLink> links, LinkId id) {
    auto it = std::lower_bound(links.begin(), links.end(), id,
                               [](const RoadLink& l, LinkId v) { return l.id < v; });
    if (it != links.end() && it->id == id) return *it;
    for (const auto& l : links)
        if (l.id == id) return l;
    throw ValidationError("unknown link id", {std::to_string(id.value)});
}

}  // namespace opmodenet::roadnet
