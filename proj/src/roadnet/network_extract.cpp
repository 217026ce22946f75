#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/roadnet.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace opmodenet::roadnet {

namespace {

using nlohmann::json;

std::pair<std::size_t, std::size_t> line_column(std::string_view text, std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

NodeId parse_node_key(const std::string& key) {
    try {
        return io::parse_int(key, "node id");
    } catch (const ParseError&) {
        throw ParseError("node id '" + key + "' is not an integer");
    }
}

}  // namespace

NetworkExtract parse_network(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document.begin(), document.end());
    } catch (const json::parse_error& e) {
        auto [line, col] = line_column(document, e.byte == 0 ? 0 : e.byte - 1);
        throw ParseError(std::string("malformed network JSON: ") + e.what(), line, col);
    }
    if (!doc.is_object() || !doc.contains("nodes") || !doc.contains("ways"))
        throw ParseError("network JSON must be an object with 'nodes' and 'ways'");
    if (!doc["nodes"].is_object()) throw ParseError("'nodes' must map id to [lat, lon]");
    if (!doc["ways"].is_array()) throw ParseError("'ways' must be an array");

    NetworkExtract extract;
    for (const auto& [key, value] : doc["nodes"].items()) {
        if (!value.is_array() || value.size() != 2 || !value[0].is_number() || !value[1].is_number())
            throw ParseError("node '" + key + "' must be [lat, lon]");
        extract.nodes.emplace(parse_node_key(key), geo::LatLon{value[0].get<double>(), value[1].get<double>()});
    }

    std::vector<std::string> dangling;
    std::vector<std::string> short_ways;
    for (const auto& w : doc["ways"]) {
        if (!w.is_object() || !w.contains("id") || !w.contains("nodes") || !w["id"].is_number_integer() ||
            !w["nodes"].is_array())
            throw ParseError("each way needs an integer 'id' and a 'nodes' array");
        Way way;
        way.id = w["id"].get<WayId>();
        for (const auto& n : w["nodes"]) {
            if (!n.is_number_integer()) throw ParseError("way " + std::to_string(way.id) + " has a non-integer node");
            way.nodes.push_back(n.get<NodeId>());
        }
        if (w.contains("tags")) {
            if (!w["tags"].is_object()) throw ParseError("way " + std::to_string(way.id) + " tags must be an object");
            for (const auto& [k, v] : w["tags"].items())
                way.tags[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
        for (NodeId n : way.nodes)
            if (!extract.nodes.contains(n))
                dangling.push_back("way " + std::to_string(way.id) + " -> n" + std::to_string(n));
        if (way.nodes.size() < 2) short_ways.push_back("way " + std::to_string(way.id));
        extract.ways.push_back(std::move(way));
    }
    if (!dangling.empty()) throw ValidationError("dangling node references", dangling);
    if (!short_ways.empty()) throw ValidationError("ways with fewer than 2 nodes", short_ways);
    return extract;
}

std::string serialize_network(const NetworkExtract& extract) {
    json nodes = json::object();
    for (const auto& [id, pos] : extract.nodes) nodes[std::to_string(id)] = json::array({pos.lat, pos.lon});
    json ways = json::array();
    for (const auto& w : extract.ways) {
        json tags = json::object();
        for (const auto& [k, v] : w.tags) tags[k] = v;
        ways.push_back({{"id", w.id}, {"nodes", w.nodes}, {"tags", tags}});
    }
    json doc = {{"nodes", nodes}, {"ways", ways}};
    return doc.dump(1) + "\n";
}

NetworkExtract osm_xml_to_extract(std::string_view xml) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in{std::string(xml)};
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        throw ParseError("malformed OSM XML: " + e.message(), e.line(), 0);
    }
    const auto osm = tree.get_child_optional("osm");
    if (!osm) throw ParseError("OSM XML has no <osm> root");

    NetworkExtract all;
    for (const auto& [tag, child] : *osm) {
        if (tag == "node") {
            const auto id = child.get<NodeId>("<xmlattr>.id");
            all.nodes.emplace(id, geo::LatLon{child.get<double>("<xmlattr>.lat"), child.get<double>("<xmlattr>.lon")});
        } else if (tag == "way") {
            Way way;
            way.id = child.get<WayId>("<xmlattr>.id");
            for (const auto& [wtag, wchild] : child) {
                if (wtag == "nd") way.nodes.push_back(wchild.get<NodeId>("<xmlattr>.ref"));
                if (wtag == "tag") way.tags[wchild.get<std::string>("<xmlattr>.k")] = wchild.get<std::string>("<xmlattr>.v");
            }
            if (way.tags.contains("highway")) all.ways.push_back(std::move(way));
        }
    }
    // Keep only nodes referenced by retained ways.
    NetworkExtract out;
    out.ways = std::move(all.ways);
    std::vector<std::string> dangling;
    for (const auto& w : out.ways)
        for (NodeId n : w.nodes) {
            auto it = all.nodes.find(n);
            if (it == all.nodes.end())
                dangling.push_back("way " + std::to_string(w.id) + " -> n" + std::to_string(n));
            else
                out.nodes.emplace(n, it->second);
        }
    if (!dangling.empty()) throw ValidationError("dangling node references", dangling);
    return out;
}

}  // namespace opmodenet::roadnet
