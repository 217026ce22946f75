#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/roadnet.hpp"

namespace opmodenet::roadnet {

namespace {

const std::vector<std::string> kColumns = {
    "link_id",      "from_node",  "to_node",        "reverse_id",       "length_m",         "road_type",
    "one_way",      "directed",   "speed_limit_mph", "lanes",           "name",             "town",
    "urban_type",   "functional_class", "capacity_vph", "free_flow_speed_mph", "aadt",       "grade",
    "grade_flagged", "source_ways", "node_path",     "geometry"};

template <typename T>
std::string join_ids(const std::vector<T>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ids[i]);
    }
    return out;
}

std::vector<std::int64_t> split_ids(const std::string& s, const std::string& where) {
    std::vector<std::int64_t> out;
    std::string cur;
    for (char c : s + ";") {
        if (c == ';') {
            if (!cur.empty()) out.push_back(io::parse_int(cur, where));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

std::optional<double> opt_double(const std::string& s, const std::string& where) {
    if (io::trim(s).empty()) return std::nullopt;
    return io::parse_double(s, where);
}

}  // namespace

std::string write_links_csv(std::span<const RoadLink> links) {
    io::CsvWriter w(kColumns);
    auto opt = [&](const std::optional<double>& v) {
        if (v)
            w.field(*v);
        else
            w.field(std::string_view{});
    };
    for (const auto& l : links) {
        w.field(static_cast<long long>(l.id.value)).field(static_cast<long long>(l.from)).field(static_cast<long long>(l.to));
        if (l.reverse)
            w.field(static_cast<long long>(l.reverse->value));
        else
            w.field(std::string_view{});
        w.field(l.length_m).field(l.road_type);
        w.field(std::string_view(l.one_way ? (*l.one_way ? "true" : "false") : ""));
        w.field(l.directed_edge ? 1 : 0);
        opt(l.speed_limit_mph);
        if (l.lanes)
            w.field(*l.lanes);
        else
            w.field(std::string_view{});
        w.field(l.name).field(l.town).field(l.urban_type).field(l.functional_class);
        opt(l.capacity_vph);
        opt(l.free_flow_speed_mph);
        opt(l.aadt);
        w.field(l.grade).field(l.grade_flagged ? 1 : 0);
        w.field(join_ids(l.source_ways)).field(join_ids(l.node_path)).field(to_wkt(l.geometry));
        w.end_row();
    }
    return w.str();
}

std::vector<RoadLink> read_links_csv(std::string_view csv) {
    const auto table = io::parse_csv(csv);
    std::vector<std::size_t> col;
    for (const auto& c : kColumns) col.push_back(table.require(c));
    std::vector<RoadLink> links;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string where = "links row " + std::to_string(table.row_lines[r]);
        auto at = [&](std::size_t i) -> const std::string& { return row[col[i]]; };
        RoadLink l;
        l.id = LinkId{static_cast<std::uint32_t>(io::parse_int(at(0), where))};
        l.from = io::parse_int(at(1), where);
        l.to = io::parse_int(at(2), where);
        if (!io::trim(at(3)).empty()) l.reverse = LinkId{static_cast<std::uint32_t>(io::parse_int(at(3), where))};
        l.length_m = io::parse_double(at(4), where);
        l.road_type = at(5);
        if (at(6) == "true") l.one_way = true;
        if (at(6) == "false") l.one_way = false;
        l.directed_edge = at(7) == "1";
        l.speed_limit_mph = opt_double(at(8), where);
        if (!io::trim(at(9)).empty()) l.lanes = static_cast<int>(io::parse_int(at(9), where));
        l.name = at(10);
        l.town = at(11);
        l.urban_type = at(12);
        l.functional_class = at(13);
        l.capacity_vph = opt_double(at(14), where);
        l.free_flow_speed_mph = opt_double(at(15), where);
        l.aadt = opt_double(at(16), where);
        l.grade = io::parse_double(at(17), where);
        l.grade_flagged = at(18) == "1";
        l.source_ways = split_ids(at(19), where);
        l.node_path = split_ids(at(20), where);
        l.geometry = parse_wkt(at(21));
        if (!(l.length_m > 0.0)) throw ValidationError("link with non-positive length", {where});
        links.push_back(std::move(l));
    }
    return links;
}

}  // namespace opmodenet::roadnet
