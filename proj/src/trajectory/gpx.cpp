#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"
#include "opmodenet/trajectory.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace opmodenet::trajectory {

namespace pt = boost::property_tree;

namespace {

int digits(std::string_view s, std::size_t pos, std::size_t n, std::string_view text) {
    if (pos + n > s.size()) throw ParseError("truncated timestamp '" + std::string(text) + "'");
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        if (s[i] < '0' || s[i] > '9') throw ParseError("bad timestamp '" + std::string(text) + "'");
        v = v * 10 + (s[i] - '0');
    }
    return v;
}

void expect(std::string_view s, std::size_t pos, char c, std::string_view text) {
    if (pos >= s.size() || s[pos] != c) throw ParseError("bad timestamp '" + std::string(text) + "'");
}

}  // namespace

double parse_iso8601(std::string_view raw) {
    const std::string text = io::trim(raw);
    const std::string_view s = text;
    const int year = digits(s, 0, 4, text);
    expect(s, 4, '-', text);
    const int month = digits(s, 5, 2, text);
    expect(s, 7, '-', text);
    const int day = digits(s, 8, 2, text);
    if (s.size() < 11 || (s[10] != 'T' && s[10] != ' ')) throw ParseError("bad timestamp '" + text + "'");
    const int hour = digits(s, 11, 2, text);
    expect(s, 13, ':', text);
    const int minute = digits(s, 14, 2, text);
    expect(s, 16, ':', text);
    const int second = digits(s, 17, 2, text);
    std::size_t pos = 19;
    double frac = 0.0;
    if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {
        double scale = 0.1;
        ++pos;
        const std::size_t begin = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            frac += (s[pos] - '0') * scale;
            scale /= 10.0;
            ++pos;
        }
        if (pos == begin) throw ParseError("bad timestamp '" + text + "'");
    }
    int offset_s = 0;
    if (pos < s.size()) {
        if (s[pos] == 'Z' || s[pos] == 'z') {
            ++pos;
        } else if (s[pos] == '+' || s[pos] == '-') {
            const int sign = s[pos] == '-' ? -1 : 1;
            const int oh = digits(s, pos + 1, 2, text);
            std::size_t p = pos + 3;
            if (p < s.size() && s[p] == ':') ++p;
            const int om = digits(s, p, 2, text);
            offset_s = sign * (oh * 3600 + om * 60);
            pos = p + 2;
        }
    }
    if (pos != s.size()) throw ParseError("trailing characters in timestamp '" + text + "'");

    using namespace std::chrono;
    const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                             std::chrono::day{static_cast<unsigned>(day)}};
    if (!ymd.ok() || hour > 23 || minute > 59 || second > 60) throw ParseError("invalid date in timestamp '" + text + "'");
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<double>(days) * 86400.0 + hour * 3600 + minute * 60 + second - offset_s + frac;
}

std::string format_iso8601(double seconds) {
    using namespace std::chrono;
    const double whole = std::floor(seconds);
    long long micros = std::llround((seconds - whole) * 1e6);
    long long secs = static_cast<long long>(whole);
    if (micros >= 1000000) {
        micros -= 1000000;
        ++secs;
    }
    const long long day_count = secs >= 0 ? secs / 86400 : -((-secs + 86399) / 86400);
    const long long rem = secs - day_count * 86400;
    const year_month_day ymd{sys_days{days{day_count}}};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), rem / 3600, rem / 60 % 60,
                  rem % 60);
    std::string out = buf;
    if (micros) {
        std::snprintf(buf, sizeof buf, ".%06lld", micros);
        std::string f = buf;
        while (f.back() == '0') f.pop_back();
        out += f;
    }
    return out + "Z";
}

ParsedTraces parse_gpx(std::string_view document, std::string_view source) {
    pt::ptree tree;
    std::istringstream in{std::string(document)};
    try {
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        throw ParseError("GPX: " + e.message(), e.line(), 0);
    }
    const auto gpx = tree.get_child_optional("gpx");
    if (!gpx) throw ParseError("GPX: missing <gpx> root element");
    const std::string creator = gpx->get("<xmlattr>.creator", "");

    ParsedTraces out;
    std::size_t track_no = 0;
    for (const auto& [tag, trk] : *gpx) {
        if (tag != "trk") continue;
        std::size_t seg_no = 0;
        for (const auto& [seg_tag, seg] : trk) {
            if (seg_tag != "trkseg") continue;
            RawTrace trace;
            trace.id = std::string(source) + ":" + std::to_string(track_no) + ":" + std::to_string(seg_no);
            trace.device_meta = creator;
            for (const auto& [pt_tag, p] : seg) {
                if (pt_tag != "trkpt") continue;
                const auto time = p.get_optional<std::string>("time");
                const auto lat = p.get_optional<std::string>("<xmlattr>.lat");
                const auto lon = p.get_optional<std::string>("<xmlattr>.lon");
                if (!time || !lat || !lon) {
                    ++out.dropped_points;
                    continue;
                }
                TracePoint tp;
                tp.t = parse_iso8601(*time);
                tp.pos = {io::parse_double(*lat, "trkpt lat"), io::parse_double(*lon, "trkpt lon")};
                if (!trace.points.empty() && !(tp.t > trace.points.back().t)) {
                    ++out.dropped_points;
                    continue;
                }
                trace.points.push_back(tp);
            }
            if (trace.points.size() < 2)
                out.skipped.push_back({trace.id, "fewer than 2 usable points"});
            else
                out.traces.push_back(std::move(trace));
            ++seg_no;
        }
        ++track_no;
    }
    return out;
}

std::string write_gpx(std::span<const RawTrace> traces, std::string_view creator) {
    std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<gpx version=\"1.1\" creator=\"" +
                      std::string(creator) + "\" xmlns=\"http://www.topografix.com/GPX/1/1\">\n <trk>\n";
    for (const auto& trace : traces) {
        out += "  <trkseg>\n";
        for (const auto& p : trace.points) {
            out += "   <trkpt lat=\"" + io::format_double(p.pos.lat) + "\" lon=\"" + io::format_double(p.pos.lon) +
                   "\"><time>" + format_iso8601(p.t) + "</time></trkpt>\n";
        }
        out += "  </trkseg>\n";
    }
    out += " </trk>\n</gpx>\n";
    return out;
}

GapSplit segment_gaps(const RawTrace& trace, double max_gap_s) {
    GapSplit out;
    std::vector<TracePoint> cur;
    auto flush = [&] {
        if (cur.size() >= 2) {
            TraceSegment seg;
            seg.id = trace.id + "/" + std::to_string(out.segments.size());
            seg.trace_id = trace.id;
            seg.points = std::move(cur);
            out.segments.push_back(std::move(seg));
        } else {
            out.discarded_points += cur.size();
        }
        cur.clear();
    };
    for (const auto& p : trace.points) {
        if (!cur.empty() && p.t - cur.back().t > max_gap_s) flush();
        cur.push_back(p);
    }
    flush();
    return out;
}

}  // namespace opmodenet::trajectory
