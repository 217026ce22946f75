#include "opmodenet/features.hpp"

#include "opmodenet/errors.hpp"
#include "opmodenet/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace opmodenet::features {

using nlohmann::json;

namespace {

const std::string kUnknown = "unknown";

std::string category_or_unknown(const std::string& v) {
    const std::string t = io::trim(v);
    return t.empty() ? kUnknown : t;
}

}  // namespace

std::vector<TownEmbedding> read_embeddings_csv(std::string_view csv) {
    const auto t = io::parse_csv(csv);
    const auto c_town = t.require("town_id");
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) cols.push_back(t.require("v" + std::to_string(i)));
    if (t.header.size() != kEmbeddingDim + 1)
        throw ParseError("embeddings CSV must have exactly town_id and v0..v511", 1, 1);
    std::vector<TownEmbedding> out;
    std::set<std::string> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string where = "embeddings line " + std::to_string(t.row_lines[r]);
        TownEmbedding e;
        e.town_id = io::trim(t.rows[r][c_town]);
        if (!seen.insert(e.town_id).second) throw ValidationError("duplicate town in embeddings", {e.town_id});
        e.values.reserve(kEmbeddingDim);
        for (std::size_t c : cols) {
            const double v = io::parse_double(t.rows[r][c], where);
            if (!std::isfinite(v)) throw ValidationError("non-finite embedding value", {where});
            e.values.push_back(v);
        }
        out.push_back(std::move(e));
    }
    return out;
}

std::string write_embeddings_csv(std::span<const TownEmbedding> rows) {
    std::vector<std::string> header{"town_id"};
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) header.push_back("v" + std::to_string(i));
    io::CsvWriter w(header);
    for (const auto& e : rows) {
        if (e.values.size() != kEmbeddingDim) throw ShapeError("embedding for " + e.town_id + " is not 512 long");
        w.field(e.town_id);
        for (double v : e.values) w.field(v);
        w.end_row();
    }
    return w.str();
}

ImputeReport& ImputeReport::operator+=(const ImputeReport& o) {
    one_way += o.one_way;
    speed_limit += o.speed_limit;
    speed_limit_global += o.speed_limit_global;
    return *this;
}

ImputationStats fit_imputation(std::span<const roadnet::RoadLink> links) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& l : links) {
        if (!l.speed_limit_mph) continue;
        auto& a = acc[l.road_type];
        a.first += *l.speed_limit_mph;
        ++a.second;
        total += *l.speed_limit_mph;
        ++n;
    }
    ImputationStats s;
    for (const auto& [type, a] : acc) s.speed_limit_by_road_type[type] = a.first / static_cast<double>(a.second);
    s.global_speed_limit = n ? total / static_cast<double>(n) : 30.0;
    return s;
}

roadnet::RoadLink impute(const roadnet::RoadLink& link, const ImputationStats& stats, ImputeReport* report) {
    roadnet::RoadLink out = link;
    ImputeReport r;
    if (!out.one_way) {
        out.one_way = out.directed_edge;
        ++r.one_way;
    }
    if (!out.speed_limit_mph) {
        ++r.speed_limit;
        auto it = stats.speed_limit_by_road_type.find(out.road_type);
        if (it != stats.speed_limit_by_road_type.end()) {
            out.speed_limit_mph = it->second;
        } else {
            out.speed_limit_mph = stats.global_speed_limit;
            ++r.speed_limit_global;
        }
    }
    if (report) *report += r;
    return out;
}

std::vector<double> Pca::cumulative_ratio() const {
    double total = 0.0;
    for (double v : explained_variance) total += v;
    std::vector<double> out;
    double acc = 0.0;
    for (double v : explained_variance) {
        acc += v;
        out.push_back(total > 0.0 ? acc / total : 0.0);
    }
    return out;
}

Pca fit_pca(const Eigen::MatrixXd& samples, double variance_target) {
    if (samples.rows() < 2) throw ValidationError("PCA needs at least 2 samples");
    if (!(variance_target > 0.0 && variance_target <= 1.0)) throw ConfigError("PCA variance target must lie in (0, 1]");
    Pca pca;
    pca.variance_target = variance_target;
    pca.mean = samples.colwise().mean().transpose();
    const Eigen::MatrixXd centered = samples.rowwise() - pca.mean.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double denom = static_cast<double>(samples.rows() - 1);
    double total = 0.0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        pca.explained_variance.push_back(sv(i) * sv(i) / denom);
        total += pca.explained_variance.back();
    }
    if (!(total > 0.0)) throw DomainError("PCA on degenerate embeddings: all samples identical");
    const auto cum = pca.cumulative_ratio();
    std::size_t k = cum.size();
    for (std::size_t i = 0; i < cum.size(); ++i)
        if (cum[i] >= variance_target - 1e-12) {
            k = i + 1;
            break;
        }
    const Eigen::MatrixXd& v = svd.matrixV();
    pca.components.resize(static_cast<Eigen::Index>(k), samples.cols());
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::VectorXd c = v.col(static_cast<Eigen::Index>(i));
        Eigen::Index arg = 0;
        c.cwiseAbs().maxCoeff(&arg);
        if (c(arg) < 0.0) c = -c;
        pca.components.row(static_cast<Eigen::Index>(i)) = c.transpose();
    }
    return pca;
}

const std::vector<std::string>& numeric_feature_names() {
    static const std::vector<std::string> names = {"peak_hour_flow", "length_m",     "lanes",
                                                   "speed_limit_mph", "congested_speed_mph", "grade",
                                                   "capacity_vph",   "aadt",         "free_flow_speed_mph"};
    return names;
}

const std::vector<std::string>& categorical_feature_names() {
    static const std::vector<std::string> names = {"road_type", "one_way", "urban_type", "functional_class"};
    return names;
}

std::array<std::optional<double>, 9> raw_numeric(const roadnet::RoadLink& link, const traffic::LinkTrafficState& s) {
    std::array<std::optional<double>, 9> v;
    v[0] = s.peak_hour_flow;
    v[1] = link.length_m;
    if (link.lanes) v[2] = *link.lanes;
    v[3] = link.speed_limit_mph;
    v[4] = s.congested_speed_mph;
    v[5] = link.grade;
    v[6] = s.capacity_vph;
    v[7] = link.aadt;
    v[8] = s.free_flow_speed_mph;
    return v;
}

std::string raw_categorical(const roadnet::RoadLink& link, std::string_view field) {
    if (field == "road_type") return category_or_unknown(link.road_type);
    if (field == "one_way") return link.one_way ? (*link.one_way ? "true" : "false") : kUnknown;
    if (field == "urban_type") return category_or_unknown(link.urban_type);
    if (field == "functional_class") return category_or_unknown(link.functional_class);
    throw ConfigError("unknown categorical feature '" + std::string(field) + "'");
}

std::size_t FittedEncoder::dim() const {
    std::size_t d = numeric.size();
    for (const auto& [field, values] : vocab) d += values.size() + 1;
    if (pca) d += pca->k();
    return d;
}

std::vector<std::string> FittedEncoder::columns() const {
    std::vector<std::string> out = numeric;
    for (const auto& [field, values] : vocab) {
        for (const auto& v : values) out.push_back(field + "=" + v);
        out.push_back(field + "=other");
    }
    if (pca)
        for (std::size_t i = 0; i < pca->k(); ++i) out.push_back("pc" + std::to_string(i));
    return out;
}

FittedEncoder fit_encoder(std::span<const roadnet::RoadLink> links, std::span<const traffic::LinkTrafficState> states,
                          std::span<const TownEmbedding> embeddings, const EncoderOptions& options) {
    if (links.size() != states.size()) throw ShapeError("fit_encoder: links and traffic states differ in count");
    if (links.size() < 2) throw ValidationError("fit_encoder needs at least 2 training links");

    FittedEncoder enc;
    enc.imputation = fit_imputation(links);
    std::vector<roadnet::RoadLink> imputed;
    imputed.reserve(links.size());
    for (const auto& l : links) imputed.push_back(impute(l, enc.imputation));

    const auto& names = numeric_feature_names();
    std::vector<std::vector<std::optional<double>>> cols(names.size());
    for (std::size_t i = 0; i < imputed.size(); ++i) {
        const auto v = raw_numeric(imputed[i], states[i]);
        for (std::size_t c = 0; c < names.size(); ++c) cols[c].push_back(v[c]);
    }
    for (std::size_t c = 0; c < names.size(); ++c) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& v : cols[c])
            if (v) {
                sum += *v;
                ++n;
            }
        const double mean = n ? sum / static_cast<double>(n) : 0.0;
        enc.fill[names[c]] = mean;
        // Population statistics over the filled column.
        double sum_filled = 0.0;
        for (const auto& v : cols[c]) sum_filled += v.value_or(mean);
        const double m = sum_filled / static_cast<double>(cols[c].size());
        double ss = 0.0;
        for (const auto& v : cols[c]) ss += (v.value_or(mean) - m) * (v.value_or(mean) - m);
        const double sd = std::sqrt(ss / static_cast<double>(cols[c].size()));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(m)))) {
            enc.dropped.push_back(names[c]);
            continue;
        }
        enc.numeric.push_back(names[c]);
        enc.mean.push_back(m);
        enc.stddev.push_back(sd);
    }

    for (const auto& field : categorical_feature_names()) {
        std::set<std::string> values;
        for (const auto& l : imputed) values.insert(raw_categorical(l, field));
        enc.vocab.emplace_back(field, std::vector<std::string>(values.begin(), values.end()));
    }

    if (options.imagery) {
        std::set<std::string> towns;
        for (const auto& l : imputed) towns.insert(l.town);
        std::vector<const TownEmbedding*> rows;
        for (const auto& e : embeddings)
            if (towns.count(e.town_id)) rows.push_back(&e);
        std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->town_id < b->town_id; });
        if (rows.size() < 2) throw ConfigError("imagery PCA needs embeddings for at least 2 training towns");
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kEmbeddingDim));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r]->values.size() != kEmbeddingDim) throw ShapeError("embedding is not 512 long");
            for (std::size_t c = 0; c < kEmbeddingDim; ++c)
                x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r]->values[c];
            enc.pca_towns.push_back(rows[r]->town_id);
        }
        enc.pca = fit_pca(x, options.variance_target);
    }
    return enc;
}

std::vector<double> encode(const roadnet::RoadLink& raw, const traffic::LinkTrafficState& state,
                           const TownEmbedding* embedding, const FittedEncoder& enc, EncodeReport* report) {
    EncodeReport r;
    const auto link = impute(raw, enc.imputation, &r.imputed);
    const auto values = raw_numeric(link, state);
    const auto& names = numeric_feature_names();
    std::vector<double> out;
    out.reserve(enc.dim());
    for (std::size_t c = 0; c < enc.numeric.size(); ++c) {
        const auto pos = static_cast<std::size_t>(std::find(names.begin(), names.end(), enc.numeric[c]) - names.begin());
        const double v = values.at(pos).value_or(enc.fill.at(enc.numeric[c]));
        out.push_back((v - enc.mean[c]) / enc.stddev[c]);
    }
    for (const auto& [field, vocab] : enc.vocab) {
        const std::string v = raw_categorical(link, field);
        const auto it = std::lower_bound(vocab.begin(), vocab.end(), v);
        const bool known = it != vocab.end() && *it == v;
        r.out_of_vocabulary += !known;
        const std::size_t slot = known ? static_cast<std::size_t>(it - vocab.begin()) : vocab.size();
        for (std::size_t i = 0; i <= vocab.size(); ++i) out.push_back(i == slot ? 1.0 : 0.0);
    }
    if (enc.pca) {
        if (embedding && embedding->values.size() == kEmbeddingDim) {
            const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(embedding->values.data(), kEmbeddingDim);
            const Eigen::VectorXd p = enc.pca->project(x);
            for (Eigen::Index i = 0; i < p.size(); ++i) out.push_back(p(i));
        } else {
            ++r.missing_embedding;
            out.insert(out.end(), enc.pca->k(), 0.0);
        }
    }
    if (report) {
        report->imputed += r.imputed;
        report->missing_embedding += r.missing_embedding;
        report->out_of_vocabulary += r.out_of_vocabulary;
    }
    return out;
}

std::string encoder_to_json(const FittedEncoder& enc) {
    json j;
    j["version"] = 1;
    j["imputation"] = {{"speed_limit_by_road_type", enc.imputation.speed_limit_by_road_type},
                       {"global_speed_limit", enc.imputation.global_speed_limit}};
    json numeric = json::array();
    for (std::size_t i = 0; i < enc.numeric.size(); ++i)
        numeric.push_back({{"name", enc.numeric[i]}, {"mean", enc.mean[i]}, {"std", enc.stddev[i]}});
    j["numeric"] = numeric;
    j["dropped"] = enc.dropped;
    j["fill"] = enc.fill;
    json vocab = json::array();
    for (const auto& [field, values] : enc.vocab) vocab.push_back({{"field", field}, {"values", values}});
    j["vocab"] = vocab;
    if (enc.pca) {
        const auto& p = *enc.pca;
        json comps = json::array();
        for (Eigen::Index r = 0; r < p.components.rows(); ++r) {
            std::vector<double> row(p.components.cols());
            for (Eigen::Index c = 0; c < p.components.cols(); ++c) row[c] = p.components(r, c);
            comps.push_back(row);
        }
        j["pca"] = {{"variance_target", p.variance_target},
                    {"mean", std::vector<double>(p.mean.data(), p.mean.data() + p.mean.size())},
                    {"components", comps},
                    {"explained_variance", p.explained_variance},
                    {"towns", enc.pca_towns}};
    } else {
        j["pca"] = nullptr;
    }
    return j.dump(1) + "\n";
}

FittedEncoder encoder_from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("encoder JSON: ") + e.what());
    }
    try {
        if (j.at("version").get<int>() != 1) throw ValidationError("unsupported encoder version");
        FittedEncoder enc;
        enc.imputation.speed_limit_by_road_type =
            j.at("imputation").at("speed_limit_by_road_type").get<std::map<std::string, double>>();
        enc.imputation.global_speed_limit = j.at("imputation").at("global_speed_limit").get<double>();
        for (const auto& n : j.at("numeric")) {
            enc.numeric.push_back(n.at("name").get<std::string>());
            enc.mean.push_back(n.at("mean").get<double>());
            enc.stddev.push_back(n.at("std").get<double>());
        }
        enc.dropped = j.at("dropped").get<std::vector<std::string>>();
        enc.fill = j.at("fill").get<std::map<std::string, double>>();
        for (const auto& v : j.at("vocab"))
            enc.vocab.emplace_back(v.at("field").get<std::string>(), v.at("values").get<std::vector<std::string>>());
        if (!j.at("pca").is_null()) {
            const auto& p = j.at("pca");
            Pca pca;
            pca.variance_target = p.at("variance_target").get<double>();
            const auto mean = p.at("mean").get<std::vector<double>>();
            pca.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
            const auto comps = p.at("components").get<std::vector<std::vector<double>>>();
            pca.components.resize(static_cast<Eigen::Index>(comps.size()), pca.mean.size());
            for (std::size_t r = 0; r < comps.size(); ++r) {
                if (comps[r].size() != mean.size()) throw ShapeError("encoder PCA component has wrong length");
                for (std::size_t c = 0; c < comps[r].size(); ++c)
                    pca.components(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = comps[r][c];
            }
            pca.explained_variance = p.at("explained_variance").get<std::vector<double>>();
            enc.pca_towns = p.at("towns").get<std::vector<std::string>>();
            enc.pca = std::move(pca);
        }
        return enc;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("encoder JSON: ") + e.what());
    }
}

std::string encoder_hash(const FittedEncoder& encoder) { return io::sha256_hex(encoder_to_json(encoder)); }

}  // namespace opmodenet::features
