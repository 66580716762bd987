#include "runio.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace comodal {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, path + ": cannot open for writing");
    return out;
}

const char* modality_column(Modality m) { return m == Modality::A ? "a" : "b"; }

}  // namespace

void write_training_log_csv(const std::string& path, const std::vector<LossBreakdown>& history) {
    std::ofstream out = open_out(path);
    out << "step,epoch,sup,csc,cac,alpha,beta,total\n";
    for (const auto& b : history)
        out << b.step << "," << b.epoch << "," << format_double(b.sup) << ","
            << format_double(b.csc) << "," << format_double(b.cac) << ","
            << format_double(b.alpha) << "," << format_double(b.beta) << ","
            << format_double(b.total) << "\n";
    if (!out.good()) fail(ErrorCode::io, path + ": write failed");
}

std::vector<LossBreakdown> read_training_log_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::not_found, path + ": cannot open training log");
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::format, path + ": empty file");
    require(line == "step,epoch,sup,csc,cac,alpha,beta,total", ErrorCode::format,
            path + ": unexpected training log header");
    std::vector<LossBreakdown> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        LossBreakdown b;
        char* end = nullptr;
        const char* p = line.c_str();
        auto next_field = [&](const char* what) {
            double v = std::strtod(p, &end);
            require(end != p, ErrorCode::format,
                    path + ": bad " + what + " field in line: " + line);
            p = (*end == ',') ? end + 1 : end;
            return v;
        };
        b.step = static_cast<int64_t>(next_field("step"));
        b.epoch = static_cast<int>(next_field("epoch"));
        b.sup = next_field("sup");
        b.csc = next_field("csc");
        b.cac = next_field("cac");
        b.alpha = next_field("alpha");
        b.beta = next_field("beta");
        b.total = next_field("total");
        out.push_back(b);
    }
    return out;
}

void write_val_curve_csv(const std::string& path, const std::vector<ValPoint>& curve) {
    std::ofstream out = open_out(path);
    out << "epoch,dice_a,dice_b,mean_dice\n";
    for (const auto& p : curve)
        out << p.epoch << "," << format_double(p.dice_a) << "," << format_double(p.dice_b) << ","
            << format_double(p.mean_dice) << "\n";
    if (!out.good()) fail(ErrorCode::io, path + ": write failed");
}

void write_eval_csv(const std::string& path, const SplitEvalReport& report) {
    std::ofstream out = open_out(path);
    out << "row_type,sample_id,modality,class,dice,assd_mm,assd_defined\n";
    for (const auto& rec : report.records)
        for (size_t k = 0; k < rec.per_class_dice.size(); ++k) {
            const AssdResult& a = rec.per_class_assd[k];
            out << "sample," << rec.sample_id << "," << modality_column(rec.modality) << ","
                << (k + 1) << "," << format_double(rec.per_class_dice[k]) << ","
                << (a.defined() ? format_double(a.mm) : "") << "," << (a.defined() ? 1 : 0)
                << "\n";
        }
    for (int mod = 0; mod < 2; ++mod) {
        const ModalitySummary& s = report.per_modality[static_cast<size_t>(mod)];
        for (size_t k = 0; k < s.class_mean_dice.size(); ++k) {
            bool def = s.class_assd_count[k] > 0;
            out << "class_summary,," << (mod == 0 ? "a" : "b") << "," << (k + 1) << ","
                << format_double(s.class_mean_dice[k]) << ","
                << (def ? format_double(s.class_mean_assd[k]) : "") << "," << (def ? 1 : 0)
                << "\n";
        }
        out << "summary,," << (mod == 0 ? "a" : "b") << ",all," << format_double(s.mean_dice)
            << "," << (s.assd_defined ? format_double(s.mean_assd) : "") << ","
            << (s.assd_defined ? 1 : 0) << "\n";
    }
    out << "summary,,both,all," << format_double(report.overall_mean_dice) << ","
        << (report.overall_assd_defined ? format_double(report.overall_mean_assd) : "") << ","
        << (report.overall_assd_defined ? 1 : 0) << "\n";
    if (!out.good()) fail(ErrorCode::io, path + ": write failed");
}

std::string eval_summary_text(const SplitEvalReport& report) {
    std::ostringstream os;
    auto line = [&](const char* name, const ModalitySummary& s) {
        os << "modality " << name << ": mean Dice " << format_double(s.mean_dice) << ", mean ASSD ";
        if (s.assd_defined)
            os << format_double(s.mean_assd) << " mm";
        else
            os << "undefined";
        os << "\n";
    };
    line("a", report.per_modality[0]);
    line("b", report.per_modality[1]);
    os << "overall: mean Dice " << format_double(report.overall_mean_dice) << ", mean ASSD ";
    if (report.overall_assd_defined)
        os << format_double(report.overall_mean_assd) << " mm";
    else
        os << "undefined";
    os << "\n";
    return os.str();
}

void write_ablation_csv(const std::string& path, const AblationTable& table) {
    std::ofstream out = open_out(path);
    out << "row,name,modality_specific_encoder,cmc_strategy,ccl_module,dice_a,dice_b,assd_a,"
           "assd_b\n";
    for (size_t i = 0; i < table.rows.size(); ++i) {
        const AblationRow& r = table.rows[i];
        out << (i + 1) << "," << r.name << "," << (r.flags.modality_specific_encoder ? 1 : 0)
            << "," << (r.flags.cmc_strategy ? 1 : 0) << "," << (r.flags.ccl_module ? 1 : 0) << ","
            << format_double(r.dice_a) << "," << format_double(r.dice_b) << ","
            << (r.assd_a_defined ? format_double(r.assd_a) : "") << ","
            << (r.assd_b_defined ? format_double(r.assd_b) : "") << "\n";
    }
    if (!out.good()) fail(ErrorCode::io, path + ": write failed");
}

std::string ablation_table_text(const AblationTable& table) {
    std::ostringstream os;
    os << "configuration                  | Dice a | Dice b | ASSD a | ASSD b\n";
    os << "-------------------------------+--------+--------+--------+-------\n";
    for (const AblationRow& r : table.rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-30s | %6.4f | %6.4f | %6s | %6s\n", r.name.c_str(),
                      r.dice_a, r.dice_b,
                      r.assd_a_defined ? std::to_string(r.assd_a).substr(0, 6).c_str() : "n/a",
                      r.assd_b_defined ? std::to_string(r.assd_b).substr(0, 6).c_str() : "n/a");
        os << buf;
    }
    return os.str();
}

// ---- SVG figures ----------------------------------------------------------

namespace {

constexpr int kWidth = 720, kHeight = 440;
constexpr int kMarginLeft = 70, kMarginRight = 30, kMarginTop = 50, kMarginBottom = 60;

const char* series_color(size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                   "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return colors[i % 8];
}

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

void svg_header(std::ostream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\""
       << " font-size=\"17\">" << svg_escape(title) << "</text>\n";
}

}  // namespace

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<ChartSeries>& series) {
    std::ofstream out = open_out(path);
    svg_header(out, title);
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!any) {
                xmin = xmax = x;
                ymin = ymax = y;
                any = true;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!any) {
        out << "<text x=\"360\" y=\"220\" text-anchor=\"middle\" font-family=\"sans-serif\""
            << " font-size=\"14\">no data</text>\n</svg>\n";
        return;
    }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto X = [&](double x) { return kMarginLeft + (x - xmin) / (xmax - xmin) * plot_w; };
    auto Y = [&](double y) { return kHeight - kMarginBottom - (y - ymin) / (ymax - ymin) * plot_h; };

    out << "<rect x=\"" << kMarginLeft << "\" y=\"" << kMarginTop << "\" width=\"" << plot_w
        << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double fy = ymin + (ymax - ymin) * i / 4.0;
        double fx = xmin + (xmax - xmin) * i / 4.0;
        out << "<line x1=\"" << kMarginLeft - 4 << "\" y1=\"" << Y(fy) << "\" x2=\""
            << kMarginLeft << "\" y2=\"" << Y(fy) << "\" stroke=\"#333\"/>\n";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", fy);
        out << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << Y(fy) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << buf
            << "</text>\n";
        std::snprintf(buf, sizeof(buf), "%.3g", fx);
        out << "<text x=\"" << X(fx) << "\" y=\"" << kHeight - kMarginBottom + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << buf
            << "</text>\n";
    }
    out << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
        << svg_escape(x_label) << "</text>\n";
    out << "<text x=\"18\" y=\"" << kMarginTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
        << " transform=\"rotate(-90 18 " << kMarginTop + plot_h / 2 << ")\">"
        << svg_escape(y_label) << "</text>\n";

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        if (s.points.empty()) continue;
        out << "<polyline fill=\"none\" stroke=\"" << series_color(si)
            << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : s.points) out << X(x) << "," << Y(y) << " ";
        out << "\"/>\n";
        out << "<text x=\"" << kWidth - kMarginRight - 8 << "\" y=\""
            << kMarginTop + 16 + 16 * static_cast<int>(si)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
            << series_color(si) << "\">" << svg_escape(s.name) << "</text>\n";
    }
    out << "</svg>\n";
    if (!out.good()) fail(ErrorCode::io, path + ": write failed");
}

void write_grouped_bar_chart_svg(const std::string& path, const std::string& title,
                                 const std::vector<std::string>& series_names,
                                 const std::vector<BarGroup>& groups) {
    std::ofstream out = open_out(path);
    svg_header(out, title);
    if (groups.empty() || series_names.empty()) {
        out << "<text x=\"360\" y=\"220\" text-anchor=\"middle\" font-family=\"sans-serif\""
            << " font-size=\"14\">no data</text>\n</svg>\n";
        return;
    }
    double vmax = 0.0;
    for (const auto& g : groups)
        for (double v : g.values) vmax = std::max(vmax, v);
    if (vmax <= 0.0) vmax = 1.0;
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const double group_w = plot_w / groups.size();
    const double bar_w = group_w * 0.8 / series_names.size();

    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
        << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom
        << "\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double v = vmax * i / 4.0;
        double y = kHeight - kMarginBottom - v / vmax * plot_h;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", v);
        out << "<line x1=\"" << kMarginLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kMarginLeft
            << "\" y2=\"" << y << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << buf
            << "</text>\n";
    }
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        double gx = kMarginLeft + gi * group_w + group_w * 0.1;
        for (size_t si = 0; si < series_names.size() && si < g.values.size(); ++si) {
            double v = std::max(0.0, g.values[si]);
            double h = v / vmax * plot_h;
            out << "<rect x=\"" << gx + si * bar_w << "\" y=\""
                << kHeight - kMarginBottom - h << "\" width=\"" << bar_w * 0.92 << "\" height=\""
                << h << "\" fill=\"" << series_color(si) << "\"/>\n";
        }
        out << "<text x=\"" << gx + group_w * 0.4 << "\" y=\"" << kHeight - kMarginBottom + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
            << svg_escape(g.label) << "</text>\n";
    }
    for (size_t si = 0; si < series_names.size(); ++si)
        out << "<rect x=\"" << kMarginLeft + 10 + 110 * static_cast<int>(si) << "\" y=\""
            << kMarginTop - 14 << "\" width=\"10\" height=\"10\" fill=\"" << series_color(si)
            << "\"/><text x=\"" << kMarginLeft + 24 + 110 * static_cast<int>(si) << "\" y=\""
            << kMarginTop - 5 << "\" font-family=\"sans-serif\" font-size=\"12\">"
            << svg_escape(series_names[si]) << "</text>\n";
    out << "</svg>\n";
    if (!out.good()) fail(ErrorCode::io, path + ": write failed");
}

// ---- run manifests -----------------------------------------------------------

std::string make_run_id(const json& config_snapshot, uint64_t seed) {
    std::string dump = config_snapshot.dump();
    uint64_t h = Rng::mix(seed, 0xF00D);
    for (char c : dump) h = Rng::mix(h, static_cast<uint64_t>(static_cast<unsigned char>(c)));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%012" PRIx64, h & 0xFFFFFFFFFFFFULL);
    return buf;
}

std::string utc_timestamp_now() {
    std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_run_manifest(const std::string& dir, const RunManifest& manifest) {
    json j;
    j["run_id"] = manifest.run_id;
    j["command"] = manifest.command;
    j["seed"] = manifest.seed;
    j["config"] = manifest.config_snapshot;
    j["started_utc"] = manifest.started_utc;
    j["finished_utc"] = manifest.finished_utc;
    j["artifacts"] = manifest.artifacts;
    fs::create_directories(dir);
    std::string tmp = dir + "/manifest.json.tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) fail(ErrorCode::io, tmp + ": cannot open for writing");
        out << j.dump(2) << "\n";
        out.flush();
        if (!out.good()) fail(ErrorCode::io, tmp + ": write failed");
    }
    std::error_code ec;
    fs::rename(tmp, dir + "/manifest.json", ec);
    if (ec) fail(ErrorCode::io, dir + "/manifest.json: atomic rename failed: " + ec.message());
}

RunManifest read_run_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) fail(ErrorCode::not_found, dir + "/manifest.json: cannot open run manifest");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::format, dir + "/manifest.json: " + e.what());
    }
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.seed = j.at("seed").get<uint64_t>();
    m.config_snapshot = j.at("config");
    m.started_utc = j.at("started_utc").get<std::string>();
    m.finished_utc = j.at("finished_utc").get<std::string>();
    for (auto it = j.at("artifacts").begin(); it != j.at("artifacts").end(); ++it)
        m.artifacts[it.key()] = it.value().get<std::string>();
    return m;
}

}  // namespace comodal
