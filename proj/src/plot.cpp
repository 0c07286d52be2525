#include "kglm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kglm/errors.hpp"

namespace kglm {

namespace {

constexpr int kWidth = 820;
constexpr int kHeight = 440;
constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 28;
constexpr int kMarginBottom = 44;

const char* lesson_color(int lesson) {
    switch (lesson) {
        case 1: return "#1f77b4";
        case 2: return "#ff7f0e";
        case 3: return "#2ca02c";
        default: return "#9467bd";  // fine-tuning / other
    }
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(4);
    ss << v;
    return ss.str();
}

}  // namespace

void write_loss_svg(const RunLog& log, const std::string& path) {
    if (log.records.empty()) throw ConfigError("run log is empty, nothing to plot");
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");

    int64_t min_step = log.records.front().step, max_step = log.records.back().step;
    double max_loss = 0.0;
    for (const auto& r : log.records) max_loss = std::max(max_loss, r.loss);
    if (max_loss <= 0.0) max_loss = 1.0;
    if (max_step == min_step) max_step = min_step + 1;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](int64_t step) {
        return kMarginLeft +
               plot_w * static_cast<double>(step - min_step) /
                   static_cast<double>(max_step - min_step);
    };
    auto sy = [&](double loss) { return kMarginTop + plot_h * (1.0 - loss / max_loss); };

    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << kWidth / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\" "
         "font-family=\"sans-serif\">training loss</text>\n";

    // axes and y grid
    for (int i = 0; i <= 4; ++i) {
        const double frac = i / 4.0;
        const double y = kMarginTop + plot_h * frac;
        f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << y << "\" x2=\""
          << kWidth - kMarginRight << "\" y2=\"" << y
          << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        f << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << y + 4
          << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
          << fmt(max_loss * (1.0 - frac)) << "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const int64_t step =
            min_step + static_cast<int64_t>((max_step - min_step) * (i / 4.0));
        f << "<text x=\"" << sx(step) << "\" y=\"" << kHeight - kMarginBottom + 16
          << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << step
          << "</text>\n";
    }
    f << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 8
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">step</text>\n";

    // one polyline per contiguous lesson segment
    size_t i = 0;
    while (i < log.records.size()) {
        const int lesson = log.records[i].lesson;
        std::ostringstream pts;
        size_t j = i;
        for (; j < log.records.size() && log.records[j].lesson == lesson; ++j) {
            pts << sx(log.records[j].step) << ',' << sy(log.records[j].loss) << ' ';
        }
        f << "<polyline fill=\"none\" stroke=\"" << lesson_color(lesson)
          << "\" stroke-width=\"1.5\" points=\"" << pts.str() << "\"/>\n";
        i = j;
    }

    // legend
    int lx = kMarginLeft + 8;
    std::vector<int> lessons_seen;
    for (const auto& r : log.records) {
        if (std::find(lessons_seen.begin(), lessons_seen.end(), r.lesson) == lessons_seen.end()) {
            lessons_seen.push_back(r.lesson);
        }
    }
    for (int lesson : lessons_seen) {
        f << "<rect x=\"" << lx << "\" y=\"" << kMarginTop + 4
          << "\" width=\"12\" height=\"12\" fill=\"" << lesson_color(lesson) << "\"/>\n";
        std::string label = lesson == 0 ? "fine-tune" : "lesson " + std::to_string(lesson);
        f << "<text x=\"" << lx + 16 << "\" y=\"" << kMarginTop + 14
          << "\" font-size=\"11\" font-family=\"sans-serif\">" << label << "</text>\n";
        lx += 100;
    }
    f << "</svg>\n";
}

void write_metrics_svg(const std::map<std::string, double>& kv, const std::string& path) {
    std::vector<std::pair<std::string, double>> bars;
    std::string caption;
    for (const auto& [k, v] : kv) {
        if (k.rfind("count", 0) == 0) {
            if (!caption.empty()) caption += ", ";
            caption += k + "=" + fmt(v);
        } else {
            bars.push_back({k, v});
        }
    }
    if (bars.empty()) throw ConfigError("no metric values to plot");
    std::ofstream f(path);
    if (!f) throw Error("cannot write '" + path + "'");

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const double slot = plot_w / static_cast<double>(bars.size());

    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << kWidth / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\" "
         "font-family=\"sans-serif\">evaluation metrics</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double frac = i / 4.0;
        const double y = kMarginTop + plot_h * frac;
        f << "<line x1=\"" << kMarginLeft << "\" y1=\"" << y << "\" x2=\""
          << kWidth - kMarginRight << "\" y2=\"" << y
          << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        f << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << y + 4
          << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
          << fmt(1.0 - frac) << "</text>\n";
    }
    for (size_t b = 0; b < bars.size(); ++b) {
        const double v = std::clamp(bars[b].second, 0.0, 1.0);
        const double h = plot_h * v;
        const double x = kMarginLeft + slot * static_cast<double>(b) + slot * 0.15;
        f << "<rect x=\"" << x << "\" y=\"" << kMarginTop + plot_h - h << "\" width=\""
          << slot * 0.7 << "\" height=\"" << h << "\" fill=\"#1f77b4\"/>\n";
        f << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kMarginTop + plot_h - h - 4
          << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
          << fmt(bars[b].second) << "</text>\n";
        f << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kHeight - kMarginBottom + 16
          << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
          << bars[b].first << "</text>\n";
    }
    if (!caption.empty()) {
        f << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 8
          << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << caption
          << "</text>\n";
    }
    f << "</svg>\n";
}

}  // namespace kglm
