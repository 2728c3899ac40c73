#include "pfdiqa/plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pfdiqa/corpus.hpp"
#include "pfdiqa/errors.hpp"

namespace pfd {
namespace {

namespace fs = std::filesystem;

void ensure_parent(const std::string& path) {
    if (const fs::path dir = fs::path(path).parent_path(); !dir.empty())
        fs::create_directories(dir);
}

std::ofstream open_out(const std::string& path) {
    ensure_parent(path);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    return f;
}

// black -> violet -> crimson -> orange -> yellow -> white heat ramp
void heat_color(double v, double rgb[3]) {
    static constexpr double anchors[6][3] = {
        {0.00, 0.00, 0.05}, {0.28, 0.05, 0.42}, {0.72, 0.12, 0.30},
        {0.95, 0.45, 0.10}, {0.99, 0.82, 0.15}, {1.00, 1.00, 0.95}};
    v = std::clamp(v, 0.0, 1.0) * 5.0;
    const int lo = std::min(4, static_cast<int>(v));
    const double f = v - lo;
    for (int c = 0; c < 3; ++c)
        rgb[c] = anchors[lo][c] + f * (anchors[lo + 1][c] - anchors[lo][c]);
}

// Bilinear patch-grid -> pixel-grid upsampling with edge clamping.
double sample_map(const Eigen::MatrixXd& m, double v, double u) {
    const auto pick = [&](int r, int c) {
        r = std::clamp(r, 0, static_cast<int>(m.rows()) - 1);
        c = std::clamp(c, 0, static_cast<int>(m.cols()) - 1);
        return m(r, c);
    };
    const int r0 = static_cast<int>(std::floor(v));
    const int c0 = static_cast<int>(std::floor(u));
    const double fr = v - r0;
    const double fc = u - c0;
    const double top = pick(r0, c0) * (1 - fc) + pick(r0, c0 + 1) * fc;
    const double bot = pick(r0 + 1, c0) * (1 - fc) + pick(r0 + 1, c0 + 1) * fc;
    return top * (1 - fr) + bot * fr;
}

void paint_heat_panel(Image& canvas, int x_off, const Eigen::MatrixXd& map) {
    const double lo = map.minCoeff();
    const double hi = map.maxCoeff();
    const double span = hi - lo;
    const double gr = static_cast<double>(map.rows());
    const double gc = static_cast<double>(map.cols());
    double rgb[3];
    for (int y = 0; y < canvas.h; ++y)
        for (int x = 0; x < canvas.h; ++x) {
            const double v = (y + 0.5) / canvas.h * gr - 0.5;
            const double u = (x + 0.5) / canvas.h * gc - 0.5;
            const double raw = sample_map(map, v, u);
            heat_color(span > 0 ? (raw - lo) / span : 0.5, rgb);
            for (int c = 0; c < 3; ++c) canvas.at(y, x_off + x, c) = rgb[c];
        }
}

std::string svg_head(int w, int h) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" "
                  "height=\"%d\" viewBox=\"0 0 %d %d\">\n"
                  "<rect width=\"%d\" height=\"%d\" fill=\"white\"/>\n",
                  w, h, w, h, w, h);
    return buf;
}

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct AxisScale {
    double lo, hi, px0, px1;
    double operator()(double v) const {
        return px0 + (v - lo) / (hi - lo) * (px1 - px0);
    }
};

// Expects the y scale to map low values to the larger pixel coordinate
// (SVG grows downward); the frame sits at the data-range edges.
void draw_frame(std::ostringstream& out, const AxisScale& xs, const AxisScale& ys,
                const std::string& x_label, const std::string& y_label) {
    const double x_left = xs(xs.lo), x_right = xs(xs.hi);
    const double y_bottom = ys(ys.lo), y_top = ys(ys.hi);
    out << "<g stroke=\"#444\" stroke-width=\"1\" fill=\"none\">"
        << "<line x1=\"" << x_left << "\" y1=\"" << y_bottom << "\" x2=\"" << x_right
        << "\" y2=\"" << y_bottom << "\"/>"
        << "<line x1=\"" << x_left << "\" y1=\"" << y_top << "\" x2=\"" << x_left
        << "\" y2=\"" << y_bottom << "\"/></g>\n";
    out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xs.lo + (xs.hi - xs.lo) * i / 4.0;
        const double fy = ys.lo + (ys.hi - ys.lo) * i / 4.0;
        out << "<text x=\"" << xs(fx) << "\" y=\"" << y_bottom + 16
            << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
        out << "<text x=\"" << x_left - 6 << "\" y=\"" << ys(fy) + 4
            << "\" text-anchor=\"end\">" << fmt(fy) << "</text>\n";
    }
    out << "<text x=\"" << (x_left + x_right) / 2 << "\" y=\"" << y_bottom + 34
        << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    out << "<text x=\"14\" y=\"" << (y_top + y_bottom) / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
        << (y_top + y_bottom) / 2 << ")\">" << y_label << "</text>\n</g>\n";
}

}  // namespace

void write_attention_panels(const PipelineTrace& trace, const Image& img,
                            const std::string& out_png) {
    const int gap = 4;
    Image canvas = Image::zero(img.h, img.w * 3 + gap * 2);
    std::fill(canvas.data.begin(), canvas.data.end(), 1.0);

    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) canvas.at(y, x, c) = img.at(y, x, c);

    paint_heat_panel(canvas, img.w + gap, trace.attn_before);
    paint_heat_panel(canvas, 2 * (img.w + gap), trace.attn_after);
    ensure_parent(out_png);
    write_png(out_png, canvas);
}

void write_score_scatter_svg(const EvalReport& report, const std::string& out_svg) {
    if (report.preds.empty()) throw ArgumentError("scatter needs a non-empty report");
    const int w = 460, h = 460;
    double lo = 0.0, hi = 1.0;
    for (std::size_t i = 0; i < report.preds.size(); ++i) {
        lo = std::min({lo, report.preds[i], report.targets[i]});
        hi = std::max({hi, report.preds[i], report.targets[i]});
    }
    const double pad = 0.05 * (hi - lo);
    const AxisScale xs{lo - pad, hi + pad, 56.0, w - 20.0};
    const AxisScale ys{lo - pad, hi + pad, h - 50.0, 24.0};

    std::ostringstream out;
    out << svg_head(w, h);
    draw_frame(out, xs, ys, "oracle MOS", "predicted score");
    out << "<line x1=\"" << xs(xs.lo) << "\" y1=\"" << ys(xs.lo) << "\" x2=\""
        << xs(xs.hi) << "\" y2=\"" << ys(xs.hi)
        << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    for (std::size_t i = 0; i < report.preds.size(); ++i) {
        out << "<circle cx=\"" << xs(report.targets[i]) << "\" cy=\""
            << ys(report.preds[i])
            << "\" r=\"3.2\" fill=\"#33689c\" fill-opacity=\"0.75\"/>\n";
    }
    out << "<text x=\"" << (56 + w - 20) / 2
        << "\" y=\"16\" font-family=\"sans-serif\" font-size=\"12\" "
           "text-anchor=\"middle\" fill=\"#222\">SRCC "
        << fmt(report.srcc) << "  PLCC " << fmt(report.plcc) << "  (n=" << report.n
        << ")</text>\n</svg>\n";

    open_out(out_svg) << out.str();
}

void write_steps_chart_svg(const std::vector<AblationCell>& steps,
                           const std::string& out_svg) {
    if (steps.empty()) throw ArgumentError("steps chart needs at least one cell");
    std::vector<double> xs_v, mean_v, std_v;
    for (const auto& cell : steps) {
        int count = 0;
        if (std::sscanf(cell.label.c_str(), "%d", &count) != 1 || count < 1)
            throw ArgumentError("steps cell label lacks a count: " + cell.label);
        xs_v.push_back(count);
        mean_v.push_back(cell.srcc_mean);
        std_v.push_back(cell.srcc_std);
    }
    double ylo = 1.0, yhi = -1.0;
    for (std::size_t i = 0; i < mean_v.size(); ++i) {
        ylo = std::min(ylo, mean_v[i] - std_v[i]);
        yhi = std::max(yhi, mean_v[i] + std_v[i]);
    }
    const double ypad = std::max(0.02, 0.1 * (yhi - ylo));
    const int w = 460, h = 340;
    const AxisScale ax{xs_v.front() - 0.5, xs_v.back() + 0.5, 56.0, w - 20.0};
    const AxisScale ay{ylo - ypad, yhi + ypad, h - 50.0, 24.0};

    std::ostringstream out;
    out << svg_head(w, h);
    draw_frame(out, ax, ay, "sampling steps", "mean SRCC");
    out << "<polyline fill=\"none\" stroke=\"#b0522d\" stroke-width=\"1.6\" points=\"";
    for (std::size_t i = 0; i < xs_v.size(); ++i)
        out << ax(xs_v[i]) << ',' << ay(mean_v[i]) << ' ';
    out << "\"/>\n";
    for (std::size_t i = 0; i < xs_v.size(); ++i) {
        const double x = ax(xs_v[i]);
        out << "<line x1=\"" << x << "\" y1=\"" << ay(mean_v[i] - std_v[i])
            << "\" x2=\"" << x << "\" y2=\"" << ay(mean_v[i] + std_v[i])
            << "\" stroke=\"#b0522d\" stroke-width=\"1\"/>\n";
        out << "<circle cx=\"" << x << "\" cy=\"" << ay(mean_v[i])
            << "\" r=\"3.4\" fill=\"#b0522d\"/>\n";
    }
    out << "</svg>\n";
    open_out(out_svg) << out.str();
}

void write_trajectory_csv(const Student& student, const Teacher& teacher,
                          const Image& img, const std::string& image_id,
                          const std::string& out_csv) {
    const auto trace = trace_pipeline(student, img, image_id);
    if (!trace.sampled)
        throw ArgumentError("trajectory dump needs the denoising branch enabled");
    const auto tea = teacher_pseudo_labels(teacher, img);

    auto f = open_out(out_csv);
    f << "state,timestep,state_norm,fea\n";
    for (std::size_t k = 0; k < trace.states.size(); ++k) {
        const int t = k < trace.timesteps.size() ? trace.timesteps[k] : -1;
        const auto& s = trace.states[k];
        const double fea =
            (s - tea.f_tea).squaredNorm() / static_cast<double>(s.size());
        f << k << ',' << t << ',' << format_double(trace.state_norms[k]) << ','
          << format_double(fea) << "\n";
    }
    if (!f) throw IoError("failed writing " + out_csv);
}

}  // namespace pfd
