#include "scseg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "scseg/errors.hpp"

namespace scseg {

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return std::string(buf);
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write report file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write: " + path);
}

const char* palette(std::size_t i) {
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                   "#9467bd", "#ff7f0e", "#8c564b"};
    return colors[i % (sizeof colors / sizeof colors[0])];
}

} // namespace

void SweepResult::validate() const {
    if (rows.empty()) throw ContractError("sweep result: no rows");
    std::map<std::string, std::size_t> last_n;
    for (const SweepRow& r : rows) {
        if (r.method.empty()) throw ContractError("sweep result: empty method name");
        if (!std::isfinite(r.miou) || !std::isfinite(r.wall_ms) ||
            (r.delta && !std::isfinite(*r.delta)))
            throw EvalError("sweep result: non-finite metric at N=" + std::to_string(r.n) +
                            " method " + r.method);
        auto it = last_n.find(r.method);
        if (it != last_n.end() && r.n <= it->second)
            throw ContractError("sweep result: N not strictly increasing for method " +
                                r.method);
        last_n[r.method] = r.n;
    }
}

std::vector<std::string> SweepResult::methods() const {
    std::vector<std::string> out;
    for (const SweepRow& r : rows)
        if (std::find(out.begin(), out.end(), r.method) == out.end())
            out.push_back(r.method);
    return out;
}

std::string render_csv(const SweepResult& result) {
    result.validate();
    std::string out = "N,method,delta,miou,wall_ms\n";
    for (const SweepRow& r : result.rows) {
        out += std::to_string(r.n);
        out += ',';
        out += r.method;
        out += ',';
        if (r.delta) out += fixed(*r.delta, 6);
        out += ',';
        out += fixed(r.miou, 6);
        out += ',';
        out += fixed(r.wall_ms, 3);
        out += '\n';
    }
    out += "# seed = " + std::to_string(result.seed) + "\n";
    out += "# config = " + result.config_hash + "\n";
    return out;
}

std::string render_svg(const SweepResult& result) {
    result.validate();
    const double width = 640.0, height = 400.0;
    const double x0 = 60.0, x1 = 500.0, y0 = 20.0, y1 = 360.0;

    double n_min = 0.0, n_max = 1.0, d_min = 0.0, d_max = 1.0;
    bool any = false;
    for (const SweepRow& r : result.rows) {
        if (!r.delta) continue;
        const double n = static_cast<double>(r.n);
        if (!any) {
            n_min = n_max = n;
            d_min = d_max = *r.delta;
            any = true;
        } else {
            n_min = std::min(n_min, n);
            n_max = std::max(n_max, n);
            d_min = std::min(d_min, *r.delta);
            d_max = std::max(d_max, *r.delta);
        }
    }
    if (n_max <= n_min) n_max = n_min + 1.0;
    if (d_max <= d_min) {
        d_min -= 0.5;
        d_max += 0.5;
    }
    const double pad = 0.05 * (d_max - d_min);
    d_min -= pad;
    d_max += pad;

    auto sx = [&](double n) { return x0 + (n - n_min) / (n_max - n_min) * (x1 - x0); };
    auto sy = [&](double d) { return y1 - (d - d_min) / (d_max - d_min) * (y1 - y0); };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      fixed(width, 0) + "\" height=\"" + fixed(height, 0) +
                      "\" viewBox=\"0 0 " + fixed(width, 0) + " " + fixed(height, 0) +
                      "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<line x1=\"" + fixed(x0, 1) + "\" y1=\"" + fixed(y1, 1) + "\" x2=\"" +
           fixed(x1, 1) + "\" y2=\"" + fixed(y1, 1) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fixed(x0, 1) + "\" y1=\"" + fixed(y0, 1) + "\" x2=\"" +
           fixed(x0, 1) + "\" y2=\"" + fixed(y1, 1) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + fixed((x0 + x1) / 2, 1) + "\" y=\"" + fixed(y1 + 30.0, 1) +
           "\" font-size=\"12\" text-anchor=\"middle\">supports N</text>\n";
    svg += "<text x=\"" + fixed(x0 - 45.0, 1) + "\" y=\"" + fixed((y0 + y1) / 2, 1) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 " +
           fixed(x0 - 45.0, 1) + " " + fixed((y0 + y1) / 2, 1) +
           ")\">deviation</text>\n";

    // Axis extremes as tick labels.
    svg += "<text x=\"" + fixed(x0, 1) + "\" y=\"" + fixed(y1 + 15.0, 1) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + fixed(n_min, 0) + "</text>\n";
    svg += "<text x=\"" + fixed(x1, 1) + "\" y=\"" + fixed(y1 + 15.0, 1) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + fixed(n_max, 0) + "</text>\n";
    svg += "<text x=\"" + fixed(x0 - 5.0, 1) + "\" y=\"" + fixed(y1, 1) +
           "\" font-size=\"10\" text-anchor=\"end\">" + fixed(d_min, 4) + "</text>\n";
    svg += "<text x=\"" + fixed(x0 - 5.0, 1) + "\" y=\"" + fixed(y0 + 4.0, 1) +
           "\" font-size=\"10\" text-anchor=\"end\">" + fixed(d_max, 4) + "</text>\n";

    const std::vector<std::string> methods = result.methods();
    for (std::size_t m = 0; m < methods.size(); ++m) {
        std::string points;
        for (const SweepRow& r : result.rows) {
            if (r.method != methods[m] || !r.delta) continue;
            if (!points.empty()) points += ' ';
            points += fixed(sx(static_cast<double>(r.n)), 2) + "," + fixed(sy(*r.delta), 2);
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(palette(m)) +
               "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
        const double ly = y0 + 14.0 * static_cast<double>(m);
        svg += "<line x1=\"" + fixed(x1 + 10.0, 1) + "\" y1=\"" + fixed(ly, 1) + "\" x2=\"" +
               fixed(x1 + 30.0, 1) + "\" y2=\"" + fixed(ly, 1) + "\" stroke=\"" +
               palette(m) + "\" stroke-width=\"1.5\"/>\n";
        svg += "<text x=\"" + fixed(x1 + 35.0, 1) + "\" y=\"" + fixed(ly + 4.0, 1) +
               "\" font-size=\"11\">" + methods[m] + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

void emit_report(const SweepResult& result, const std::string& csv_path,
                 const std::string& svg_path) {
    spit(csv_path, render_csv(result));
    spit(svg_path, render_svg(result));
}

} // namespace scseg
