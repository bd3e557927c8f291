#include "latent_align/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

using json = nlohmann::json;

namespace latent_align {

std::string format_number(double value, int digits) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
    std::string s = buf;
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);  // no "-0.0000"
    return s;
}

std::string text_table(const std::vector<std::string> & header, const std::vector<std::vector<std::string>> & rows) {
    std::vector<size_t> width(header.size());
    for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto & r : rows) {
        for (size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string> & cells) {
        std::string out;
        for (size_t c = 0; c < width.size(); ++c) {
            const std::string cell = c < cells.size() ? cells[c] : "";
            const std::string pad(width[c] - cell.size(), ' ');
            if (c > 0) out += "  ";
            out += c == 0 ? cell + pad : pad + cell;
        }
        while (!out.empty() && out.back() == ' ') out.pop_back();
        return out + "\n";
    };
    std::string out = line(header);
    size_t total = 0;
    for (auto w : width) total += w;
    out += std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') + "\n";
    for (const auto & r : rows) out += line(r);
    return out;
}

namespace {

json line_plot(std::string title, std::string x_label, std::string y_label) {
    return json{{"type", "line"}, {"title", std::move(title)}, {"x_label", std::move(x_label)},
                {"y_label", std::move(y_label)}, {"series", json::array()}, {"annotations", json::array()}};
}

void add_series(json & plot, const std::string & name, const std::string & style, const std::vector<int> & steps,
                const std::vector<double> & values) {
    json xs = json::array(), ys = json::array();
    for (size_t k = 0; k < steps.size(); ++k) {
        if (steps[k] == kFinalStep) continue;
        xs.push_back(steps[k]);
        ys.push_back(values[k]);
    }
    plot["series"].push_back({{"name", name}, {"style", style}, {"x", xs}, {"y", ys}});
}

std::optional<size_t> final_index(const std::vector<int> & steps) {
    for (size_t k = 0; k < steps.size(); ++k) {
        if (steps[k] == kFinalStep) return k;
    }
    return std::nullopt;
}

}  // namespace

std::string consistency_table(const ConsistencyCurve & c) {
    std::vector<std::string> header{"step", "R@1"};
    for (auto t : kErrorTypes) header.push_back(std::string(error_type_id(t)));
    for (const auto * h : {"correct_score", "distractor_score", "evaluated", "skipped"}) header.push_back(h);
    std::vector<std::vector<std::string>> rows;
    for (size_t k = 0; k < c.steps.size(); ++k) {
        std::vector<std::string> r{step_label(c.steps[k]), format_number(c.recall_at_1[k])};
        for (auto t : kErrorTypes) r.push_back(format_number(c.per_error_recall.at(t)[k]));
        r.push_back(format_number(c.correct_mean_score[k]));
        r.push_back(format_number(c.distractor_mean_score[k]));
        r.push_back(std::to_string(c.evaluated[k]));
        r.push_back(std::to_string(c.skipped[k]));
        rows.push_back(std::move(r));
    }
    std::string out = text_table(header, rows);
    out += "ties between the original and a corruption count as hits (original ranked first)\n";
    return out;
}

std::string consistency_records_jsonl(const ConsistencyCurve & c) {
    std::string out;
    for (const auto & rec : c.records) {
        json j{{"sample_id", rec.sample_id},
               {"step", rec.step == kFinalStep ? json("final") : json(rec.step)},
               {"hit", rec.result.hit},
               {"chosen", rec.result.chosen ? json(std::string(error_type_id(*rec.result.chosen))) : json("original")},
               {"scores", rec.result.scores}};
        out += j.dump() + "\n";
    }
    return out;
}

json consistency_score_plot(const ConsistencyCurve & c) {
    auto plot = line_plot("Caption scores over denoising steps", "step", "mean cosine");
    add_series(plot, "original caption", "solid", c.steps, c.correct_mean_score);
    add_series(plot, "distractor mean", "dashed", c.steps, c.distractor_mean_score);
    if (const auto f = final_index(c.steps)) {
        plot["annotations"].push_back("final image: original " + format_number(c.correct_mean_score[*f]) +
                                      ", distractors " + format_number(c.distractor_mean_score[*f]));
    }
    return plot;
}

json consistency_recall_plot(const ConsistencyCurve & c) {
    auto plot = line_plot("Recall@1 for caption selection", "step", "selection rate");
    add_series(plot, "original (R@1)", "solid", c.steps, c.recall_at_1);
    for (auto t : kErrorTypes) add_series(plot, std::string(error_type_label(t)), "dashed", c.steps, c.per_error_recall.at(t));
    if (const auto f = final_index(c.steps)) {
        plot["annotations"].push_back("final image: R@1 " + format_number(c.recall_at_1[*f]));
    }
    if (const auto w = window_mean(c.steps, c.recall_at_1, {21, 30})) {
        plot["annotations"].push_back("steps 21-30 mean R@1: " + format_number(*w));
    }
    plot["annotations"].push_back(
        "full-scale reference (SDXL, T=50): the fine-tuned encoder passes 0.5 within 25 iterations, the frozen one "
        "stays below 0.1; steps 21-30 mean R@1 0.506");
    return plot;
}

std::string delta_table(const DeltaCurve & c, double gap_threshold) {
    std::vector<std::string> header{"step"};
    for (size_t r = 0; r < c.mean_by_rank.size(); ++r) header.push_back("rank" + std::to_string(r + 1));
    header.push_back("gap");
    std::vector<std::vector<std::string>> rows;
    for (size_t k = 0; k < c.steps.size(); ++k) {
        std::vector<std::string> row{step_label(c.steps[k])};
        for (const auto & series : c.mean_by_rank) row.push_back(format_number(series[k]));
        row.push_back(format_number(c.gap[k]));
        rows.push_back(std::move(row));
    }
    std::string out = text_table(header, rows);
    out += "oracle: " + c.oracle_tag + "; prompts evaluated " + std::to_string(c.prompts_evaluated) +
           ", excluded (too few images) " + std::to_string(c.prompts_too_few_images) + ", excluded (missing data) " +
           std::to_string(c.prompts_missing_data) + "\n";
    std::string first = "none";
    for (size_t k = 0; k < c.steps.size(); ++k) {
        if (c.gap[k] >= gap_threshold) {
            first = step_label(c.steps[k]);
            break;
        }
    }
    out += "gap threshold " + format_number(gap_threshold) + " (raw cosine) first reached at step " + first + "\n";
    return out;
}

json delta_plot(const DeltaCurve & c, double gap_threshold) {
    auto plot = line_plot("Score by oracle rank", "step", "mean cosine");
    for (size_t r = 0; r < c.mean_by_rank.size(); ++r) {
        add_series(plot, "oracle rank " + std::to_string(r + 1), "solid", c.steps, c.mean_by_rank[r]);
    }
    add_series(plot, "best - worst gap", "dashed", c.steps, c.gap);
    plot["annotations"].push_back("gap threshold " + format_number(gap_threshold) + " (raw cosine)");
    plot["annotations"].push_back("full-scale reference (SDXL, T=50): fine-tuned gap above 3% mid-generation");
    return plot;
}

std::string bon_alignment_table(const std::vector<BonAlignmentRow> & rows) {
    std::vector<std::vector<std::string>> cells;
    for (const auto & r : rows) {
        cells.push_back({r.label, std::to_string(r.n), std::to_string(r.stop_step), std::to_string(r.keep),
                         format_number(r.cost, 1), format_number(r.mean_score), std::to_string(r.runs),
                         std::to_string(r.scored), r.incomplete ? "yes" : "no"});
    }
    std::string out =
        text_table({"row", "n", "stop", "keep", "cost", "oracle", "runs", "scored", "incomplete"}, cells);
    out += "full-scale reference (SDXL, T=50): n=6 final-image selection scores 0.85 at cost 300\n";
    return out;
}

json bon_alignment_plot(const std::vector<BonAlignmentRow> & rows) {
    auto plot = line_plot("Oracle score against denoising cost", "cost (iterations per prompt)", "mean oracle score");
    std::map<int, std::vector<const BonAlignmentRow *>> by_stop;
    for (const auto & r : rows) {
        if (r.label != "Mean Value") by_stop[r.stop_step].push_back(&r);
    }
    for (auto & [stop, group] : by_stop) {
        std::sort(group.begin(), group.end(), [](auto * a, auto * b) { return a->cost < b->cost; });
        json xs = json::array(), ys = json::array();
        for (const auto * r : group) {
            xs.push_back(r->cost);
            ys.push_back(r->mean_score);
        }
        plot["series"].push_back({{"name", "stop " + std::to_string(stop)}, {"style", "solid"}, {"x", xs}, {"y", ys}});
    }
    if (!rows.empty() && rows.front().label == "Mean Value" && rows.front().scored > 0) {
        plot["annotations"].push_back("Mean Value (all candidates): " + format_number(rows.front().mean_score));
    }
    plot["annotations"].push_back("full-scale reference (SDXL, T=50): n=6 final-image selection 0.85 at cost 300");
    return plot;
}

std::string frontier_table(const std::vector<FrontierRow> & rows) {
    std::vector<std::vector<std::string>> cells;
    for (const auto & r : rows) {
        cells.push_back({std::to_string(r.cost), std::to_string(r.n), std::to_string(r.stop_step),
                         std::to_string(r.keep), std::to_string(r.prompt_index), std::to_string(r.selected_index),
                         std::to_string(r.selected_seed)});
    }
    return text_table({"cost", "n", "stop", "keep", "prompt", "selected", "seed"}, cells);
}

std::string range_grid_table(const RangeGrid & g) {
    std::vector<std::string> header{"train \\ eval"};
    for (const auto & r : g.eval_ranges) header.push_back(range_label(r));
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < g.values.size(); ++i) {
        std::vector<std::string> row{g.row_labels[i]};
        for (double v : g.values[i]) row.push_back(format_number(v));
        rows.push_back(std::move(row));
    }
    std::string out = "metric: " + g.metric + "\n" + text_table(header, rows);
    for (const auto & s : g.skipped) out += "skipped " + s + "\n";
    out += std::string("diagonal dominance: ") + (g.diagonal_dominant ? "yes" : "no") + "\n";
    out += "full-scale reference (SDXL, T=50): frozen encoder peaks at 0.696 on latent ranges, 0.747 on final images\n";
    return out;
}

json range_grid_plot(const RangeGrid & g) {
    json cols = json::array();
    for (const auto & r : g.eval_ranges) cols.push_back(range_label(r));
    return json{{"type", "heatmap"},
                {"title", "Train range (rows) by eval range (columns): " + g.metric},
                {"row_labels", g.row_labels},
                {"col_labels", cols},
                {"values", g.values},
                {"annotations", json::array({std::string("diagonal dominance: ") +
                                             (g.diagonal_dominant ? "yes" : "no")})}};
}

namespace {

constexpr const char * kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                     "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string xml_escape(const std::string & s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string num(double v) { return format_number(v, 2); }

std::string text_el(double x, double y, const std::string & s, const char * anchor = "start", int size = 12) {
    return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + std::to_string(size) +
           "\" text-anchor=\"" + anchor + "\">" + xml_escape(s) + "</text>\n";
}

std::vector<std::string> annotations_of(const json & spec) {
    std::vector<std::string> out;
    if (spec.contains("annotations")) {
        for (const auto & a : spec.at("annotations")) out.push_back(a.get<std::string>());
    }
    return out;
}

std::string render_line(const json & spec) {
    const double W = 720, plot_h = 360, left = 70, right = 200, top = 40, bottom = 50;
    const auto notes = annotations_of(spec);
    const double H = plot_h + 18.0 * static_cast<double>(notes.size()) + 10;
    const double x0 = left, x1 = W - right, y0 = top, y1 = plot_h - bottom;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto & s : spec.at("series")) {
        const auto & xs = s.at("x");
        const auto & ys = s.at("y");
        if (xs.size() != ys.size()) throw data_error("plot series '" + s.value("name", "") + "' has x/y of different length");
        for (size_t i = 0; i < xs.size(); ++i) {
            const double x = xs[i].get<double>(), y = ys[i].get<double>();
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            xmin = std::min(xmin, x), xmax = std::max(xmax, x);
            ymin = std::min(ymin, y), ymax = std::max(ymax, y);
        }
    }
    if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax - xmin < 1e-12) xmin -= 0.5, xmax += 0.5;
    if (ymax - ymin < 1e-12) ymin -= 0.5, ymax += 0.5;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad, ymax += ypad;
    auto px = [&](double x) { return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0); };
    auto py = [&](double y) { return y1 - (y - ymin) / (ymax - ymin) * (y1 - y0); };

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
                      "\" font-family=\"sans-serif\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += text_el(W / 2, 22, spec.value("title", ""), "middle", 15);
    svg += "<rect x=\"" + num(x0) + "\" y=\"" + num(y0) + "\" width=\"" + num(x1 - x0) + "\" height=\"" +
           num(y1 - y0) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 5.0, yv = ymin + (ymax - ymin) * i / 5.0;
        svg += "<line x1=\"" + num(px(xv)) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(px(xv)) + "\" y2=\"" +
               num(y1 + 5) + "\" stroke=\"black\"/>\n";
        svg += text_el(px(xv), y1 + 18, format_number(xv, 1), "middle", 11);
        svg += "<line x1=\"" + num(x0 - 5) + "\" y1=\"" + num(py(yv)) + "\" x2=\"" + num(x0) + "\" y2=\"" +
               num(py(yv)) + "\" stroke=\"black\"/>\n";
        svg += text_el(x0 - 8, py(yv) + 4, format_number(yv, 3), "end", 11);
    }
    svg += text_el((x0 + x1) / 2, y1 + 38, spec.value("x_label", ""), "middle");
    svg += "<text x=\"16\" y=\"" + num((y0 + y1) / 2) + "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
           num((y0 + y1) / 2) + ")\">" + xml_escape(spec.value("y_label", "")) + "</text>\n";

    size_t idx = 0;
    for (const auto & s : spec.at("series")) {
        const std::string color = kPalette[idx % std::size(kPalette)];
        const bool dashed = s.value("style", "solid") == "dashed";
        std::string points;
        const auto & xs = s.at("x");
        const auto & ys = s.at("y");
        for (size_t i = 0; i < xs.size(); ++i) {
            const double x = xs[i].get<double>(), y = ys[i].get<double>();
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (!points.empty()) points += " ";
            points += num(px(x)) + "," + num(py(y));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"" +
               (dashed ? " stroke-dasharray=\"6,4\"" : "") + " points=\"" + points + "\"/>\n";
        const double ly = y0 + 10 + 18.0 * static_cast<double>(idx);
        svg += "<line x1=\"" + num(x1 + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(x1 + 40) + "\" y2=\"" + num(ly) +
               "\" stroke=\"" + color + "\" stroke-width=\"2\"" + (dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
        svg += text_el(x1 + 46, ly + 4, s.value("name", ""), "start", 11);
        ++idx;
    }
    for (size_t i = 0; i < notes.size(); ++i) svg += text_el(left, plot_h + 18.0 * static_cast<double>(i + 1), notes[i], "start", 11);
    svg += "</svg>\n";
    return svg;
}

std::string render_heatmap(const json & spec) {
    const auto & values = spec.at("values");
    const auto & rows = spec.at("row_labels");
    const auto & cols = spec.at("col_labels");
    if (values.size() != rows.size()) throw data_error("heatmap values do not match row_labels");
    double lo = 1e300, hi = -1e300;
    for (const auto & r : values) {
        if (r.size() != cols.size()) throw data_error("heatmap row does not match col_labels");
        for (const auto & v : r) lo = std::min(lo, v.get<double>()), hi = std::max(hi, v.get<double>());
    }
    if (!(hi > lo)) hi = lo + 1.0;
    const double cell_w = 90, cell_h = 32, left = 150, top = 70;
    const auto notes = annotations_of(spec);
    const double W = left + cell_w * static_cast<double>(cols.size()) + 20;
    const double H = top + cell_h * static_cast<double>(rows.size()) + 20 + 18.0 * static_cast<double>(notes.size());
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(W) + "\" height=\"" + num(H) +
                      "\" font-family=\"sans-serif\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += text_el(W / 2, 22, spec.value("title", ""), "middle", 14);
    for (size_t j = 0; j < cols.size(); ++j) {
        svg += text_el(left + cell_w * (static_cast<double>(j) + 0.5), top - 10, cols[j].get<std::string>(), "middle", 11);
    }
    for (size_t i = 0; i < rows.size(); ++i) {
        const double y = top + cell_h * static_cast<double>(i);
        svg += text_el(left - 8, y + cell_h / 2 + 4, rows[i].get<std::string>(), "end", 11);
        for (size_t j = 0; j < cols.size(); ++j) {
            const double v = values[i][j].get<double>();
            const double t = (v - lo) / (hi - lo);
            const int shade = static_cast<int>(std::lround(245 - 160 * t));
            const std::string fill = "rgb(" + std::to_string(shade) + "," + std::to_string(shade) + ",255)";
            const double x = left + cell_w * static_cast<double>(j);
            svg += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cell_w) + "\" height=\"" +
                   num(cell_h) + "\" fill=\"" + fill + "\" stroke=\"white\"/>\n";
            svg += text_el(x + cell_w / 2, y + cell_h / 2 + 4, format_number(v, 3), "middle", 11);
        }
    }
    const double base = top + cell_h * static_cast<double>(rows.size()) + 6;
    for (size_t i = 0; i < notes.size(); ++i) svg += text_el(10, base + 18.0 * static_cast<double>(i + 1), notes[i], "start", 11);
    svg += "</svg>\n";
    return svg;
}

}  // namespace

std::string render_svg(const json & spec) {
    try {
        const std::string type = spec.at("type").get<std::string>();
        if (type == "line") return render_line(spec);
        if (type == "heatmap") return render_heatmap(spec);
        throw data_error("unknown plot type '" + type + "'");
    } catch (const json::exception & e) {
        throw data_error(std::string("malformed plot spec: ") + e.what());
    }
}

}  // namespace latent_align
