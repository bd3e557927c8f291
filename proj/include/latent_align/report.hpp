#pragma once

// Report emitters. Every function is a pure function of its inputs, so identical data gives
// byte-identical files.
//
// Plot specs are JSON documents read by render_svg:
//   {"type": "line", "title", "x_label", "y_label", "annotations": [..],
//    "series": [{"name", "style": "solid" | "dashed", "x": [..], "y": [..]}]}
//   {"type": "heatmap", "title", "row_labels", "col_labels", "values": [[..]], "annotations": [..]}

#include <string>
#include <vector>

#include <json.hpp>

#include "latent_align/bon_orchestrator.hpp"
#include "latent_align/evaluator.hpp"

namespace latent_align {

// Fixed-point text with `digits` decimals; "-inf"/"inf"/"nan" for non-finite values.
std::string format_number(double value, int digits = 4);

// Left-aligned first column, right-aligned others.
std::string text_table(const std::vector<std::string> & header, const std::vector<std::vector<std::string>> & rows);

std::string consistency_table(const ConsistencyCurve & curve);
std::string consistency_records_jsonl(const ConsistencyCurve & curve);
// Mean score of the original caption (solid) against the distractor mean (dashed).
nlohmann::json consistency_score_plot(const ConsistencyCurve & curve);
// R@1 of the original caption plus the selection rate of each corruption type.
nlohmann::json consistency_recall_plot(const ConsistencyCurve & curve);

std::string delta_table(const DeltaCurve & curve, double gap_threshold);
nlohmann::json delta_plot(const DeltaCurve & curve, double gap_threshold);

std::string bon_alignment_table(const std::vector<BonAlignmentRow> & rows);
nlohmann::json bon_alignment_plot(const std::vector<BonAlignmentRow> & rows);

std::string frontier_table(const std::vector<FrontierRow> & rows);

std::string range_grid_table(const RangeGrid & grid);
nlohmann::json range_grid_plot(const RangeGrid & grid);

// Throws data_error on a malformed spec.
std::string render_svg(const nlohmann::json & spec);

}  // namespace latent_align
