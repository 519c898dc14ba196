#include "avbr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace avbr {

EvalReport evaluate(const PredictionMatrix& matrix) {
    if (matrix.truth.empty()) throw std::invalid_argument("evaluate: empty matrix");
    if (matrix.truth.size() != matrix.pred.size() ||
        (!matrix.clip_ids.empty() && matrix.clip_ids.size() != matrix.truth.size())) {
        throw std::invalid_argument("evaluate: shape mismatch");
    }
    EvalReport r;
    r.clip_count = static_cast<int>(matrix.truth.size());
    double f1_sum = 0.0;
    for (int c = 0; c < kNumCategories; ++c) {
        ClassMetrics& m = r.per_class[static_cast<size_t>(c)];
        for (size_t i = 0; i < matrix.truth.size(); ++i) {
            const bool t = matrix.truth[i][static_cast<size_t>(c)];
            const bool p = matrix.pred[i][static_cast<size_t>(c)];
            m.support += t;
            if (t && p) ++m.tp;
            if (!t && p) ++m.fp;
            if (t && !p) ++m.fn;
        }
        m.precision = (m.tp + m.fp) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fp) : 0.0;
        m.recall = (m.tp + m.fn) > 0 ? static_cast<double>(m.tp) / (m.tp + m.fn) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        f1_sum += m.f1;
    }
    r.macro_f1 = f1_sum / kNumCategories;
    return r;
}

EvalReport dummy_baseline(const PredictionMatrix& truth_only) {
    PredictionMatrix all_positive = truth_only;
    all_positive.pred.assign(truth_only.truth.size(), [] {
        std::array<bool, kNumCategories> row;
        row.fill(true);
        return row;
    }());
    EvalReport r = evaluate(all_positive);
    r.model = "dummy-all-positive";
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json obj;
    obj["model"] = model;
    obj["modalities"] = modalities;
    obj["fusion"] = fusion;
    obj["clip_count"] = clip_count;
    nlohmann::ordered_json classes = nlohmann::ordered_json::array();
    for (int c = 0; c < kNumCategories; ++c) {
        const auto& m = per_class[static_cast<size_t>(c)];
        classes.push_back({{"id", c},
                           {"name", std::string(taxonomy()[static_cast<size_t>(c)].name)},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1},
                           {"support", m.support},
                           {"tp", m.tp},
                           {"fp", m.fp},
                           {"fn", m.fn}});
    }
    obj["per_class"] = classes;
    obj["macro_f1"] = macro_f1;
    return obj.dump(2) + "\n";
}

// ---- report emission ----------------------------------------------------------

namespace {

std::string pct2(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
    return buf;
}

enum class Flag { none, best, second };

std::string decorate(const std::string& text, Flag flag, ReportFormat format) {
    switch (flag) {
        case Flag::none: return text;
        case Flag::best:
            return format == ReportFormat::markdown ? "**" + text + "**" : text + "*";
        case Flag::second:
            return format == ReportFormat::markdown ? "_" + text + "_" : text + "^";
    }
    return text;
}

// Flags for the two largest distinct values among present cells.
std::vector<Flag> rank_flags(const std::vector<double>& values) {
    std::vector<Flag> flags(values.size(), Flag::none);
    double best = -1.0, second = -1.0;
    for (double v : values) {
        if (v < 0) continue;
        if (v > best) {
            second = best;
            best = v;
        } else if (v > second && v < best) {
            second = v;
        }
    }
    for (size_t i = 0; i < values.size(); ++i) {
        if (values[i] < 0) continue;
        if (values[i] == best && best >= 0) flags[i] = Flag::best;
        else if (values[i] == second && second >= 0) flags[i] = Flag::second;
    }
    return flags;
}

std::string join_row(const std::vector<std::string>& cells, ReportFormat format) {
    std::string out;
    if (format == ReportFormat::markdown) {
        out += "| ";
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out += " | ";
            out += cells[i];
        }
        out += " |";
    } else {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out += ",";
            out += cells[i];
        }
    }
    out += "\n";
    return out;
}

std::string markdown_divider(size_t columns) {
    std::string out = "|";
    for (size_t i = 0; i < columns; ++i) out += " --- |";
    out += "\n";
    return out;
}

}  // namespace

std::string emit_table2(const std::vector<ReportEntry>& entries, ReportFormat format) {
    std::string out = join_row({"Method", "F1-score (%)"}, format);
    if (format == ReportFormat::markdown) out += markdown_divider(2);
    std::vector<double> values;
    for (const auto& e : entries) values.push_back(e.report.macro_f1);
    const auto flags = rank_flags(values);
    for (size_t i = 0; i < entries.size(); ++i) {
        out += join_row({entries[i].label,
                         decorate(pct2(entries[i].report.macro_f1), flags[i], format)},
                        format);
    }
    return out;
}

std::string emit_table3(const Table3Grid& grid, ReportFormat format) {
    std::vector<std::string> header = {"Method"};
    header.insert(header.end(), grid.columns.begin(), grid.columns.end());
    std::string out = join_row(header, format);
    if (format == ReportFormat::markdown) out += markdown_divider(header.size());
    std::vector<double> flat;
    for (const auto& row : grid.values) {
        for (double v : row) flat.push_back(v);
    }
    const auto flags = rank_flags(flat);
    size_t k = 0;
    for (size_t r = 0; r < grid.rows.size(); ++r) {
        std::vector<std::string> cells = {grid.rows[r]};
        for (size_t c = 0; c < grid.columns.size(); ++c, ++k) {
            const double v = grid.values[r][c];
            cells.push_back(v < 0 ? "N/A" : decorate(pct2(v), flags[k], format));
        }
        out += join_row(cells, format);
    }
    return out;
}

std::string emit_table4(const std::vector<ReportEntry>& columns, ReportFormat format) {
    if (columns.empty()) throw std::invalid_argument("emit_table4: no columns");
    std::vector<std::string> header = {"Behavior"};
    for (const auto& e : columns) header.push_back(e.label);
    std::string out = join_row(header, format);
    if (format == ReportFormat::markdown) out += markdown_divider(header.size());
    for (int c = 0; c < kNumCategories; ++c) {
        std::vector<double> values;
        for (const auto& e : columns) {
            values.push_back(e.report.per_class[static_cast<size_t>(c)].f1);
        }
        const auto flags = rank_flags(values);
        std::vector<std::string> cells = {
            std::string(taxonomy()[static_cast<size_t>(c)].name)};
        for (size_t i = 0; i < values.size(); ++i) {
            cells.push_back(decorate(pct2(values[i]), flags[i], format));
        }
        out += join_row(cells, format);
    }
    std::vector<double> averages;
    for (const auto& e : columns) averages.push_back(e.report.macro_f1);
    const auto flags = rank_flags(averages);
    std::vector<std::string> cells = {"Average"};
    for (size_t i = 0; i < averages.size(); ++i) {
        cells.push_back(decorate(pct2(averages[i]), flags[i], format));
    }
    out += join_row(cells, format);
    return out;
}

std::string emit_report(const std::vector<ReportEntry>& entries, ReportLayout layout,
                        ReportFormat format) {
    switch (layout) {
        case ReportLayout::table2: return emit_table2(entries, format);
        case ReportLayout::table4: return emit_table4(entries, format);
        case ReportLayout::table3: {
            // Degenerate grid: one Average column per entry row.
            Table3Grid grid;
            grid.columns = {"Average", "Max", "Concat"};
            for (const auto& e : entries) {
                grid.rows.push_back(e.label);
                grid.values.push_back({e.report.macro_f1, -1.0, -1.0});
            }
            return emit_table3(grid, format);
        }
    }
    throw std::logic_error("emit_report: unreachable");
}

}  // namespace avbr
