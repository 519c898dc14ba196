#pragma once

#include <array>
#include <string>
#include <vector>

#include "avbr/taxonomy.hpp"

namespace avbr {

struct PredictionMatrix {
    std::vector<std::string> clip_ids;             // split order
    std::vector<std::array<bool, kNumCategories>> truth;
    std::vector<std::array<bool, kNumCategories>> pred;
};

struct ClassMetrics {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    int support = 0;      // clips containing the class
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    std::array<ClassMetrics, kNumCategories> per_class;
    double macro_f1 = 0.0;
    int clip_count = 0;
    // provenance
    std::string model;
    std::string modalities;
    std::string fusion;

    std::string to_json() const;
};

// Per-class precision/recall/F1 with the zero-denominator -> 0 convention;
// macro-F1 is the arithmetic mean over the 10 classes.
EvalReport evaluate(const PredictionMatrix& matrix);

// All-positive predictor; per-class F1 is 2p/(1+p) at prevalence p.
EvalReport dummy_baseline(const PredictionMatrix& truth_only);

// ---- report emission ---------------------------------------------------------

enum class ReportLayout { table2, table3, table4 };
enum class ReportFormat { csv, markdown };

// One labelled result feeding a report layout.
struct ReportEntry {
    std::string label;  // method name (table2), modality subset (table3/4 column)
    EvalReport report;
};

// table3 cell grid: row label -> column label -> macro F1 (absent = N/A).
struct Table3Grid {
    std::vector<std::string> rows;
    std::vector<std::string> columns;
    // indexed [row][col]; negative = missing (rendered "N/A")
    std::vector<std::vector<double>> values;
};

std::string emit_table2(const std::vector<ReportEntry>& entries, ReportFormat format);
std::string emit_table3(const Table3Grid& grid, ReportFormat format);
std::string emit_table4(const std::vector<ReportEntry>& columns, ReportFormat format);

std::string emit_report(const std::vector<ReportEntry>& entries, ReportLayout layout,
                        ReportFormat format);

}  // namespace avbr
