// experiment.h
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// The mode x size x seed experiment grid: per-cell training, conversion of
// the test split, objective metrics, and trend summaries across seeds.

#ifndef SEQVC_EXPERIMENT_H_
#define SEQVC_EXPERIMENT_H_

#include <functional>
#include <string>
#include <vector>

#include "seqvc/eval.h"
#include "seqvc/training.h"

namespace seqvc {

struct ExperimentCell {
  std::string mode;  // "baseline", "mt", "mt-da"
  int size = 0;      // training pairs used by this cell
  uint64_t seed = 0;

  // e.g. "mt-da_n010_s2"; doubles as the run directory name.
  std::string Name() const;
};

// Test-split means for one trained cell.
struct CellMetrics {
  double mcd = 0.0;
  double f0_rmse = 0.0;
  double violation = 0.0;  // attention monotonicity-violation rate
  double coverage = 0.0;   // attention coverage deficit
  double repeat = 0.0;     // attention repetition rate
  int utterances = 0;
};

struct CellOutcome {
  ExperimentCell cell;
  CellMetrics metrics;
  std::string run_dir;
};

// Per-size seed counts for the cross-mode orderings, plus the mode whose
// seed-mean minimized each headline metric.
struct SizeTrend {
  int size = 0;
  int seeds = 0;                    // seeds with every compared mode present
  int mcd_mtda_le_mt = 0;           // test MCD: mt-da <= mt
  int mcd_mt_le_baseline = 0;       // test MCD: mt <= baseline
  int stab_violation_mt_le_baseline = 0;
  int stab_coverage_mt_le_baseline = 0;
  std::string best_mcd_mode;
  std::string best_f0_mode;
};

struct ExperimentPlan {
  std::vector<std::string> modes = {"baseline", "mt", "mt-da"};
  std::vector<int> sizes = {10, 25};
  std::vector<uint64_t> seeds = {1, 2, 3};
  ModelConfig model;
  TrainConfig train;  // template; mode, seed and pair count set per cell
  bool reuse = false; // expect finished runs instead of training
};

struct ExperimentReport {
  std::vector<CellOutcome> cells;
  std::vector<SizeTrend> trends;
};

// Runs one cell's pipeline in run_dir and returns its test metrics.
using CellRunner =
    std::function<CellMetrics(const ExperimentCell &, const std::string &)>;

// Converts every test pair with the given model and averages the metrics.
// Attention coverage is restricted to non-silence source frames.
CellMetrics EvaluateConversions(const AcousticModel &model,
                                const std::vector<UtterancePair> &test_pairs);

// The production runner: trains the cell (or, with plan.reuse, demands an
// existing best checkpoint), then converts and scores the test split.
CellRunner MakeTrainRunner(const ExperimentPlan &plan,
                           std::vector<UtterancePair> train_pairs,
                           std::vector<UtterancePair> val_pairs,
                           std::vector<UtterancePair> test_pairs);

std::vector<SizeTrend> ComputeTrends(const std::vector<CellOutcome> &cells);

// Full grid in plan order. With a non-empty out_dir, every cell runs in
// out_dir/<cell name> and report.json + table.csv are written at the top.
ExperimentReport RunExperiment(const ExperimentPlan &plan,
                               const CellRunner &runner,
                               const std::string &out_dir);

// Report serialization, exposed for tests.
std::string ReportJson(const ExperimentPlan &plan,
                       const ExperimentReport &report);
std::string TableCsv(const ExperimentPlan &plan,
                     const ExperimentReport &report);

}  // namespace seqvc

#endif  // SEQVC_EXPERIMENT_H_
