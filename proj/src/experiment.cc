// experiment.cc
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

#include "seqvc/experiment.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "seqvc/version.h"

namespace seqvc {

using nlohmann::json;

std::string ExperimentCell::Name() const {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_n%03d_s%llu", mode.c_str(), size,
                static_cast<unsigned long long>(seed));
  return buf;
}

CellMetrics EvaluateConversions(const AcousticModel &model,
                                const std::vector<UtterancePair> &test_pairs) {
  if (test_pairs.empty())
    throw std::invalid_argument("no test pairs to evaluate");
  CellMetrics out;
  for (const UtterancePair &pair : test_pairs) {
    ConvertResult conv = model.Convert(pair.src, pair.src_bn);
    out.mcd += Mcd(conv.track, pair.tgt);
    out.f0_rmse += F0Rmse(conv.track, pair.tgt);
    FrameLabels labs = MakeFrameLabels(pair.src_lab, pair.src.hop_ms,
                                       pair.src.num_frames());
    std::vector<uint8_t> nonsil(labs.phoneme.size());
    for (size_t t = 0; t < nonsil.size(); ++t)
      nonsil[t] = labs.phoneme[t] != kSilencePhonemeId ? 1 : 0;
    AttnDiagnostics diag = ComputeAttnDiagnostics(conv.attention, &nonsil);
    out.violation += diag.monotonicity_violation_rate;
    out.coverage += diag.coverage_deficit;
    out.repeat += diag.repeat_score;
    out.utterances++;
  }
  const double n = static_cast<double>(out.utterances);
  out.mcd /= n;
  out.f0_rmse /= n;
  out.violation /= n;
  out.coverage /= n;
  out.repeat /= n;
  return out;
}

CellRunner MakeTrainRunner(const ExperimentPlan &plan,
                           std::vector<UtterancePair> train_pairs,
                           std::vector<UtterancePair> val_pairs,
                           std::vector<UtterancePair> test_pairs) {
  return [plan, train_pairs = std::move(train_pairs),
          val_pairs = std::move(val_pairs),
          test_pairs = std::move(test_pairs)](const ExperimentCell &cell,
                                              const std::string &run_dir) {
    TrainConfig tcfg = plan.train;
    ApplyMode(cell.mode, &tcfg);
    tcfg.seed = cell.seed;
    tcfg.pairs = cell.size;

    std::filesystem::path best =
        std::filesystem::path(run_dir) / "best.ckpt";
    if (plan.reuse) {
      if (!std::filesystem::exists(best))
        throw std::runtime_error("no checkpoint to reuse for cell " +
                                 cell.Name());
    } else {
      TrainOptions opts;
      opts.out_dir = run_dir;
      opts.keep_epoch_checkpoints = false;
      Train(plan.model, tcfg, train_pairs, val_pairs, opts);
    }

    Checkpoint ckpt = ReadCheckpoint(best.string());
    AcousticModel model(ModelConfigFromJson(ckpt.config_json));
    model.params() = ckpt.params;
    return EvaluateConversions(model, test_pairs);
  };
}

std::vector<SizeTrend> ComputeTrends(const std::vector<CellOutcome> &cells) {
  // (size, seed) -> mode -> metrics
  std::map<std::pair<int, uint64_t>, std::map<std::string, CellMetrics>> grid;
  std::vector<int> size_order;
  for (const CellOutcome &c : cells) {
    grid[{c.cell.size, c.cell.seed}][c.cell.mode] = c.metrics;
    if (std::find(size_order.begin(), size_order.end(), c.cell.size) ==
        size_order.end())
      size_order.push_back(c.cell.size);
  }

  std::vector<SizeTrend> trends;
  for (int size : size_order) {
    SizeTrend t;
    t.size = size;
    std::map<std::string, std::pair<double, double>> mode_sums;  // mcd, f0
    std::map<std::string, int> mode_counts;
    for (const auto &[key, modes] : grid) {
      if (key.first != size) continue;
      for (const auto &[mode, metrics] : modes) {
        mode_sums[mode].first += metrics.mcd;
        mode_sums[mode].second += metrics.f0_rmse;
        mode_counts[mode]++;
      }
      auto base = modes.find("baseline");
      auto mt = modes.find("mt");
      auto mtda = modes.find("mt-da");
      if (base == modes.end() || mt == modes.end()) continue;
      t.seeds++;
      if (mt->second.mcd <= base->second.mcd) t.mcd_mt_le_baseline++;
      if (mt->second.violation <= base->second.violation)
        t.stab_violation_mt_le_baseline++;
      if (mt->second.coverage <= base->second.coverage)
        t.stab_coverage_mt_le_baseline++;
      if (mtda != modes.end() && mtda->second.mcd <= mt->second.mcd)
        t.mcd_mtda_le_mt++;
    }
    double best_mcd = 0, best_f0 = 0;
    for (const auto &[mode, sums] : mode_sums) {
      double mcd = sums.first / mode_counts[mode];
      double f0 = sums.second / mode_counts[mode];
      if (t.best_mcd_mode.empty() || mcd < best_mcd) {
        t.best_mcd_mode = mode;
        best_mcd = mcd;
      }
      if (t.best_f0_mode.empty() || f0 < best_f0) {
        t.best_f0_mode = mode;
        best_f0 = f0;
      }
    }
    trends.push_back(t);
  }
  return trends;
}

ExperimentReport RunExperiment(const ExperimentPlan &plan,
                               const CellRunner &runner,
                               const std::string &out_dir) {
  if (plan.modes.empty() || plan.sizes.empty() || plan.seeds.empty())
    throw std::invalid_argument("empty experiment plan");
  const bool to_disk = !out_dir.empty();
  std::filesystem::path out(out_dir);
  if (to_disk) std::filesystem::create_directories(out);

  ExperimentReport report;
  for (int size : plan.sizes) {
    for (const std::string &mode : plan.modes) {
      for (uint64_t seed : plan.seeds) {
        ExperimentCell cell{mode, size, seed};
        std::string run_dir =
            to_disk ? (out / cell.Name()).string() : std::string();
        CellOutcome outcome;
        outcome.cell = cell;
        outcome.run_dir = run_dir;
        outcome.metrics = runner(cell, run_dir);
        report.cells.push_back(std::move(outcome));
      }
    }
  }
  report.trends = ComputeTrends(report.cells);

  if (to_disk) {
    std::ofstream js(out / "report.json");
    js << ReportJson(plan, report) << "\n";
    std::ofstream csv(out / "table.csv");
    csv << TableCsv(plan, report);
    if (!js || !csv)
      throw std::runtime_error("cannot write experiment report under " +
                               out_dir);
  }
  return report;
}

std::string ReportJson(const ExperimentPlan &plan,
                       const ExperimentReport &report) {
  json js;
  js["version"] = kVersionString;
  js["config"] = json::parse(ConfigJson(plan.model, plan.train));
  js["modes"] = plan.modes;
  js["sizes"] = plan.sizes;
  js["seeds"] = plan.seeds;
  js["cells"] = json::array();
  for (const CellOutcome &c : report.cells) {
    js["cells"].push_back({{"mode", c.cell.mode},
                           {"size", c.cell.size},
                           {"seed", c.cell.seed},
                           {"mcd", c.metrics.mcd},
                           {"f0_rmse", c.metrics.f0_rmse},
                           {"attn_violation", c.metrics.violation},
                           {"attn_coverage_deficit", c.metrics.coverage},
                           {"attn_repetition", c.metrics.repeat},
                           {"test_utterances", c.metrics.utterances},
                           {"run_dir", c.run_dir}});
  }
  js["trends"] = json::array();
  for (const SizeTrend &t : report.trends) {
    js["trends"].push_back(
        {{"size", t.size},
         {"seeds", t.seeds},
         {"mcd_mtda_le_mt", t.mcd_mtda_le_mt},
         {"mcd_mt_le_baseline", t.mcd_mt_le_baseline},
         {"stab_violation_mt_le_baseline", t.stab_violation_mt_le_baseline},
         {"stab_coverage_mt_le_baseline", t.stab_coverage_mt_le_baseline},
         {"best_mcd_mode", t.best_mcd_mode},
         {"best_f0_mode", t.best_f0_mode}});
  }
  return js.dump(2);
}

std::string TableCsv(const ExperimentPlan &plan,
                     const ExperimentReport &report) {
  std::map<std::tuple<int, std::string, uint64_t>, const CellMetrics *> lookup;
  for (const CellOutcome &c : report.cells)
    lookup[{c.cell.size, c.cell.mode, c.cell.seed}] = &c.metrics;

  auto pick = [](const CellMetrics &m, const std::string &metric) {
    if (metric == "mcd") return m.mcd;
    if (metric == "f0_rmse") return m.f0_rmse;
    if (metric == "attn_violation") return m.violation;
    return m.coverage;
  };

  std::string text = "metric,size,mode";
  for (uint64_t seed : plan.seeds)
    text += ",seed_" + std::to_string(seed);
  text += ",mean\n";
  for (const std::string &metric :
       {"mcd", "f0_rmse", "attn_violation", "attn_coverage_deficit"}) {
    for (int size : plan.sizes) {
      for (const std::string &mode : plan.modes) {
        std::string row =
            metric + "," + std::to_string(size) + "," + mode;
        double sum = 0;
        int n = 0;
        for (uint64_t seed : plan.seeds) {
          auto it = lookup.find({size, mode, seed});
          if (it == lookup.end()) {
            row += ",";
            continue;
          }
          double v = pick(*it->second, metric);
          char buf[32];
          std::snprintf(buf, sizeof(buf), ",%.6f", v);
          row += buf;
          sum += v;
          n++;
        }
        if (n > 0) {
          char buf[32];
          std::snprintf(buf, sizeof(buf), ",%.6f", sum / n);
          row += buf;
        } else {
          row += ",";
        }
        text += row + "\n";
      }
    }
  }
  return text;
}

}  // namespace seqvc
