// seqvc.cc
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

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqvc/experiment.h"
#include "seqvc/synth.h"
#include "seqvc/version.h"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seqvc;

std::vector<UtterancePair> LoadManifestPairs(const std::string &path) {
  PhonemeInventory inventory;
  std::vector<UtterancePair> pairs;
  for (const ManifestEntry &entry : ReadManifest(path))
    pairs.push_back(LoadPair(entry, &inventory));
  if (pairs.empty())
    throw std::runtime_error(path + ": manifest lists no pairs");
  return pairs;
}

void ApplyCorpusConfig(const KeyValueConfig &kv, CorpusConfig *cfg) {
  cfg->n_train = kv.GetInt("corpus.n_train", cfg->n_train);
  cfg->n_val = kv.GetInt("corpus.n_val", cfg->n_val);
  cfg->n_test = kv.GetInt("corpus.n_test", cfg->n_test);
  cfg->feat_dim = kv.GetInt("corpus.feat_dim", cfg->feat_dim);
  cfg->bn_dim = kv.GetInt("corpus.bn_dim", cfg->bn_dim);
  cfg->phonemes = kv.GetInt("corpus.phonemes", cfg->phonemes);
  cfg->tones = kv.GetInt("corpus.tones", cfg->tones);
  cfg->min_phones_per_clause =
      kv.GetInt("corpus.min_phones_per_clause", cfg->min_phones_per_clause);
  cfg->max_phones_per_clause =
      kv.GetInt("corpus.max_phones_per_clause", cfg->max_phones_per_clause);
  cfg->sil_dur_lo_ms = kv.GetDouble("corpus.sil_dur_lo_ms", cfg->sil_dur_lo_ms);
  cfg->sil_dur_hi_ms = kv.GetDouble("corpus.sil_dur_hi_ms", cfg->sil_dur_hi_ms);
  cfg->phone_dur_lo_ms =
      kv.GetDouble("corpus.phone_dur_lo_ms", cfg->phone_dur_lo_ms);
  cfg->phone_dur_hi_ms =
      kv.GetDouble("corpus.phone_dur_hi_ms", cfg->phone_dur_hi_ms);
  cfg->noise_sigma = kv.GetDouble("corpus.noise_sigma", cfg->noise_sigma);
  cfg->bn_noise_sigma =
      kv.GetDouble("corpus.bn_noise_sigma", cfg->bn_noise_sigma);
  cfg->src_proto_shrink =
      kv.GetDouble("corpus.src_proto_shrink", cfg->src_proto_shrink);
  cfg->seed = static_cast<uint64_t>(
      kv.GetInt("corpus.seed", static_cast<int>(cfg->seed)));
}

KeyValueConfig LoadKv(const std::string &path) {
  if (path.empty()) return KeyValueConfig::FromString("");
  return KeyValueConfig::FromFile(path);
}

// Derives phoneme_classes / tone_classes from the corpus labels unless the
// config file pinned them.
void FitLabelSpaces(const KeyValueConfig &kv,
                    const std::vector<UtterancePair> &pairs,
                    ModelConfig *mcfg) {
  int max_ph = 0, max_tone = 0;
  for (const UtterancePair &pair : pairs) {
    max_ph = std::max(max_ph, pair.src_lab.inventory_size - 1);
    max_tone = std::max(max_tone, pair.src_lab.tone_count);
  }
  if (!kv.Has("model.phoneme_classes")) mcfg->phoneme_classes = max_ph + 1;
  if (!kv.Has("model.tone_classes")) mcfg->tone_classes = max_tone + 1;
}

// Model dimensions follow the loaded corpus unless the config pinned them.
void FitFeatureDims(const KeyValueConfig &kv,
                    const std::vector<UtterancePair> &pairs,
                    ModelConfig *mcfg) {
  if (!kv.Has("model.feat_dim")) mcfg->feat_dim = pairs[0].src.dim();
  if (!kv.Has("model.bottleneck_dim"))
    mcfg->bottleneck_dim = pairs[0].src_bn.dim();
}

BottleneckTrack ReadBottleneck(const std::string &path, double mel_hop_ms) {
  FeatureTrack raw = ReadTrack(path);
  BottleneckTrack bn;
  bn.frames = raw.frames;
  double ratio = raw.hop_ms / mel_hop_ms;
  bn.rate_divisor = std::max(1, static_cast<int>(std::lround(ratio)));
  return bn;
}

int CmdGenSynthetic(const std::string &out_dir, const std::string &config,
                    int train_n, int val_n, int test_n, int seed) {
  CorpusConfig cfg;
  ApplyCorpusConfig(LoadKv(config), &cfg);
  if (train_n > 0) cfg.n_train = train_n;
  if (val_n > 0) cfg.n_val = val_n;
  if (test_n > 0) cfg.n_test = test_n;
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  CorpusStats stats = GenerateCorpusFiles(cfg, out_dir);
  std::printf("wrote %d train / %d val / %d test pairs under %s\n",
              cfg.n_train, cfg.n_val, cfg.n_test, out_dir.c_str());
  std::printf("mean alignment points over train: %.2f\n",
              stats.mean_alignment_points);
  return 0;
}

int CmdAugment(const std::string &manifest) {
  std::vector<UtterancePair> pairs = LoadManifestPairs(manifest);
  std::vector<PreparedPair> prepared;
  for (const UtterancePair &pair : pairs) prepared.push_back(PreparePair(pair));
  AugmentStats stats = CollectAugmentStats(prepared);
  std::printf("pairs: %d\n", stats.pairs);
  std::printf("alignment failures: %d\n", stats.alignment_failures);
  std::printf("mean alignment points: %.2f\n", stats.mean_points);
  std::printf("total fragments: %lld\n", stats.total_fragments);
  std::printf("alignment-point histogram:\n");
  for (size_t n = 0; n < stats.point_histogram.size(); ++n)
    if (stats.point_histogram[n] > 0)
      std::printf("  %zu points: %d pairs\n", n, stats.point_histogram[n]);
  return 0;
}

int CmdTrain(const std::string &manifest, const std::string &val_manifest,
             const std::string &out_dir, const std::string &mode,
             const std::string &config, int pairs, int seed,
             const std::string &resume, bool no_epoch_checkpoints,
             int stop_after_epoch) {
  KeyValueConfig kv = LoadKv(config);
  std::vector<UtterancePair> train_pairs = LoadManifestPairs(manifest);
  std::vector<UtterancePair> val_pairs;
  if (!val_manifest.empty()) val_pairs = LoadManifestPairs(val_manifest);

  ModelConfig mcfg;
  TrainConfig tcfg;
  FitFeatureDims(kv, train_pairs, &mcfg);
  FitLabelSpaces(kv, train_pairs, &mcfg);
  ApplyModelConfig(kv, &mcfg);
  ApplyTrainConfig(kv, &tcfg);
  if (!mode.empty()) ApplyMode(mode, &tcfg);
  if (pairs > 0) tcfg.pairs = pairs;
  if (seed >= 0) tcfg.seed = static_cast<uint64_t>(seed);

  TrainOptions opts;
  opts.out_dir = out_dir;
  opts.resume_from = resume;
  opts.keep_epoch_checkpoints = !no_epoch_checkpoints;
  opts.stop_after_epoch = stop_after_epoch;
  TrainResult res = Train(mcfg, tcfg, train_pairs, val_pairs, opts);
  std::printf("trained through epoch %d (%zu this run)\n", res.last_epoch,
              res.logs.size());
  std::printf("best validation total: %.6f\n", res.best_val);
  std::printf("best checkpoint: %s\n", res.best_checkpoint.c_str());
  return 0;
}

int CmdConvert(const std::string &checkpoint, const std::string &src_path,
               const std::string &bn_path, const std::string &out_path,
               const std::string &attention_path) {
  Checkpoint ckpt = ReadCheckpoint(checkpoint);
  AcousticModel model(ModelConfigFromJson(ckpt.config_json));
  model.params() = ckpt.params;

  FeatureTrack src = ReadTrack(src_path);
  BottleneckTrack bn = ReadBottleneck(bn_path, src.hop_ms);
  ConvertResult res = model.Convert(src, bn);
  WriteTrack(out_path, res.track);
  if (!attention_path.empty()) {
    std::ofstream att(attention_path);
    if (!att)
      throw std::runtime_error("cannot write " + attention_path);
    for (int t = 0; t < res.attention.rows(); ++t) {
      for (int s = 0; s < res.attention.cols(); ++s)
        att << (s ? "," : "") << res.attention(t, s);
      att << "\n";
    }
  }
  std::printf("wrote %d frames to %s%s\n", res.track.num_frames(),
              out_path.c_str(),
              res.stopped_early ? "" : " (hit the decode cap)");
  return 0;
}

int CmdEvaluate(const std::string &converted, const std::string &reference,
                const std::string &manifest, const std::string &converted_dir,
                const std::string &csv_path, const std::string &report_path) {
  json report;
  report["version"] = kVersionString;
  Warnings warn;

  if (!converted.empty()) {
    if (reference.empty() || !manifest.empty() || !converted_dir.empty())
      throw std::runtime_error(
          "evaluate needs either --converted/--reference or "
          "--manifest/--converted-dir");
    FeatureTrack conv = ReadTrack(converted);
    FeatureTrack ref = ReadTrack(reference);
    double mcd = Mcd(conv, ref, &warn);
    double f0 = F0Rmse(conv, ref, &warn);
    std::printf("mcd: %.4f dB\nf0 rmse: %.4f Hz\n", mcd, f0);
    report["mcd"] = mcd;
    report["f0_rmse"] = f0;
  } else {
    if (manifest.empty() || converted_dir.empty())
      throw std::runtime_error(
          "evaluate needs either --converted/--reference or "
          "--manifest/--converted-dir");
    PhonemeInventory inventory;
    std::vector<ManifestEntry> entries = ReadManifest(manifest);
    if (entries.empty())
      throw std::runtime_error(manifest + ": manifest lists no pairs");
    json rows = json::array();
    std::string csv_text = "id,mcd,f0_rmse\n";
    double mcd_sum = 0, f0_sum = 0;
    for (const ManifestEntry &entry : entries) {
      UtterancePair pair = LoadPair(entry, &inventory);
      fs::path conv_path = fs::path(converted_dir) / (entry.id + ".trk");
      if (!fs::exists(conv_path))
        throw std::runtime_error("no converted track for utterance " +
                                 entry.id + " at " + conv_path.string());
      FeatureTrack conv = ReadTrack(conv_path.string());
      double mcd = Mcd(conv, pair.tgt, &warn);
      double f0 = F0Rmse(conv, pair.tgt, &warn);
      mcd_sum += mcd;
      f0_sum += f0;
      rows.push_back({{"id", entry.id}, {"mcd", mcd}, {"f0_rmse", f0}});
      char line[256];
      std::snprintf(line, sizeof(line), "%s,%.6f,%.6f\n", entry.id.c_str(),
                    mcd, f0);
      csv_text += line;
    }
    const double n = static_cast<double>(entries.size());
    report["utterances"] = entries.size();
    report["mean_mcd"] = mcd_sum / n;
    report["mean_f0_rmse"] = f0_sum / n;
    report["per_utterance"] = rows;
    std::printf("utterances: %zu\nmean mcd: %.4f dB\nmean f0 rmse: %.4f Hz\n",
                entries.size(), mcd_sum / n, f0_sum / n);
    if (!csv_path.empty()) {
      std::ofstream csv(csv_path);
      if (!csv) throw std::runtime_error("cannot write " + csv_path);
      csv << csv_text;
    }
  }

  for (const std::string &msg : warn.messages)
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw std::runtime_error("cannot write " + report_path);
    out << report.dump(2) << "\n";
  }
  return 0;
}

int CmdExperiment(const std::string &corpus_dir, const std::string &out_dir,
                  const std::string &config, std::vector<std::string> modes,
                  std::vector<int> sizes, std::vector<uint64_t> seeds,
                  bool reuse) {
  KeyValueConfig kv = LoadKv(config);
  auto train_pairs =
      LoadManifestPairs((fs::path(corpus_dir) / "train.tsv").string());
  auto val_pairs =
      LoadManifestPairs((fs::path(corpus_dir) / "val.tsv").string());
  auto test_pairs =
      LoadManifestPairs((fs::path(corpus_dir) / "test.tsv").string());

  ExperimentPlan plan;
  if (!modes.empty()) plan.modes = std::move(modes);
  if (!sizes.empty()) plan.sizes = std::move(sizes);
  if (!seeds.empty()) plan.seeds = std::move(seeds);
  plan.reuse = reuse;
  FitFeatureDims(kv, train_pairs, &plan.model);
  FitLabelSpaces(kv, train_pairs, &plan.model);
  ApplyModelConfig(kv, &plan.model);
  ApplyTrainConfig(kv, &plan.train);

  CellRunner runner =
      MakeTrainRunner(plan, train_pairs, val_pairs, test_pairs);
  CellRunner logged = [&](const ExperimentCell &cell,
                          const std::string &run_dir) {
    std::printf("[cell] %s ...\n", cell.Name().c_str());
    std::fflush(stdout);
    CellMetrics m = runner(cell, run_dir);
    std::printf("[cell] %s mcd %.4f f0 %.4f violation %.4f coverage %.4f\n",
                cell.Name().c_str(), m.mcd, m.f0_rmse, m.violation,
                m.coverage);
    std::fflush(stdout);
    return m;
  };
  ExperimentReport report = RunExperiment(plan, logged, out_dir);

  for (const SizeTrend &t : report.trends) {
    std::printf(
        "[size %d] best mcd: %s, best f0: %s; over %d seeds: "
        "mt<=baseline %d, mt-da<=mt %d\n",
        t.size, t.best_mcd_mode.c_str(), t.best_f0_mode.c_str(), t.seeds,
        t.mcd_mt_le_baseline, t.mcd_mtda_le_mt);
  }
  std::printf("report: %s\n",
              (fs::path(out_dir) / "report.json").string().c_str());
  std::printf("table: %s\n",
              (fs::path(out_dir) / "table.csv").string().c_str());
  return 0;
}

int CmdStripClassifiers(const std::string &input, const std::string &output) {
  Checkpoint ckpt = ReadCheckpoint(input);
  size_t before = ckpt.params.Names().size();
  ckpt.StripClassifiers();
  size_t after = ckpt.params.Names().size();
  WriteCheckpoint(output, ckpt);
  std::printf("removed %zu classifier tensors; wrote %s\n", before - after,
              output.c_str());
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"text-supervised sequence-to-sequence voice conversion"};
  app.set_version_flag("--version", kVersionString);
  app.require_subcommand(1);

  auto *gen = app.add_subcommand("gen-synthetic",
                                 "generate the synthetic parallel corpus");
  std::string gen_out, gen_config;
  int gen_train = 0, gen_val = 0, gen_test = 0, gen_seed = -1;
  gen->add_option("--out", gen_out, "output corpus directory")->required();
  gen->add_option("--config", gen_config, "key=value config file");
  gen->add_option("--train", gen_train, "training pairs");
  gen->add_option("--val", gen_val, "validation pairs");
  gen->add_option("--test", gen_test, "test pairs");
  gen->add_option("--seed", gen_seed, "corpus seed");

  auto *aug = app.add_subcommand("augment",
                                 "alignment-point statistics of a manifest");
  std::string aug_manifest;
  bool aug_stats = false;
  aug->add_option("--manifest", aug_manifest, "corpus manifest")->required();
  aug->add_flag("--stats", aug_stats, "print fragment statistics (default)");

  auto *train = app.add_subcommand("train", "train one model");
  std::string tr_manifest, tr_val_manifest, tr_out, tr_mode, tr_config,
      tr_resume;
  int tr_pairs = 0, tr_seed = -1, tr_stop_after = 0;
  bool tr_no_epoch_ckpts = false;
  train->add_option("--manifest", tr_manifest, "training manifest")
      ->required();
  train->add_option("--val-manifest", tr_val_manifest, "validation manifest");
  train->add_option("--out", tr_out, "run directory")->required();
  train->add_option("--mode", tr_mode, "baseline | mt | mt-da");
  train->add_option("--config", tr_config, "key=value config file");
  train->add_option("--pairs", tr_pairs, "use only the first N pairs");
  train->add_option("--seed", tr_seed, "training seed");
  train->add_option("--resume", tr_resume, "checkpoint to resume from");
  train->add_flag("--no-epoch-checkpoints", tr_no_epoch_ckpts,
                  "keep only last.ckpt and best.ckpt");
  train->add_option("--stop-after-epoch", tr_stop_after,
                    "pause the schedule after this epoch");

  auto *conv = app.add_subcommand("convert", "convert one source utterance");
  std::string cv_ckpt, cv_src, cv_bn, cv_out, cv_att;
  conv->add_option("--checkpoint", cv_ckpt, "trained checkpoint")->required();
  conv->add_option("--src", cv_src, "source feature track")->required();
  conv->add_option("--bn", cv_bn, "source bottleneck track")->required();
  conv->add_option("--out", cv_out, "output track path")->required();
  conv->add_option("--attention", cv_att, "write the attention matrix (csv)");

  auto *ev = app.add_subcommand("evaluate", "objective metrics");
  std::string ev_conv, ev_ref, ev_manifest, ev_dir, ev_csv, ev_report;
  ev->add_option("--converted", ev_conv, "one converted track");
  ev->add_option("--reference", ev_ref, "its reference track");
  ev->add_option("--manifest", ev_manifest, "test manifest");
  ev->add_option("--converted-dir", ev_dir, "directory of <id>.trk tracks");
  ev->add_option("--csv", ev_csv, "write per-utterance rows");
  ev->add_option("--report", ev_report, "write a JSON report");

  auto *exp = app.add_subcommand("experiment", "mode x size x seed grid");
  std::string ex_corpus, ex_out, ex_config;
  std::vector<std::string> ex_modes;
  std::vector<int> ex_sizes;
  std::vector<uint64_t> ex_seeds;
  bool ex_reuse = false;
  exp->add_option("--corpus", ex_corpus,
                  "corpus directory with train/val/test.tsv")
      ->required();
  exp->add_option("--out", ex_out, "experiment output directory")->required();
  exp->add_option("--config", ex_config, "key=value config file");
  exp->add_option("--modes", ex_modes, "modes to run")->delimiter(',');
  exp->add_option("--sizes", ex_sizes, "training sizes")->delimiter(',');
  exp->add_option("--seeds", ex_seeds, "training seeds")->delimiter(',');
  exp->add_flag("--reuse", ex_reuse, "score existing runs instead of training");

  auto *strip = app.add_subcommand("strip-classifiers",
                                   "drop auxiliary heads from a checkpoint");
  std::string st_in, st_out;
  strip->add_option("--input", st_in, "checkpoint to read")->required();
  strip->add_option("--output", st_out, "checkpoint to write")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return CmdGenSynthetic(gen_out, gen_config, gen_train, gen_val,
                             gen_test, gen_seed);
    if (aug->parsed()) return CmdAugment(aug_manifest);
    if (train->parsed())
      return CmdTrain(tr_manifest, tr_val_manifest, tr_out, tr_mode,
                      tr_config, tr_pairs, tr_seed, tr_resume,
                      tr_no_epoch_ckpts, tr_stop_after);
    if (conv->parsed())
      return CmdConvert(cv_ckpt, cv_src, cv_bn, cv_out, cv_att);
    if (ev->parsed())
      return CmdEvaluate(ev_conv, ev_ref, ev_manifest, ev_dir, ev_csv,
                         ev_report);
    if (exp->parsed())
      return CmdExperiment(ex_corpus, ex_out, ex_config, ex_modes, ex_sizes,
                           ex_seeds, ex_reuse);
    if (strip->parsed()) return CmdStripClassifiers(st_in, st_out);
  } catch (const std::exception &e) {
    std::fprintf(stderr, "seqvc: %s\n", e.what());
    return 1;
  }
  return 1;
}
