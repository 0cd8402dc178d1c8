// cli_test.cc
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
// Smoke test of the seqvc command-line tool. argv[1] is the binary path.
// Exercises the full workflow on a micro corpus and checks exit codes,
// outputs and determinism end to end.

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

int g_failures = 0;
std::string g_bin;

void Check(bool ok, const std::string &what) {
  if (!ok) {
    std::printf("FAILED: %s\n", what.c_str());
    g_failures++;
  }
}

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult Run(const std::string &args) {
  std::string cmd = g_bin + " " + args + " 2>&1";
  FILE *pipe = popen(cmd.c_str(), "r");
  RunResult res;
  if (!pipe) return res;
  std::array<char, 4096> buf;
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0)
    res.output.append(buf.data(), n);
  int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string ReadFile(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char **argv) {
  if (argc < 2) {
    std::printf("usage: cli_test <seqvc binary>\n");
    return 2;
  }
  g_bin = argv[1];

  fs::path root = fs::temp_directory_path() / "seqvc_cli_test";
  fs::remove_all(root);
  fs::create_directories(root);
  fs::path corpus = root / "corpus";
  fs::path cfg_path = root / "micro.cfg";

  {
    std::ofstream cfg(cfg_path);
    cfg << "# micro corpus and model for the CLI smoke test\n"
        << "corpus.n_train = 6\n"
        << "corpus.n_val = 2\n"
        << "corpus.n_test = 2\n"
        << "corpus.feat_dim = 8\n"
        << "corpus.bn_dim = 3\n"
        << "corpus.phonemes = 6\n"
        << "corpus.tones = 3\n"
        << "corpus.max_phones_per_clause = 3\n"
        << "corpus.sil_dur_lo_ms = 30\n"
        << "corpus.sil_dur_hi_ms = 60\n"
        << "corpus.phone_dur_lo_ms = 40\n"
        << "corpus.phone_dur_hi_ms = 80\n"
        << "corpus.seed = 5\n"
        << "model.encoder_hidden = 16\n"
        << "model.attn_rnn_size = 16\n"
        << "model.decoder_rnn_size = 16\n"
        << "model.attn_dim = 8\n"
        << "model.attn_filters = 3\n"
        << "model.attn_kernel = 5\n"
        << "model.prenet_hidden = 8\n"
        << "model.postnet_channels = 6\n"
        << "model.postnet_layers = 2\n"
        << "model.postnet_kernel = 3\n"
        << "train.warm_epochs = 2\n"
        << "train.extra_epochs = 1\n";
  }

  {  // --version and bad usage
    RunResult r = Run("--version");
    Check(r.exit_code == 0 && !r.output.empty(), "--version exits 0");
    r = Run("no-such-command");
    Check(r.exit_code != 0, "unknown subcommand exits nonzero");
    r = Run("convert");
    Check(r.exit_code != 0, "convert without arguments exits nonzero");
  }

  {  // gen-synthetic
    RunResult r = Run("gen-synthetic --out " + corpus.string() + " --config " +
                      cfg_path.string());
    Check(r.exit_code == 0, "gen-synthetic exits 0: " + r.output);
    for (const char *leaf : {"train.tsv", "val.tsv", "test.tsv", "stats.json"})
      Check(fs::exists(corpus / leaf), std::string("corpus has ") + leaf);
  }

  {  // augment --stats
    RunResult r =
        Run("augment --manifest " + (corpus / "train.tsv").string() +
            " --stats");
    Check(r.exit_code == 0, "augment exits 0: " + r.output);
    Check(r.output.find("pairs") != std::string::npos,
          "augment prints pair count");
  }

  fs::path run_a = root / "run_a", run_b = root / "run_b";
  {  // train twice with the same seed
    std::string train_args =
        "train --manifest " + (corpus / "train.tsv").string() +
        " --val-manifest " + (corpus / "val.tsv").string() + " --config " +
        cfg_path.string() + " --mode mt --seed 3";
    RunResult a = Run(train_args + " --out " + run_a.string());
    Check(a.exit_code == 0, "train run A exits 0: " + a.output);
    RunResult b = Run(train_args + " --out " + run_b.string());
    Check(b.exit_code == 0, "train run B exits 0: " + b.output);
    Check(fs::exists(run_a / "best.ckpt"), "train writes best.ckpt");
    Check(fs::exists(run_a / "metrics.jsonl"), "train writes metrics.jsonl");
    Check(ReadFile(run_a / "metrics.jsonl") ==
              ReadFile(run_b / "metrics.jsonl"),
          "training logs identical across same-seed runs");
  }

  // One test utterance's source track and bottleneck, straight from the
  // manifest the generator wrote.
  std::string src_trk, src_bn;
  {
    std::ifstream in(corpus / "test.tsv");
    std::string line;
    Check(static_cast<bool>(std::getline(in, line)), "test manifest non-empty");
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    Check(cols.size() >= 6, "manifest row has 6 columns");
    src_trk = (corpus / cols[1]).string();
    src_bn = (corpus / cols[5]).string();
  }

  fs::path out1 = root / "conv1.trk", out2 = root / "conv2.trk";
  {  // convert, twice, plus attention dump
    std::string conv_args = "convert --checkpoint " +
                            (run_a / "best.ckpt").string() + " --src " +
                            src_trk + " --bn " + src_bn;
    RunResult r = Run(conv_args + " --out " + out1.string() +
                      " --attention " + (root / "attn.csv").string());
    Check(r.exit_code == 0, "convert exits 0: " + r.output);
    Check(r.output.find("wrote") != std::string::npos,
          "convert reports frame count");
    RunResult r2 = Run(conv_args + " --out " + out2.string());
    Check(r2.exit_code == 0, "second convert exits 0");
    Check(ReadFile(out1) == ReadFile(out2),
          "converted tracks byte-identical across runs");
    Check(fs::exists(root / "attn.csv"), "attention CSV written");
  }

  {  // evaluate: single pair and batch with CSV + JSON report
    RunResult r = Run("evaluate --converted " + out1.string() +
                      " --reference " + src_trk);
    Check(r.exit_code == 0, "single evaluate exits 0: " + r.output);
    Check(r.output.find("mcd") != std::string::npos, "evaluate prints mcd");

    fs::path conv_dir = root / "converted";
    fs::create_directories(conv_dir);
    std::ifstream in(corpus / "test.tsv");
    std::string line;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::vector<std::string> cols;
      std::string col;
      while (std::getline(ss, col, '\t')) cols.push_back(col);
      RunResult c = Run("convert --checkpoint " +
                        (run_a / "best.ckpt").string() + " --src " +
                        (corpus / cols[1]).string() + " --bn " +
                        (corpus / cols[5]).string() + " --out " +
                        (conv_dir / (cols[0] + ".trk")).string());
      Check(c.exit_code == 0, "batch convert exits 0");
    }
    fs::path report = root / "report.json", csv = root / "eval.csv";
    RunResult b = Run("evaluate --manifest " + (corpus / "test.tsv").string() +
                      " --converted-dir " + conv_dir.string() + " --csv " +
                      csv.string() + " --report " + report.string());
    Check(b.exit_code == 0, "batch evaluate exits 0: " + b.output);
    auto doc = nlohmann::json::parse(ReadFile(report));
    Check(doc.at("utterances").get<int>() == 2, "report counts 2 utterances");
    Check(doc.at("mean_mcd").get<double>() > 0, "report mean_mcd positive");
    std::string csv_text = ReadFile(csv);
    Check(csv_text.rfind("id,mcd,f0_rmse", 0) == 0, "csv header row");
  }

  {  // strip-classifiers, then convert must agree bitwise
    fs::path stripped = root / "stripped.ckpt";
    RunResult r = Run("strip-classifiers --input " +
                      (run_a / "best.ckpt").string() + " --output " +
                      stripped.string());
    Check(r.exit_code == 0, "strip-classifiers exits 0: " + r.output);
    fs::path out3 = root / "conv3.trk";
    RunResult c = Run("convert --checkpoint " + stripped.string() + " --src " +
                      src_trk + " --bn " + src_bn + " --out " + out3.string());
    Check(c.exit_code == 0, "convert from stripped checkpoint exits 0");
    Check(ReadFile(out1) == ReadFile(out3),
          "stripped checkpoint converts identically");
  }

  {  // resume reproduces the uninterrupted run
    fs::path run_c = root / "run_c";
    std::string train_args =
        "train --manifest " + (corpus / "train.tsv").string() +
        " --val-manifest " + (corpus / "val.tsv").string() + " --config " +
        cfg_path.string() + " --mode mt --seed 3 --out " + run_c.string();
    RunResult first = Run(train_args + " --stop-after-epoch 2");
    Check(first.exit_code == 0, "partial train exits 0: " + first.output);
    RunResult second =
        Run(train_args + " --resume " + (run_c / "epoch_002.ckpt").string());
    Check(second.exit_code == 0, "resumed train exits 0: " + second.output);
    Check(ReadFile(run_c / "metrics.jsonl") ==
              ReadFile(run_a / "metrics.jsonl"),
          "resumed log equals uninterrupted log");
  }

  {  // experiment on a micro grid
    fs::path exp = root / "exp";
    RunResult r = Run("experiment --corpus " + corpus.string() + " --out " +
                      exp.string() + " --config " + cfg_path.string() +
                      " --modes baseline,mt --sizes 2 --seeds 1");
    Check(r.exit_code == 0, "experiment exits 0: " + r.output);
    Check(fs::exists(exp / "report.json") && fs::exists(exp / "table.csv"),
          "experiment writes report.json and table.csv");
    Check(r.output.find("best mcd") != std::string::npos,
          "experiment prints the trend summary");
  }

  {  // error paths
    RunResult r = Run("convert --checkpoint " + (root / "nope.ckpt").string() +
                      " --src " + src_trk + " --bn " + src_bn + " --out " +
                      (root / "x.trk").string());
    Check(r.exit_code != 0 && r.output.find("seqvc:") != std::string::npos,
          "missing checkpoint reports an error");
    RunResult e = Run("evaluate --manifest " + (corpus / "test.tsv").string() +
                      " --converted-dir " + (root / "empty").string());
    Check(e.exit_code != 0, "missing conversions exit nonzero");
  }

  if (g_failures == 0) std::printf("cli_test: all checks passed\n");
  return g_failures == 0 ? 0 : 1;
}
