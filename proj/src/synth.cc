// synth.cc
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

#include "seqvc/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace seqvc {

namespace {

constexpr uint64_t kBnTableStream = 0x626e5f7461626c65ULL;  // "bn_table"

// Renders one speaker's realization of the token sequence.
struct Rendering {
  FeatureTrack track;
  SegmentSeq lab;
};

Rendering RenderUtterance(const std::vector<PhonemeToken> &tokens,
                          const SpeakerRenderSpec &spec, uint64_t seed,
                          double hop_ms, int inventory_size, int tone_count) {
  const int spec_dim = static_cast<int>(spec.prototypes.cols());
  const int D = spec_dim + 1;  // + pitch channel

  Rng rng(StreamSeed(seed, "render", spec.seed));

  // Realized per-token frame counts; at least two frames per segment so that
  // every silence has an interior midpoint.
  std::vector<int> frames_per_token(tokens.size());
  int total_frames = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    double mean = spec.mean_duration_ms.at(tokens[i].phoneme_id);
    double jitter = spec.duration_jitter * rng.Uniform(-1.0, 1.0);
    double dur_ms = mean * (1.0 + jitter);
    int frames = std::max(2, static_cast<int>(std::lround(dur_ms / hop_ms)));
    frames_per_token[i] = frames;
    total_frames += frames;
  }

  Rendering out;
  out.lab.inventory_size = inventory_size;
  out.lab.tone_count = tone_count;
  int cursor = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    Segment seg;
    seg.start_ms = static_cast<int>(std::lround(cursor * hop_ms));
    cursor += frames_per_token[i];
    seg.end_ms = static_cast<int>(std::lround(cursor * hop_ms));
    seg.phoneme_id = tokens[i].phoneme_id;
    seg.tone_id = tokens[i].tone_id;
    out.lab.segments.push_back(seg);
  }

  // Segment centers in frame coordinates; the spectral trajectory is
  // piecewise linear through (center, prototype) control points.
  std::vector<double> centers(tokens.size());
  {
    int start = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
      centers[i] = start + frames_per_token[i] / 2.0;
      start += frames_per_token[i];
    }
  }

  Eigen::MatrixXd feat(total_frames, D);
  size_t seg_idx = 0;
  int seg_start_frame = 0;
  for (int t = 0; t < total_frames; ++t) {
    while (seg_idx + 1 < tokens.size() &&
           t >= seg_start_frame + frames_per_token[seg_idx]) {
      seg_start_frame += frames_per_token[seg_idx];
      ++seg_idx;
    }
    double x = t + 0.5;
    // Locate the surrounding control points.
    Eigen::VectorXd spectral;
    if (x <= centers.front()) {
      spectral = spec.prototypes.row(tokens.front().phoneme_id);
    } else if (x >= centers.back()) {
      spectral = spec.prototypes.row(tokens.back().phoneme_id);
    } else {
      size_t k = 0;
      while (k + 1 < centers.size() && centers[k + 1] < x) ++k;
      double w = (x - centers[k]) / (centers[k + 1] - centers[k]);
      spectral = (1.0 - w) * spec.prototypes.row(tokens[k].phoneme_id) +
                 w * spec.prototypes.row(tokens[k + 1].phoneme_id);
    }
    for (int d = 0; d < spec_dim; ++d)
      feat(t, d) = spectral(d) + spec.noise_sigma * rng.Normal();

    const PhonemeToken &tok = tokens[seg_idx];
    if (tok.phoneme_id == kSilencePhonemeId) {
      feat(t, D - 1) = 0.0;
    } else {
      double frac =
          (t - seg_start_frame + 0.5) / frames_per_token[seg_idx];
      const ToneContour &tone = spec.tones.at(tok.tone_id);
      double pitch = spec.pitch_base_hz + tone.offset_hz +
                     tone.slope_hz * (frac - 0.5) +
                     spec.noise_sigma * rng.Normal();
      feat(t, D - 1) = std::max(pitch, 1.0);
    }
  }

  out.track.frames = feat.cast<float>();
  out.track.hop_ms = hop_ms;
  return out;
}

}  // namespace

void SpeakerRenderSpec::Validate() const {
  for (double d : mean_duration_ms)
    if (!(d > 0)) throw std::invalid_argument("mean durations must be > 0");
  if (noise_sigma < 0)
    throw std::invalid_argument("noise sigma must be >= 0");
}

Eigen::VectorXd BottleneckEmbedding(int phoneme_id, int dim) {
  Rng rng(StreamSeed(kBnTableStream, "embed", phoneme_id));
  Eigen::VectorXd v(dim);
  for (int d = 0; d < dim; ++d) v(d) = rng.Normal();
  return v;
}

UtterancePair GenSyntheticPair(const std::vector<PhonemeToken> &phoneme_seq,
                               const SpeakerRenderSpec &src_spec,
                               const SpeakerRenderSpec &tgt_spec,
                               uint64_t seed, double hop_ms, int bn_dim,
                               int bn_rate_divisor, double bn_noise_sigma,
                               const std::string &id) {
  if (phoneme_seq.empty())
    throw std::invalid_argument("empty phoneme sequence");
  if (phoneme_seq.front().phoneme_id != kSilencePhonemeId ||
      phoneme_seq.back().phoneme_id != kSilencePhonemeId)
    throw std::invalid_argument(
        "phoneme sequence must begin and end with silence");
  src_spec.Validate();
  tgt_spec.Validate();

  int inventory_size = static_cast<int>(src_spec.prototypes.rows());
  int tone_count = static_cast<int>(src_spec.tones.size());

  UtterancePair pair;
  pair.id = id;
  Rendering src = RenderUtterance(phoneme_seq, src_spec, seed, hop_ms,
                                  inventory_size, tone_count);
  Rendering tgt = RenderUtterance(phoneme_seq, tgt_spec, seed, hop_ms,
                                  inventory_size, tone_count);
  pair.src = std::move(src.track);
  pair.src_lab = std::move(src.lab);
  pair.tgt = std::move(tgt.track);
  pair.tgt_lab = std::move(tgt.lab);

  // Bottleneck features follow the source timing at the coarse rate.
  int T_src = pair.src.num_frames();
  int T_b = (T_src + bn_rate_divisor - 1) / bn_rate_divisor;
  FrameLabels src_frames = MakeFrameLabels(pair.src_lab, hop_ms, T_src);
  Rng bn_rng(StreamSeed(seed, "bn_noise", src_spec.seed));
  Eigen::MatrixXd bn(T_b, bn_dim);
  for (int i = 0; i < T_b; ++i) {
    int frame = std::min(i * bn_rate_divisor, T_src - 1);
    Eigen::VectorXd e = BottleneckEmbedding(src_frames.phoneme[frame], bn_dim);
    for (int d = 0; d < bn_dim; ++d)
      bn(i, d) = e(d) + bn_noise_sigma * bn_rng.Normal();
  }
  pair.src_bn.frames = bn.cast<float>();
  pair.src_bn.rate_divisor = bn_rate_divisor;

  pair.Validate();
  return pair;
}

PhonemeInventory MakeInventory(const CorpusConfig &config) {
  PhonemeInventory inv;
  for (int p = 1; p <= config.phonemes; ++p) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%02d", p);
    inv.GetOrAdd(buf);
  }
  inv.NoteTone(config.tones);
  return inv;
}

SpeakerRenderSpec MakeSpeakerSpec(const CorpusConfig &config,
                                  uint64_t speaker_stream, double pitch_base) {
  Rng rng(speaker_stream);
  SpeakerRenderSpec spec;
  int P = config.phonemes + 1;
  int spec_dim = config.feat_dim - 1;
  spec.prototypes.resize(P, spec_dim);
  // Silence sits in a low-energy band, phonemes elsewhere.
  for (int d = 0; d < spec_dim; ++d)
    spec.prototypes(0, d) = rng.Uniform(0.08, 0.25);
  for (int p = 1; p < P; ++p)
    for (int d = 0; d < spec_dim; ++d)
      spec.prototypes(p, d) = rng.Uniform(0.3, 2.5);
  spec.mean_duration_ms.resize(P);
  spec.mean_duration_ms[0] = rng.Uniform(config.sil_dur_lo_ms,
                                         config.sil_dur_hi_ms);
  for (int p = 1; p < P; ++p)
    spec.mean_duration_ms[p] =
        rng.Uniform(config.phone_dur_lo_ms, config.phone_dur_hi_ms);
  spec.duration_jitter = config.duration_jitter;
  spec.pitch_base_hz = pitch_base;
  spec.tones.resize(config.tones + 1);
  spec.tones[0] = ToneContour{0.0, 0.0};
  for (int t = 1; t <= config.tones; ++t) {
    spec.tones[t].offset_hz = rng.Uniform(-15.0, 40.0);
    spec.tones[t].slope_hz = rng.Uniform(-60.0, 60.0);
  }
  spec.noise_sigma = config.noise_sigma;
  spec.seed = speaker_stream;
  return spec;
}

std::vector<PhonemeToken> GenPhonemeSequence(const CorpusConfig &config,
                                             Rng *rng) {
  double u = rng->Uniform();
  int clauses = 1;
  double acc = 0.0;
  for (size_t i = 0; i < config.clause_probs.size(); ++i) {
    acc += config.clause_probs[i];
    if (u < acc) {
      clauses = static_cast<int>(i) + 1;
      break;
    }
    if (i + 1 == config.clause_probs.size()) clauses = static_cast<int>(i) + 1;
  }
  std::vector<PhonemeToken> tokens;
  tokens.push_back({kSilencePhonemeId, kNoToneId});
  for (int c = 0; c < clauses; ++c) {
    int len = config.min_phones_per_clause +
              static_cast<int>(rng->Below(config.max_phones_per_clause -
                                          config.min_phones_per_clause + 1));
    for (int i = 0; i < len; ++i) {
      PhonemeToken tok;
      tok.phoneme_id = 1 + static_cast<int>(rng->Below(config.phonemes));
      tok.tone_id = 1 + static_cast<int>(rng->Below(config.tones));
      tokens.push_back(tok);
    }
    tokens.push_back({kSilencePhonemeId, kNoToneId});
  }
  return tokens;
}

std::vector<UtterancePair> GenerateCorpusPairs(const CorpusConfig &config,
                                               uint64_t stream, int count,
                                               const std::string &prefix) {
  SpeakerRenderSpec src_spec = MakeSpeakerSpec(
      config, StreamSeed(config.seed, "speaker", 0), config.src_pitch_base_hz);
  if (config.src_proto_shrink != 1.0) {
    Eigen::RowVectorXd mean =
        src_spec.prototypes.bottomRows(config.phonemes).colwise().mean();
    for (int p = 1; p <= config.phonemes; ++p)
      src_spec.prototypes.row(p) =
          mean + config.src_proto_shrink * (src_spec.prototypes.row(p) - mean);
  }
  SpeakerRenderSpec tgt_spec = MakeSpeakerSpec(
      config, StreamSeed(config.seed, "speaker", 1), config.tgt_pitch_base_hz);
  std::vector<UtterancePair> pairs;
  pairs.reserve(count);
  for (int i = 0; i < count; ++i) {
    uint64_t pair_seed = StreamSeed(config.seed, "pair", stream, i);
    Rng seq_rng(StreamSeed(pair_seed, "sequence"));
    std::vector<PhonemeToken> tokens = GenPhonemeSequence(config, &seq_rng);
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s%04d", prefix.c_str(), i);
    pairs.push_back(GenSyntheticPair(tokens, src_spec, tgt_spec, pair_seed,
                                     config.hop_ms, config.bn_dim,
                                     config.bn_rate_divisor,
                                     config.bn_noise_sigma, idbuf));
  }
  return pairs;
}

CorpusStats CollectStats(const std::vector<UtterancePair> &pairs) {
  CorpusStats stats;
  stats.pairs = static_cast<int>(pairs.size());
  long long total = 0;
  for (const UtterancePair &p : pairs) {
    int n = 0;
    for (const Segment &s : p.src_lab.segments)
      if (s.is_silence()) ++n;
    total += n;
    if (n >= static_cast<int>(stats.alignment_point_histogram.size()))
      stats.alignment_point_histogram.resize(n + 1, 0);
    stats.alignment_point_histogram[n]++;
  }
  if (stats.pairs > 0)
    stats.mean_alignment_points = static_cast<double>(total) / stats.pairs;
  return stats;
}

CorpusStats GenerateCorpusFiles(const CorpusConfig &config,
                                const std::string &out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "data");
  PhonemeInventory inventory = MakeInventory(config);

  auto emit = [&](const std::string &split, int count,
                  uint64_t stream) -> std::vector<UtterancePair> {
    std::vector<UtterancePair> pairs =
        GenerateCorpusPairs(config, stream, count, split + "_");
    std::vector<ManifestEntry> entries;
    for (const UtterancePair &p : pairs) {
      std::string base = "data/" + p.id;
      ManifestEntry e;
      e.id = p.id;
      e.src_track = base + ".src.trk";
      e.tgt_track = base + ".tgt.trk";
      e.src_lab = base + ".src.lab";
      e.tgt_lab = base + ".tgt.lab";
      e.src_bn = base + ".bn.trk";
      fs::path root(out_dir);
      WriteTrack((root / e.src_track).string(), p.src);
      WriteTrack((root / e.tgt_track).string(), p.tgt);
      WriteLabFile((root / e.src_lab).string(), p.src_lab, inventory);
      WriteLabFile((root / e.tgt_lab).string(), p.tgt_lab, inventory);
      FeatureTrack bn;
      bn.frames = p.src_bn.frames;
      bn.hop_ms = config.hop_ms * p.src_bn.rate_divisor;
      WriteTrack((root / e.src_bn).string(), bn);
      entries.push_back(std::move(e));
    }
    WriteManifest((fs::path(out_dir) / (split + ".tsv")).string(), entries);
    return pairs;
  };

  std::vector<UtterancePair> train = emit("train", config.n_train, 0);
  emit("val", config.n_val, 1);
  emit("test", config.n_test, 2);

  CorpusStats stats = CollectStats(train);
  nlohmann::json j;
  j["pairs"] = stats.pairs;
  j["mean_alignment_points"] = stats.mean_alignment_points;
  j["alignment_point_histogram"] = stats.alignment_point_histogram;
  j["feat_dim"] = config.feat_dim;
  j["bn_dim"] = config.bn_dim;
  j["phonemes"] = config.phonemes;
  j["tones"] = config.tones;
  j["seed"] = config.seed;
  std::ofstream os(fs::path(out_dir) / "stats.json");
  os << j.dump(2) << "\n";
  return stats;
}

}  // namespace seqvc
