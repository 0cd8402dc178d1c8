// checkpoint.cc
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

#include "seqvc/checkpoint.h"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace seqvc {

namespace {

constexpr uint32_t kVersion = 1;

void WriteU32(std::ostream &os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char *>(b), 4);
}

void WriteU64(std::ostream &os, uint64_t v) {
  WriteU32(os, static_cast<uint32_t>(v));
  WriteU32(os, static_cast<uint32_t>(v >> 32));
}

void WriteF64(std::ostream &os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  WriteU64(os, bits);
}

void WriteString(std::ostream &os, const std::string &s) {
  WriteU32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void WriteMatrix(std::ostream &os, const Eigen::MatrixXd &m) {
  WriteU32(os, static_cast<uint32_t>(m.rows()));
  WriteU32(os, static_cast<uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) WriteF64(os, m(r, c));
}

uint32_t ReadU32(std::istream &is, const std::string &path,
                 const char *what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char *>(b), 4))
    throw std::runtime_error(path + ": truncated reading " +
                             std::string(what));
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint64_t ReadU64(std::istream &is, const std::string &path,
                 const char *what) {
  uint64_t lo = ReadU32(is, path, what);
  uint64_t hi = ReadU32(is, path, what);
  return lo | (hi << 32);
}

double ReadF64(std::istream &is, const std::string &path, const char *what) {
  uint64_t bits = ReadU64(is, path, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string ReadString(std::istream &is, const std::string &path,
                       const char *what) {
  uint32_t n = ReadU32(is, path, what);
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n))
    throw std::runtime_error(path + ": truncated reading " +
                             std::string(what));
  return s;
}

Eigen::MatrixXd ReadMatrix(std::istream &is, const std::string &path,
                           const char *what) {
  uint32_t rows = ReadU32(is, path, what);
  uint32_t cols = ReadU32(is, path, what);
  Eigen::MatrixXd m(rows, cols);
  for (uint32_t r = 0; r < rows; ++r)
    for (uint32_t c = 0; c < cols; ++c) m(r, c) = ReadF64(is, path, what);
  return m;
}

}  // namespace

void Checkpoint::StripClassifiers() {
  for (const std::string &name : params.Names()) {
    if (params.Kind(name) != ParamKind::kClassifier) continue;
    adam_m.erase(name);
    adam_v.erase(name);
  }
  params.RemoveClassifiers();
}

void WriteCheckpoint(const std::string &path, const Checkpoint &ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("SVCK", 4);
  WriteU32(os, kVersion);
  WriteString(os, ckpt.config_json);

  WriteU32(os, static_cast<uint32_t>(ckpt.params.size()));
  for (const std::string &name : ckpt.params.Names()) {
    WriteString(os, name);
    os.put(static_cast<char>(ckpt.params.Kind(name)));
    WriteMatrix(os, ckpt.params.Get(name));
  }

  os.put(ckpt.has_train_state ? 1 : 0);
  if (ckpt.has_train_state) {
    WriteU32(os, static_cast<uint32_t>(ckpt.epoch));
    WriteU64(os, static_cast<uint64_t>(ckpt.step));
    WriteF64(os, ckpt.best_val);
    WriteU32(os, static_cast<uint32_t>(ckpt.adam_m.size()));
    for (const auto &[name, m] : ckpt.adam_m) {
      auto it = ckpt.adam_v.find(name);
      if (it == ckpt.adam_v.end())
        throw std::logic_error("optimizer moments out of sync for " + name);
      WriteString(os, name);
      WriteMatrix(os, m);
      WriteMatrix(os, it->second);
    }
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

Checkpoint ReadCheckpoint(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SVCK", 4) != 0)
    throw std::runtime_error(path + ": bad magic, not a checkpoint file");
  uint32_t version = ReadU32(is, path, "version");
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));

  Checkpoint ckpt;
  ckpt.config_json = ReadString(is, path, "config");
  uint32_t count = ReadU32(is, path, "tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = ReadString(is, path, "tensor name");
    int kind_byte = is.get();
    if (kind_byte < 0)
      throw std::runtime_error(path + ": truncated reading tensor kind");
    if (kind_byte > static_cast<int>(ParamKind::kConstant))
      throw std::runtime_error(path + ": unknown tensor kind for " + name);
    Eigen::MatrixXd m = ReadMatrix(is, path, name.c_str());
    ckpt.params.Create(name, static_cast<int>(m.rows()),
                       static_cast<int>(m.cols()),
                       static_cast<ParamKind>(kind_byte)) = m;
  }

  int flag = is.get();
  if (flag < 0) throw std::runtime_error(path + ": truncated at train state");
  if (flag == 1) {
    ckpt.has_train_state = true;
    ckpt.epoch = static_cast<int>(ReadU32(is, path, "epoch"));
    ckpt.step = static_cast<int64_t>(ReadU64(is, path, "step"));
    ckpt.best_val = ReadF64(is, path, "best validation loss");
    uint32_t moments = ReadU32(is, path, "moment count");
    for (uint32_t i = 0; i < moments; ++i) {
      std::string name = ReadString(is, path, "moment name");
      ckpt.adam_m[name] = ReadMatrix(is, path, "first moment");
      ckpt.adam_v[name] = ReadMatrix(is, path, "second moment");
    }
  }
  return ckpt;
}

}  // namespace seqvc
