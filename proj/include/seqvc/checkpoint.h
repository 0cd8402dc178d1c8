// checkpoint.h
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
// Binary checkpoint container: magic "SVCK", a JSON config blob, the named
// parameter tensors with their kinds, and an optional training state
// (epoch, step, best validation loss, Adam moments) for exact resumption.

#ifndef SEQVC_CHECKPOINT_H_
#define SEQVC_CHECKPOINT_H_

#include <cstdint>
#include <limits>
#include <map>
#include <string>

#include "seqvc/model.h"

namespace seqvc {

struct Checkpoint {
  std::string config_json;
  ParamStore params;

  bool has_train_state = false;
  int epoch = 0;
  int64_t step = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::map<std::string, Eigen::MatrixXd> adam_m, adam_v;

  // Drops classifier tensors and their optimizer moments. Model-kind and
  // constant tensors are untouched, so conversion cannot change.
  void StripClassifiers();
};

void WriteCheckpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint ReadCheckpoint(const std::string &path);

}  // namespace seqvc

#endif  // SEQVC_CHECKPOINT_H_
