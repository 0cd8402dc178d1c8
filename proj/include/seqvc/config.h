// config.h
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
// UTF-8 `key = value` configuration files: one assignment per line, `#`
// comments, later assignments win.

#ifndef SEQVC_CONFIG_H_
#define SEQVC_CONFIG_H_

#include <map>
#include <string>

namespace seqvc {

class KeyValueConfig {
 public:
  static KeyValueConfig FromString(const std::string &text);
  static KeyValueConfig FromFile(const std::string &path);

  bool Has(const std::string &key) const;
  std::string GetString(const std::string &key,
                        const std::string &fallback) const;
  int GetInt(const std::string &key, int fallback) const;
  double GetDouble(const std::string &key, double fallback) const;
  // Accepts true/false/1/0/yes/no/on/off.
  bool GetBool(const std::string &key, bool fallback) const;

  const std::map<std::string, std::string> &entries() const {
    return values_;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace seqvc

#endif  // SEQVC_CONFIG_H_
