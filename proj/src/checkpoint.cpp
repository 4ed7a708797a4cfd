/*
 * Copyright 2026 The microdense authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "microdense/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace microdense {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'N', 'W'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
  Reader(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw Error("checkpoint '" + path_ + "': truncated at byte " +
                  std::to_string(pos_));
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint_file(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, ck.version);
  const std::string meta = ck.meta.dump();
  put_u64(out, meta.size());
  out += meta;
  put_u32(out, static_cast<std::uint32_t>(ck.entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : ck.entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put_u64(out, static_cast<std::uint64_t>(d));
    put_u64(out, offset);
    offset += e.data.size() * sizeof(float);
  }
  put_u64(out, offset);
  for (const auto& e : ck.entries) {
    const std::size_t start = out.size();
    out.resize(start + e.data.size() * sizeof(float));
    std::memcpy(out.data() + start, e.data.data(),
                e.data.size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("checkpoint: short write to '" + path + "'");
}

Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r(buf, path);
  if (r.bytes(4) != std::string(kMagic, 4))
    throw Error("checkpoint '" + path + "': bad magic (want MDNW)");
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1)
    throw Error("checkpoint '" + path + "': unsupported version " +
                std::to_string(ck.version));
  const std::uint64_t meta_len = r.u64();
  ck.meta = nlohmann::json::parse(r.bytes(static_cast<std::size_t>(meta_len)));
  const std::uint32_t count = r.u32();
  struct Pending {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Pending> manifest;
  manifest.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Pending p;
    p.name = r.bytes(r.u32());
    const std::uint32_t ndim = r.u32();
    for (std::uint32_t d = 0; d < ndim; ++d)
      p.shape.push_back(static_cast<std::int64_t>(r.u64()));
    p.offset = r.u64();
    manifest.push_back(std::move(p));
  }
  const std::uint64_t data_len = r.u64();
  const std::string data = r.bytes(static_cast<std::size_t>(data_len));
  for (auto& p : manifest) {
    CheckpointEntry e;
    e.name = std::move(p.name);
    e.shape = std::move(p.shape);
    const std::uint64_t n = static_cast<std::uint64_t>(numel(e.shape));
    if (p.offset + n * sizeof(float) > data.size())
      throw Error("checkpoint '" + path + "': entry '" + e.name +
                  "' overruns the data section");
    e.data.resize(static_cast<std::size_t>(n));
    std::memcpy(e.data.data(), data.data() + p.offset, n * sizeof(float));
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

}  // namespace microdense
