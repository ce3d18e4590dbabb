#include "diffrec/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "diffrec/errors.hpp"

namespace diffrec {

namespace {

constexpr char kMagic[4] = {'D', 'R', 'T', '1'};
constexpr int kFormatVersion = 1;

void write_doubles(std::ofstream& out, const std::vector<double>& v) {
  static_assert(sizeof(double) == 8);
  // Little-endian byte order regardless of host.
  for (double d : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
  }
}

void read_doubles(std::ifstream& in, std::vector<double>& v) {
  for (double& d : v) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    std::memcpy(&d, &bits, 8);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const std::map<std::string, std::string>& meta) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["adam_step"] = store.step();
  nlohmann::json meta_json = nlohmann::json::object();
  for (const auto& [k, v] : meta) meta_json[k] = v;
  header["meta"] = meta_json;
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const std::vector<double>*> payloads;
  for (const auto& [name, e] : store.entries()) {
    const char* kinds[] = {"p:", "m:", "v:"};
    const DenseMatrix* mats[] = {&e.value, &e.m, &e.v};
    for (int i = 0; i < 3; ++i) {
      tensors.push_back({{"name", kinds[i] + name},
                         {"rows", mats[i]->rows},
                         {"cols", mats[i]->cols}});
      payloads.push_back(&mats[i]->data);
    }
  }
  header["tensors"] = tensors;
  std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  std::uint64_t hlen = hs.size();
  unsigned char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>(hlen >> (8 * i));
  out.write(reinterpret_cast<const char*>(lenbuf), 8);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto* p : payloads) write_doubles(out, *p);
  if (!out) throw DataError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not a checkpoint file: " + path);
  unsigned char lenbuf[8];
  in.read(reinterpret_cast<char*>(lenbuf), 8);
  std::uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= static_cast<std::uint64_t>(lenbuf[i]) << (8 * i);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
  if (header.is_discarded()) throw DataError("bad checkpoint header: " + path);
  if (header.value("format_version", -1) != kFormatVersion)
    throw DataError("unsupported checkpoint format version in " + path);

  Checkpoint ck;
  ck.store.set_step(header.value("adam_step", 0L));
  for (auto it = header["meta"].begin(); it != header["meta"].end(); ++it)
    ck.meta[it.key()] = it.value().get<std::string>();
  for (const auto& t : header["tensors"]) {
    std::string full = t["name"].get<std::string>();
    int rows = t["rows"].get<int>();
    int cols = t["cols"].get<int>();
    if (full.size() < 3 || full[1] != ':')
      throw DataError("bad tensor name in checkpoint: " + full);
    std::string name = full.substr(2);
    if (!ck.store.has(name)) ck.store.add(name, rows, cols);
    auto& e = ck.store.entry(name);
    DenseMatrix* target = nullptr;
    switch (full[0]) {
      case 'p': target = &e.value; break;
      case 'm': target = &e.m; break;
      case 'v': target = &e.v; break;
      default: throw DataError("bad tensor kind in checkpoint: " + full);
    }
    *target = DenseMatrix(rows, cols);
    read_doubles(in, target->data);
  }
  if (!in) throw DataError("truncated checkpoint payload: " + path);
  return ck;
}

}  // namespace diffrec
