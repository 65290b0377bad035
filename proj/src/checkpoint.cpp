#include "tlm/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace tlm {

namespace {

constexpr char kMagic[8] = {'T', 'L', 'M', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = (unsigned char)(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return v;
}

}  // namespace

const Eigen::MatrixXf* CheckpointData::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.data;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& t : data.tensors) {
    dir.push_back({{"name", t.name}, {"rows", t.data.rows()}, {"cols", t.data.cols()}});
  }
  const nlohmann::json header = {
      {"config", data.config}, {"meta", data.meta}, {"tensors", dir}};
  const std::string header_bytes = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(bool(os), "checkpoint: cannot open for writing: " + path.string());
  os.write(kMagic, sizeof kMagic);
  write_u64(os, header_bytes.size());
  os.write(header_bytes.data(), std::streamsize(header_bytes.size()));
  // Payload is float32 in row-major coefficient order, independent of Eigen's
  // storage layout. Little-endian hosts only, matching the build targets.
  std::vector<float> row;
  for (const auto& t : data.tensors) {
    row.resize(std::size_t(t.data.cols()));
    for (Eigen::Index r = 0; r < t.data.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.data.cols(); ++c) row[std::size_t(c)] = t.data(r, c);
      os.write(reinterpret_cast<const char*>(row.data()),
               std::streamsize(sizeof(float) * row.size()));
    }
  }
  require(bool(os), "checkpoint: write failed: " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), "checkpoint: cannot open: " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  require(bool(is) && std::equal(magic, magic + 8, kMagic),
          "checkpoint: bad magic in " + path.string());
  const std::uint64_t header_len = read_u64(is);
  require(bool(is), "checkpoint: truncated header in " + path.string());
  std::string header_bytes(header_len, '\0');
  is.read(header_bytes.data(), std::streamsize(header_len));
  require(bool(is), "checkpoint: truncated header in " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception& e) {
    fail("checkpoint: corrupt header in " + path.string() + ": " + e.what());
  }

  CheckpointData data;
  data.config = header.value("config", nlohmann::json::object());
  data.meta = header.value("meta", nlohmann::json::object());
  std::vector<float> row;
  for (const auto& entry : header.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    require(rows >= 0 && cols >= 0, "checkpoint: negative tensor shape in header");
    t.data.resize(rows, cols);
    row.resize(std::size_t(cols));
    for (Eigen::Index r = 0; r < rows; ++r) {
      is.read(reinterpret_cast<char*>(row.data()),
              std::streamsize(sizeof(float) * row.size()));
      require(bool(is), "checkpoint: truncated tensor '" + t.name + "' in " + path.string());
      for (Eigen::Index c = 0; c < cols; ++c) t.data(r, c) = row[std::size_t(c)];
    }
    data.tensors.push_back(std::move(t));
  }
  return data;
}

}  // namespace tlm
