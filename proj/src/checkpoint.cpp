#include "mtlvc/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "mtlvc/config.hpp"
#include "mtlvc/error.hpp"

namespace mtlvc::ckpt {

namespace {

constexpr char kMagic[4] = {'M', 'T', 'L', 'C'};

template <typename T>
void Put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void PutString(std::ostream& os, const std::string& s) {
  Put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void PutMatrix(std::ostream& os, const Matrix& m) {
  os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename T>
  T get() {
    T v{};
    read(&v, sizeof(T));
    return v;
  }

  std::string string() {
    const auto n = get<std::uint64_t>();
    if (n > (1ULL << 30)) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    read(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
    return m;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::kFormat, path_ + ": " + what);
  }

 private:
  void read(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("truncated checkpoint");
  }

  std::istream& is_;
  std::string path_;
};

}  // namespace

void WriteCheckpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::kIo, "cannot write checkpoint " + path.string());
    os.write(kMagic, 4);
    Put<std::uint32_t>(os, kCheckpointVersion);
    PutString(os, ModelConfigToJson(c.model).dump());
    PutString(os, c.train_config_json);
    Put<std::int64_t>(os, c.step);
    PutString(os, c.rng_state);
    Put<std::uint32_t>(os, static_cast<std::uint32_t>(c.arrays.size()));
    for (const auto& a : c.arrays) {
      PutString(os, a.name);
      Put<std::uint32_t>(os, static_cast<std::uint32_t>(a.value.rows()));
      Put<std::uint32_t>(os, static_cast<std::uint32_t>(a.value.cols()));
      PutMatrix(os, a.value);
      const bool has_adam = a.adam.m.size() == a.value.size();
      Put<std::uint8_t>(os, has_adam ? 1 : 0);
      if (has_adam) {
        PutMatrix(os, a.adam.m);
        PutMatrix(os, a.adam.v);
      }
      Put<std::int64_t>(os, a.adam.steps);
    }
    if (!os) throw Error(ErrorCode::kIo, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint ReadCheckpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot read checkpoint " + path.string());
  Reader r(is, path.string());
  char magic[4];
  for (char& ch : magic) ch = r.get<char>();
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("not a checkpoint (bad magic)");
  if (r.get<std::uint32_t>() != kCheckpointVersion) r.fail("unsupported checkpoint version");
  Checkpoint c;
  try {
    c.model = ModelConfigFromJson(json::parse(r.string()));
  } catch (const json::exception& e) {
    r.fail(std::string("bad model config: ") + e.what());
  }
  c.train_config_json = r.string();
  c.step = r.get<std::int64_t>();
  c.rng_state = r.string();
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.string();
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    a.value = r.matrix(rows, cols);
    if (r.get<std::uint8_t>() != 0) {
      a.adam.m = r.matrix(rows, cols);
      a.adam.v = r.matrix(rows, cols);
    }
    a.adam.steps = r.get<std::int64_t>();
    c.arrays.push_back(std::move(a));
  }
  return c;
}

void RestoreParameters(const Checkpoint& c, ad::ParameterStore& store) {
  std::set<std::string> seen;
  for (const auto& a : c.arrays) {
    if (!store.contains(a.name)) throw Error(ErrorCode::kFormat, "checkpoint has unexpected parameter " + a.name);
    auto& p = store.get(a.name);
    if (p.value.rows() != a.value.rows() || p.value.cols() != a.value.cols())
      throw Error(ErrorCode::kFormat, "shape mismatch for parameter " + a.name);
    if (!seen.insert(a.name).second) throw Error(ErrorCode::kFormat, "duplicate parameter " + a.name);
  }
  for (const auto& name : store.names()) {
    if (!seen.count(name)) throw Error(ErrorCode::kFormat, "checkpoint is missing parameter " + name);
  }
  for (const auto& a : c.arrays) store.get(a.name).value = a.value;
}

std::unique_ptr<model::Model> LoadModel(const std::filesystem::path& path) {
  const Checkpoint c = ReadCheckpoint(path);
  auto m = std::make_unique<model::Model>(c.model, 0);
  RestoreParameters(c, m->params());
  return m;
}

}  // namespace mtlvc::ckpt
