#include "semba/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "semba/errors.hpp"

namespace semba::io {

static_assert(std::endian::native == std::endian::little,
              "tensor files are written in host byte order");

namespace {

constexpr std::size_t kMagicLen = 8;
constexpr std::uint32_t kMaxDim = 1u << 20;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path)
      : path_(path), os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  }
  void magic(const char* m) { os_.write(m, kMagicLen); }
  template <typename T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  void put_array(const T* p, std::size_t n) {
    os_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
  }
  void close() {
    os_.flush();
    if (!os_) throw Error(ErrorCode::kIo, "write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream os_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path)
      : path_(path), is_(path, std::ios::binary) {
    if (!is_) throw Error(ErrorCode::kMissingData, "cannot open " + path.string());
  }
  void expect_magic(const char* m) {
    char buf[kMagicLen];
    is_.read(buf, kMagicLen);
    if (!is_ || std::memcmp(buf, m, kMagicLen) != 0) {
      throw Error(ErrorCode::kBadFormat,
                  path_.string() + ": expected header " + std::string(m, kMagicLen));
    }
  }
  template <typename T>
  T get() {
    T v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is_) truncated();
    return v;
  }
  std::uint32_t dim() {
    const auto v = get<std::uint32_t>();
    if (v == 0 || v > kMaxDim) {
      throw Error(ErrorCode::kBadFormat,
                  path_.string() + ": implausible dimension " + std::to_string(v));
    }
    return v;
  }
  template <typename T>
  void get_array(T* p, std::size_t n) {
    is_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is_) truncated();
  }
  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) {
      throw Error(ErrorCode::kBadFormat, path_.string() + ": trailing bytes");
    }
  }

 private:
  [[noreturn]] void truncated() {
    throw Error(ErrorCode::kBadFormat, path_.string() + ": truncated");
  }
  std::filesystem::path path_;
  std::ifstream is_;
};

}  // namespace

void write_embedding(const std::filesystem::path& path, const EmbeddingMap& map) {
  const int K = map.dim(), H = map.height(), W = map.width();
  Writer w(path);
  w.magic("SEMB0001");
  w.put<std::uint32_t>(K);
  w.put<std::uint32_t>(H);
  w.put<std::uint32_t>(W);
  std::vector<float> plane(static_cast<std::size_t>(H) * W);
  for (int k = 0; k < K; ++k) {
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) plane[static_cast<std::size_t>(v) * W + u] = map.at(u, v)[k];
    }
    w.put_array(plane.data(), plane.size());
  }
  w.close();
}

EmbeddingMap read_embedding(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SEMB0001");
  const int K = r.dim(), H = r.dim(), W = r.dim();
  EmbeddingMap map(K, W, H);
  std::vector<float> plane(static_cast<std::size_t>(H) * W);
  for (int k = 0; k < K; ++k) {
    r.get_array(plane.data(), plane.size());
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) map.at(u, v)[k] = plane[static_cast<std::size_t>(v) * W + u];
    }
  }
  r.expect_end();
  return map;
}

void write_flow(const std::filesystem::path& path, const FlowObservation& obs) {
  if (!obs.flow.same_shape(obs.confidence)) {
    throw Error(ErrorCode::kDimensionMismatch, "flow/confidence shape");
  }
  Writer w(path);
  w.magic("SFLW0001");
  w.put<std::uint32_t>(obs.flow.height());
  w.put<std::uint32_t>(obs.flow.width());
  for (const auto& f : obs.flow) {
    w.put(static_cast<float>(f.x()));
    w.put(static_cast<float>(f.y()));
  }
  for (double c : obs.confidence) w.put(static_cast<float>(c));
  w.close();
}

FlowObservation read_flow(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SFLW0001");
  const int H = r.dim(), W = r.dim();
  FlowObservation obs{FlowField(W, H), Grid<double>(W, H)};
  for (auto& f : obs.flow) {
    const float x = r.get<float>();
    const float y = r.get<float>();
    f = Vec2(x, y);
  }
  for (auto& c : obs.confidence) c = r.get<float>();
  r.expect_end();
  return obs;
}

void write_disparity(const std::filesystem::path& path, const DisparityMap& d) {
  Writer w(path);
  w.magic("SDSP0001");
  w.put<std::uint32_t>(d.height());
  w.put<std::uint32_t>(d.width());
  for (double x : d) w.put(static_cast<float>(x));
  w.close();
}

DisparityMap read_disparity(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SDSP0001");
  const int H = r.dim(), W = r.dim();
  DisparityMap d(W, H);
  for (auto& x : d) x = r.get<float>();
  r.expect_end();
  return d;
}

void write_mask(const std::filesystem::path& path, const Grid<unsigned char>& m) {
  Writer w(path);
  w.magic("SMSK0001");
  w.put<std::uint32_t>(m.height());
  w.put<std::uint32_t>(m.width());
  w.put_array(m.data().data(), m.size());
  w.close();
}

Grid<unsigned char> read_mask(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SMSK0001");
  const int H = r.dim(), W = r.dim();
  Grid<unsigned char> m(W, H);
  r.get_array(m.data().data(), m.size());
  r.expect_end();
  return m;
}

void write_codec(const std::filesystem::path& path, const PcaCodec& codec) {
  const int K = codec.input_dim(), D = codec.output_dim();
  Writer w(path);
  w.magic("SPCA0001");
  w.put<std::uint32_t>(K);
  w.put<std::uint32_t>(D);
  w.put_array(codec.mean().data(), K);
  for (int d = 0; d < D; ++d) {
    for (int k = 0; k < K; ++k) w.put(codec.components()(d, k));
  }
  for (int d = 0; d < D; ++d) {
    w.put(d < codec.eigenvalues().size() ? codec.eigenvalues()[d] : 0.0);
  }
  w.close();
}

PcaCodec read_codec(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SPCA0001");
  const int K = r.dim(), D = r.dim();
  if (D > K) throw Error(ErrorCode::kBadFormat, path.string() + ": D > K");
  Eigen::VectorXd mean(K);
  r.get_array(mean.data(), K);
  Eigen::MatrixXd comp(D, K);
  for (int d = 0; d < D; ++d) {
    for (int k = 0; k < K; ++k) comp(d, k) = r.get<double>();
  }
  Eigen::VectorXd eig(D);
  r.get_array(eig.data(), D);
  r.expect_end();
  return PcaCodec(std::move(mean), std::move(comp), std::move(eig));
}

void write_map(const std::filesystem::path& path,
               const std::vector<MapPoint>& points) {
  const int D = points.empty() ? 0 : static_cast<int>(points.front().code.size());
  Writer w(path);
  w.magic("SMAP0001");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(points.size()));
  w.put<std::uint32_t>(D);
  for (const auto& p : points) {
    if (p.code.size() != D) {
      throw Error(ErrorCode::kDimensionMismatch, "map point code length");
    }
    w.put(p.id);
    w.put_array(p.position.data(), 3);
    w.put_array(p.code.data(), D);
  }
  w.close();
}

std::vector<MapPoint> read_map(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SMAP0001");
  const auto n = r.get<std::uint32_t>();
  const auto D = r.get<std::uint32_t>();
  if (D > kMaxDim) throw Error(ErrorCode::kBadFormat, path.string() + ": code length");
  std::vector<MapPoint> out(n);
  for (auto& p : out) {
    p.id = r.get<std::uint32_t>();
    r.get_array(p.position.data(), 3);
    p.code.resize(D);
    r.get_array(p.code.data(), D);
  }
  r.expect_end();
  return out;
}

Eigen::VectorXd read_query(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kMissingData, "cannot open " + path.string());
  std::vector<double> vals;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(ErrorCode::kMalformedLine,
                    path.string() + ":" + std::to_string(lineno) + ": '" + tok + "'");
      }
    }
  }
  if (vals.empty()) throw Error(ErrorCode::kBadFormat, path.string() + ": empty query");
  return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

void write_query(const std::filesystem::path& path, const Eigen::VectorXd& q) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  char buf[32];
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", q[i]);
    os << buf << (i + 1 == q.size() ? '\n' : ' ');
  }
}

}  // namespace semba::io
