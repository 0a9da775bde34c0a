#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "semba/embedding.hpp"
#include "semba/flow.hpp"
#include "semba/geometry.hpp"

namespace semba::io {

// Binary tensors are little-endian. Headers are an 8-byte magic followed by
// u32 dimensions.
//   SEMB0001  K, H, W, then K*H*W f32, channel-major
//   SFLW0001  H, W, then H*W*2 f32 flow (row-major, u before v), H*W f32 conf
//   SDSP0001  H, W, then H*W f32
//   SMSK0001  H, W, then H*W u8
//   SPCA0001  K, D, then mean K f64, components D*K f64 (row-major),
//             eigenvalues D f64
//   SMAP0001  N, D, then per point: id u32, xyz 3 f64, code D f32

void write_embedding(const std::filesystem::path& path, const EmbeddingMap& map);
EmbeddingMap read_embedding(const std::filesystem::path& path);

void write_flow(const std::filesystem::path& path, const FlowObservation& obs);
FlowObservation read_flow(const std::filesystem::path& path);

void write_disparity(const std::filesystem::path& path, const DisparityMap& d);
DisparityMap read_disparity(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const Grid<unsigned char>& m);
Grid<unsigned char> read_mask(const std::filesystem::path& path);

void write_codec(const std::filesystem::path& path, const PcaCodec& codec);
PcaCodec read_codec(const std::filesystem::path& path);

struct MapPoint {
  std::uint32_t id = 0;
  Vec3 position = Vec3::Zero();
  Eigen::VectorXf code;
};

void write_map(const std::filesystem::path& path,
               const std::vector<MapPoint>& points);
std::vector<MapPoint> read_map(const std::filesystem::path& path);

/// Whitespace-separated floats; '#' starts a comment.
Eigen::VectorXd read_query(const std::filesystem::path& path);
void write_query(const std::filesystem::path& path, const Eigen::VectorXd& q);

}  // namespace semba::io
