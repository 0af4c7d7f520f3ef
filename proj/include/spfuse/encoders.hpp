// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <vector>

#include "spfuse/nn.hpp"
#include "spfuse/projection.hpp"

namespace spfuse {

struct EncoderConfig {
  int d_hidden = 64;
  int n_blocks_3d = 3;
  int n_heads = 4;
  double voxel_size = 0.2;
  int patch_size_2d = 8;
  bool freeze_2d = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (d_hidden <= 0) throw ValidationError("encoder.d_hidden: must be positive");
    if (n_heads <= 0 || d_hidden % n_heads != 0)
      throw ValidationError("encoder.n_heads: must divide d_hidden");
    if (n_blocks_3d < 0) throw ValidationError("encoder.n_blocks_3d: must be >= 0");
    if (!(voxel_size > 0.0)) throw ValidationError("encoder.voxel_size: must be positive");
    if (patch_size_2d <= 0) throw ValidationError("encoder.patch_size_2d: must be positive");
  }
};

struct VoxelGrid {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, 3> occupied_voxel_coords;  // M x 3
  std::vector<int> point_to_voxel;                                       // N

  Eigen::Index n_voxels() const { return occupied_voxel_coords.rows(); }
};

// floor(point / voxel_size) per axis; occupied voxels are stored in
// lexicographic coordinate order, which makes the grid independent of the
// input point order.
inline VoxelGrid voxelize(const Points& points, double voxel_size) {
  if (!(voxel_size > 0.0)) throw ValidationError("voxelize: voxel_size must be positive");
  const Eigen::Index n = points.rows();
  std::vector<std::array<std::int64_t, 3>> coords(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a)
      coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(a)] =
          static_cast<std::int64_t>(std::floor(points(i, a) / voxel_size));
  std::vector<std::array<std::int64_t, 3>> uniq = coords;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  VoxelGrid g;
  g.occupied_voxel_coords.resize(static_cast<Eigen::Index>(uniq.size()), 3);
  for (std::size_t m = 0; m < uniq.size(); ++m)
    for (int a = 0; a < 3; ++a)
      g.occupied_voxel_coords(static_cast<Eigen::Index>(m), a) =
          uniq[m][static_cast<std::size_t>(a)];
  g.point_to_voxel.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto it = std::lower_bound(uniq.begin(), uniq.end(),
                                     coords[static_cast<std::size_t>(i)]);
    g.point_to_voxel[static_cast<std::size_t>(i)] =
        static_cast<int>(it - uniq.begin());
  }
  return g;
}

// Occupied voxels among the 3x3x3 stencil, self excluded.
inline std::vector<std::vector<int>> voxel_neighbor_lists(const VoxelGrid& g) {
  std::map<std::array<std::int64_t, 3>, int> index;
  const Eigen::Index m = g.n_voxels();
  for (Eigen::Index v = 0; v < m; ++v)
    index[{g.occupied_voxel_coords(v, 0), g.occupied_voxel_coords(v, 1),
           g.occupied_voxel_coords(v, 2)}] = static_cast<int>(v);
  std::vector<std::vector<int>> nbrs(static_cast<std::size_t>(m));
  for (Eigen::Index v = 0; v < m; ++v) {
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const auto it = index.find({g.occupied_voxel_coords(v, 0) + dx,
                                      g.occupied_voxel_coords(v, 1) + dy,
                                      g.occupied_voxel_coords(v, 2) + dz});
          if (it != index.end())
            nbrs[static_cast<std::size_t>(v)].push_back(it->second);
        }
  }
  return nbrs;
}

inline constexpr int kPointFeatureDim = 5;  // voxel-relative offset, z, range

// Hand-off features for the 3D encoder: position within the voxel plus
// absolute height and range cues. Pure geometry, no gradient path.
inline MatXd point_input_features(const Points& points, const VoxelGrid& g,
                                  double voxel_size) {
  MatXd f(points.rows(), kPointFeatureDim);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int v = g.point_to_voxel[static_cast<std::size_t>(i)];
    for (int a = 0; a < 3; ++a) {
      const double center =
          (static_cast<double>(g.occupied_voxel_coords(v, a)) + 0.5) * voxel_size;
      f(i, a) = (points(i, a) - center) / voxel_size;
    }
    f(i, 3) = points(i, 2);
    f(i, 4) = 0.1 * points.row(i).norm();
  }
  return f;
}

// --- parameter construction -------------------------------------------------

inline constexpr int kBlocks2d = 2;

template <class S>
void init_encoder2d_params(ParamBundle<S>& b, const EncoderConfig& cfg, int image_h,
                           int image_w, Rng rng) {
  cfg.validate();
  if (image_h % cfg.patch_size_2d != 0 || image_w % cfg.patch_size_2d != 0)
    throw ValidationError("encode_image: image size not divisible by patch_size_2d");
  const int d = cfg.d_hidden;
  const int cells = (image_h / cfg.patch_size_2d) * (image_w / cfg.patch_size_2d);
  init::linear(b, rng, "enc2d.patch", cfg.patch_size_2d * cfg.patch_size_2d * 3, d);
  b.add("enc2d.pos", init::gauss<S>(rng, cells, d, 0.02));
  for (int blk = 0; blk < kBlocks2d; ++blk) {
    const std::string p = "enc2d.b" + std::to_string(blk);
    init::layer_norm(b, p + ".ln1", d);
    b.add(p + ".attn.wq", init::glorot<S>(rng, d, d));
    b.add(p + ".attn.wk", init::glorot<S>(rng, d, d));
    b.add(p + ".attn.wv", init::glorot<S>(rng, d, d));
    b.add(p + ".attn.wo", init::glorot<S>(rng, d, d));
    init::layer_norm(b, p + ".ln2", d);
    init::linear(b, rng, p + ".mlp.fc1", d, 2 * d);
    init::linear(b, rng, p + ".mlp.fc2", 2 * d, d);
  }
  init::layer_norm(b, "enc2d.lnf", d);
}

template <class S>
void init_head2d_params(ParamBundle<S>& b, const EncoderConfig& cfg, Rng rng) {
  init::linear(b, rng, "head2d.fc", cfg.d_hidden, cfg.d_hidden);
  init::layer_norm(b, "head2d.ln", cfg.d_hidden);
}

template <class S>
void init_encoder3d_params(ParamBundle<S>& b, const EncoderConfig& cfg, Rng rng) {
  cfg.validate();
  const int d = cfg.d_hidden;
  init::linear(b, rng, "enc3d.embed", kPointFeatureDim, d);
  for (int blk = 0; blk < cfg.n_blocks_3d; ++blk) {
    const std::string p = "enc3d.b" + std::to_string(blk);
    b.add(p + ".conv.wself", init::glorot<S>(rng, d, d));
    b.add(p + ".conv.wnbr", init::glorot<S>(rng, d, d));
    b.add(p + ".conv.b", MatX<S>::Zero(1, d));
    init::layer_norm(b, p + ".ln", d);
    b.add(p + ".attn.wq", init::glorot<S>(rng, d, d));
    b.add(p + ".attn.wk", init::glorot<S>(rng, d, d));
    b.add(p + ".attn.wv", init::glorot<S>(rng, d, d));
    b.add(p + ".attn.wo", init::glorot<S>(rng, d, d));
  }
  init::linear(b, rng, "enc3d.out", 2 * d, d);
}

// --- tape forwards ----------------------------------------------------------

// Unfolds the image into per-patch rows: raster order over patches, and
// within a patch raster order over pixels with channels innermost.
template <class S>
MatX<S> patchify(const MatX<S>& image, int image_h, int image_w, int patch) {
  if (image.rows() != static_cast<Eigen::Index>(image_h) * image_w ||
      image.cols() != 3)
    throw ValidationError("encode_image: image must be (H*W) x 3");
  if (image_h % patch != 0 || image_w % patch != 0)
    throw ValidationError("encode_image: image size not divisible by patch_size_2d");
  const int gh = image_h / patch, gw = image_w / patch;
  MatX<S> out(static_cast<Eigen::Index>(gh) * gw, patch * patch * 3);
  for (int cy = 0; cy < gh; ++cy)
    for (int cx = 0; cx < gw; ++cx) {
      const Eigen::Index row = static_cast<Eigen::Index>(cy) * gw + cx;
      Eigen::Index col = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px) {
          const Eigen::Index pix =
              static_cast<Eigen::Index>(cy * patch + py) * image_w + cx * patch + px;
          for (int ch = 0; ch < 3; ++ch) out(row, col++) = image(pix, ch);
        }
    }
  return out;
}

template <class S>
Var<S> encode_image_t(Tape<S>& t, const TapeParams<S>& p, const MatX<S>& image,
                      int image_h, int image_w, const EncoderConfig& cfg) {
  cfg.validate();
  Var<S> x = constant(t, patchify(image, image_h, image_w, cfg.patch_size_2d));
  x = linear_t(p, "enc2d.patch", x);
  x = add(x, p.at("enc2d.pos"));
  for (int blk = 0; blk < kBlocks2d; ++blk) {
    const std::string pre = "enc2d.b" + std::to_string(blk);
    x = add(x, mhsa_t(p, pre + ".attn", layer_norm_t(p, pre + ".ln1", x), cfg.n_heads));
    Var<S> h = layer_norm_t(p, pre + ".ln2", x);
    h = linear_t(p, pre + ".mlp.fc2", gelu(linear_t(p, pre + ".mlp.fc1", h)));
    x = add(x, h);
  }
  return layer_norm_t(p, "enc2d.lnf", x);
}

template <class S>
Var<S> project_2d_head_t(const TapeParams<S>& p, Var<S> feature_map) {
  return layer_norm_t(p, "head2d.ln", linear_t(p, "head2d.fc", feature_map));
}

template <class S>
struct PointEncodeContext {
  VoxelGrid grid;
  std::vector<std::vector<int>> neighbors;
  MatX<S> input_features;
};

template <class S>
PointEncodeContext<S> build_point_context(const Points& points,
                                          const EncoderConfig& cfg) {
  if (points.rows() < 1) throw ValidationError("encode_points: empty point cloud");
  PointEncodeContext<S> ctx;
  ctx.grid = voxelize(points, cfg.voxel_size);
  ctx.neighbors = voxel_neighbor_lists(ctx.grid);
  ctx.input_features =
      point_input_features(points, ctx.grid, cfg.voxel_size).template cast<S>();
  return ctx;
}

template <class S>
Var<S> encode_points_t(Tape<S>& t, const TapeParams<S>& p,
                       const PointEncodeContext<S>& ctx, const EncoderConfig& cfg) {
  cfg.validate();
  const Eigen::Index m = ctx.grid.n_voxels();
  Var<S> x = gelu(linear_t(p, "enc3d.embed", constant(t, ctx.input_features)));
  Var<S> h = segment_mean_rows(x, ctx.grid.point_to_voxel, m);
  for (int blk = 0; blk < cfg.n_blocks_3d; ++blk) {
    const std::string pre = "enc3d.b" + std::to_string(blk);
    Var<S> conv = matmul(h, p.at(pre + ".conv.wself"));
    conv = add(conv, matmul(neighbor_mean_rows(h, ctx.neighbors),
                            p.at(pre + ".conv.wnbr")));
    conv = gelu(add_rowvec(conv, p.at(pre + ".conv.b")));
    Var<S> attn =
        mhsa_t(p, pre + ".attn", layer_norm_t(p, pre + ".ln", conv), cfg.n_heads);
    h = add(conv, attn);
  }
  Var<S> per_point = gather_rows(h, ctx.grid.point_to_voxel);
  return linear_t(p, "enc3d.out", concat_cols(per_point, x));
}

// --- plain wrappers (public module operations) --------------------------------

template <class S>
MatX<S> encode_image(const std::type_identity_t<MatX<S>>& image, int image_h,
                     int image_w, const EncoderConfig& cfg,
                     const ParamBundle<S>& params) {
  Tape<S> t;
  TapeParams<S> p(t, params, {"enc2d"});
  return encode_image_t(t, p, image, image_h, image_w, cfg).value();
}

template <class S>
MatX<S> project_2d_head(const std::type_identity_t<MatX<S>>& feature_map,
                        const ParamBundle<S>& params) {
  Tape<S> t;
  TapeParams<S> p(t, params, {"head2d"});
  return project_2d_head_t(p, constant(t, feature_map)).value();
}

template <class S>
FeatureMatrix<S> encode_points(const Points& points, const EncoderConfig& cfg,
                               const ParamBundle<S>& params) {
  Tape<S> t;
  TapeParams<S> p(t, params, {"enc3d"});
  const auto ctx = build_point_context<S>(points, cfg);
  FeatureMatrix<S> out;
  out.values = encode_points_t(t, p, ctx, cfg).value();
  out.modality = Modality::M3D;
  out.role = FeatureRole::Raw;
  return out;
}

}  // namespace spfuse
