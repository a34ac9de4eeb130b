#include "ditf/correspondence.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ditf/error.hpp"
#include "ditf/forensics.hpp"
#include "ditf/rng.hpp"

namespace ditf {

PairPcaResult pair_pca(const FeatureMap& source, const FeatureMap& target, std::size_t out_dim) {
  const std::size_t C = source.channels();
  if (target.channels() != C) fail(ErrorCode::shape_mismatch, "pair PCA needs equal channel counts");
  const std::size_t N = source.tokens() + target.tokens();
  if (out_dim == 0 || out_dim > std::min(N, C)) {
    fail(ErrorCode::invalid_argument, "out_dim " + std::to_string(out_dim) + " exceeds min(T_A + T_B, C) = " +
                                          std::to_string(std::min(N, C)));
  }

  Eigen::MatrixXd stacked(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(C));
  for (std::size_t t = 0; t < source.tokens(); ++t) {
    for (std::size_t c = 0; c < C; ++c) stacked(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(c)) = source.at(t, c);
  }
  for (std::size_t t = 0; t < target.tokens(); ++t) {
    const auto r = static_cast<Eigen::Index>(source.tokens() + t);
    for (std::size_t c = 0; c < C; ++c) stacked(r, static_cast<Eigen::Index>(c)) = target.at(t, c);
  }
  const Eigen::RowVectorXd mean = stacked.colwise().mean();
  stacked.rowwise() -= mean;
  const Eigen::MatrixXd cov = (stacked.transpose() * stacked) / static_cast<double>(N);
  if (cov.diagonal().maxCoeff() <= 0.0) fail(ErrorCode::degenerate_covariance, "degenerate covariance: all tokens equal");

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorCode::internal, "eigen decomposition did not converge");
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& vectors = solver.eigenvectors();

  std::vector<Eigen::Index> order(C);
  for (std::size_t i = 0; i < C; ++i) order[i] = static_cast<Eigen::Index>(C - 1 - i);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values(a) > values(b); });
  order.resize(out_dim);

  PairPcaResult result;
  result.mean.assign(mean.data(), mean.data() + C);
  result.components.resize(out_dim * C);
  result.eigenvalues.resize(out_dim);
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(out_dim));
  for (std::size_t k = 0; k < out_dim; ++k) {
    Eigen::VectorXd v = vectors.col(order[k]);
    Eigen::Index peak = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
      if (std::fabs(v(i)) > std::fabs(v(peak))) peak = i;
    }
    if (v(peak) < 0.0) v = -v;
    basis.col(static_cast<Eigen::Index>(k)) = v;
    result.eigenvalues[k] = values(order[k]);
    for (std::size_t c = 0; c < C; ++c) result.components[k * C + c] = v(static_cast<Eigen::Index>(c));
  }

  const Eigen::MatrixXd projected = stacked * basis;
  auto make = [&](const FeatureMap& like, std::size_t first_row) {
    std::vector<float> data(like.tokens() * out_dim);
    for (std::size_t t = 0; t < like.tokens(); ++t) {
      for (std::size_t k = 0; k < out_dim; ++k) {
        data[t * out_dim + k] = static_cast<float>(
            projected(static_cast<Eigen::Index>(first_row + t), static_cast<Eigen::Index>(k)));
      }
    }
    return FeatureMap(std::move(data), like.tokens(), out_dim, like.grid(), like.image_size(), like.stage(),
                      like.meta());
  };
  result.source = make(source, 0);
  result.target = make(target, source.tokens());
  return result;
}

namespace {

double norm_of(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

void normalize_into(std::span<const float> in, std::span<float> out) {
  const double n = norm_of(in);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = n > 0.0 ? static_cast<float>(in[i] / n) : 0.0f;
}

}  // namespace

FeatureMap fuse_concat(const FeatureMap& main, const FeatureMap* aux, bool normalize) {
  if (aux == nullptr) return main;
  if (aux->tokens() != main.tokens() || !(aux->grid() == main.grid())) {
    fail(ErrorCode::shape_mismatch, "fusion needs matching token grids; resample first");
  }
  const std::size_t cm = main.channels();
  const std::size_t ca = aux->channels();
  std::vector<float> data(main.tokens() * (cm + ca));
  for (std::size_t t = 0; t < main.tokens(); ++t) {
    std::span<float> dst(data.data() + t * (cm + ca), cm + ca);
    if (normalize) {
      normalize_into(main.row(t), dst.first(cm));
      normalize_into(aux->row(t), dst.last(ca));
    } else {
      std::copy(main.row(t).begin(), main.row(t).end(), dst.begin());
      std::copy(aux->row(t).begin(), aux->row(t).end(), dst.begin() + static_cast<std::ptrdiff_t>(cm));
    }
  }
  return FeatureMap(std::move(data), main.tokens(), cm + ca, main.grid(), main.image_size(), main.stage(),
                    main.meta());
}

namespace {

struct Tap {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double frac = 0.0;
};

// Continuous token coordinate -> the two neighbouring token indices, clamped.
Tap tap_for(double coord, std::size_t count) {
  const double clamped = std::clamp(coord, 0.0, static_cast<double>(count - 1));
  Tap tap;
  tap.lo = static_cast<std::size_t>(std::floor(clamped));
  tap.hi = std::min(tap.lo + 1, count - 1);
  tap.frac = clamped - static_cast<double>(tap.lo);
  return tap;
}

void bilinear_into(const FeatureMap& f, const Tap& ty, const Tap& tx, std::span<float> out) {
  const std::size_t W = f.grid().width;
  const auto r00 = f.row(ty.lo * W + tx.lo);
  const auto r01 = f.row(ty.lo * W + tx.hi);
  const auto r10 = f.row(ty.hi * W + tx.lo);
  const auto r11 = f.row(ty.hi * W + tx.hi);
  const double w00 = (1.0 - ty.frac) * (1.0 - tx.frac);
  const double w01 = (1.0 - ty.frac) * tx.frac;
  const double w10 = ty.frac * (1.0 - tx.frac);
  const double w11 = ty.frac * tx.frac;
  for (std::size_t c = 0; c < f.channels(); ++c) {
    out[c] = static_cast<float>(w00 * r00[c] + w01 * r01[c] + w10 * r10[c] + w11 * r11[c]);
  }
}

}  // namespace

FeatureMap resample_grid(const FeatureMap& feature, Grid new_grid) {
  if (new_grid.height == 0 || new_grid.width == 0) fail(ErrorCode::invalid_argument, "target grid must be >= 1x1");
  if (new_grid == feature.grid()) return feature;
  const Grid old = feature.grid();
  const std::size_t C = feature.channels();
  std::vector<float> data(new_grid.size() * C);
  for (std::size_t i = 0; i < new_grid.height; ++i) {
    const double sy = (static_cast<double>(i) + 0.5) * static_cast<double>(old.height) /
                          static_cast<double>(new_grid.height) - 0.5;
    const Tap ty = tap_for(sy, old.height);
    for (std::size_t j = 0; j < new_grid.width; ++j) {
      const double sx = (static_cast<double>(j) + 0.5) * static_cast<double>(old.width) /
                            static_cast<double>(new_grid.width) - 0.5;
      bilinear_into(feature, ty, tap_for(sx, old.width), std::span<float>(data).subspan((i * new_grid.width + j) * C, C));
    }
  }
  return FeatureMap(std::move(data), new_grid.size(), C, new_grid, feature.image_size(), feature.stage(),
                    feature.meta());
}

std::string_view sample_mode_name(SampleMode mode) {
  return mode == SampleMode::bilinear ? "bilinear" : "nearest";
}

SampleMode parse_sample_mode(std::string_view name) {
  if (name == "nearest" || name == "nearest_token") return SampleMode::nearest_token;
  if (name == "bilinear") return SampleMode::bilinear;
  fail(ErrorCode::invalid_argument, "unknown sample mode '" + std::string(name) + "'");
}

namespace {

void require_in_image(const FeatureMap& f, const Point2& p) {
  if (!point_in_image(p, f.image_size())) {
    fail(ErrorCode::invalid_argument, "point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                                          ") lies outside the " + std::to_string(f.image_size().width) + "x" +
                                          std::to_string(f.image_size().height) + " image");
  }
}

// Nearest center along one axis; ties go to the lower index.
std::size_t nearest_axis(double coord_px, std::size_t count, std::size_t extent_px) {
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) {
    const double center = (static_cast<double>(i) + 0.5) * static_cast<double>(extent_px) / static_cast<double>(count);
    const double dist = std::fabs(coord_px - center);
    if (dist < best_dist) {
      best_dist = dist;
      best = i;
    }
  }
  return best;
}

}  // namespace

std::size_t nearest_token(const FeatureMap& feature, const Point2& point) {
  require_in_image(feature, point);
  const std::size_t r = nearest_axis(point.y, feature.grid().height, feature.image_size().height);
  const std::size_t c = nearest_axis(point.x, feature.grid().width, feature.image_size().width);
  return r * feature.grid().width + c;
}

std::vector<float> sample_descriptor(const FeatureMap& feature, const Point2& point, SampleMode mode) {
  require_in_image(feature, point);
  if (mode == SampleMode::nearest_token) {
    const auto row = feature.row(nearest_token(feature, point));
    return {row.begin(), row.end()};
  }
  const double gx = point.x * static_cast<double>(feature.grid().width) /
                        static_cast<double>(feature.image_size().width) - 0.5;
  const double gy = point.y * static_cast<double>(feature.grid().height) /
                        static_cast<double>(feature.image_size().height) - 0.5;
  std::vector<float> out(feature.channels());
  bilinear_into(feature, tap_for(gy, feature.grid().height), tap_for(gx, feature.grid().width), out);
  return out;
}

DenseMatch match_dense(std::span<const float> descriptor, const FeatureMap& target) {
  if (descriptor.size() != target.channels()) {
    fail(ErrorCode::shape_mismatch, "descriptor length differs from the target channel count");
  }
  const double src_norm = norm_of(descriptor);
  if (src_norm == 0.0) fail(ErrorCode::invalid_argument, "source descriptor is all zeros");

  // Ranking uses dot / |t|; the positive factor 1/|s| cannot change the argmax.
  DenseMatch best;
  double best_key = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t t = 0; t < target.tokens(); ++t) {
    const auto row = target.row(t);
    const double tn = norm_of(row);
    if (tn == 0.0) continue;
    double dot = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) dot += static_cast<double>(descriptor[c]) * row[c];
    const double key = dot / tn;
    if (!found || key > best_key) {
      best_key = key;
      best.token = t;
      found = true;
    }
  }
  if (!found) fail(ErrorCode::invalid_argument, "every target token has zero norm");
  best.score = std::clamp(best_key / src_norm, -1.0, 1.0);
  return best;
}

MatchResult transfer_keypoints(const FeatureMap& source, const FeatureMap& target, const KeypointSet& keypoints,
                               SampleMode mode) {
  if (source.channels() != target.channels()) {
    fail(ErrorCode::shape_mismatch, "source and target feature maps have different channel counts");
  }
  MatchResult result;
  result.target_image = target.image_size();
  for (const auto& p : keypoints.points) {
    const auto desc = sample_descriptor(source, p, mode);
    const DenseMatch m = match_dense(desc, target);
    const auto [x, y] = target.token_center(m.token);
    result.matches.push_back({p, {x, y}, m.token, m.score});
  }
  return result;
}

std::string_view pck_norm_name(PckNorm norm) {
  return norm == PckNorm::bbox_max_side ? "bbox_max_side" : "img_max_side";
}

PckNorm parse_pck_norm(std::string_view name) {
  if (name == "bbox" || name == "bbox_max_side") return PckNorm::bbox_max_side;
  if (name == "img" || name == "image" || name == "img_max_side") return PckNorm::img_max_side;
  fail(ErrorCode::invalid_argument, "unknown PCK normalizer '" + std::string(name) + "'");
}

PckReport pck(std::span<const MatchResult> results, std::span<const KeypointSet> ground_truth,
              std::span<const double> alphas, PckNorm norm) {
  if (results.size() != ground_truth.size()) {
    fail(ErrorCode::invalid_argument, "PCK needs one ground-truth set per prediction set");
  }
  std::vector<double> sides;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].matches.size() != ground_truth[i].points.size()) {
      fail(ErrorCode::invalid_argument, "image " + std::to_string(i) + ": prediction and ground-truth counts differ");
    }
    if (norm == PckNorm::bbox_max_side) {
      if (!ground_truth[i].bbox) fail(ErrorCode::invalid_argument, "image " + std::to_string(i) + " has no bbox");
      sides.push_back(std::max(ground_truth[i].bbox->width, ground_truth[i].bbox->height));
    } else {
      sides.push_back(static_cast<double>(
          std::max(ground_truth[i].image_size.height, ground_truth[i].image_size.width)));
    }
  }
  for (double a : alphas) {
    if (!(a >= 0.0) || !std::isfinite(a)) fail(ErrorCode::invalid_argument, "PCK alpha must be finite and >= 0");
  }

  PckReport report;
  report.norm = norm;
  for (double alpha : alphas) {
    PckLevel level;
    level.alpha = alpha;
    std::size_t correct = 0;
    std::size_t total = 0;
    double fraction_sum = 0.0;
    std::size_t images_with_points = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const double threshold = alpha * sides[i];
      ImageCount count;
      for (std::size_t k = 0; k < results[i].matches.size(); ++k) {
        const auto& pred = results[i].matches[k].target;
        const auto& gt = ground_truth[i].points[k];
        if (std::hypot(pred.x - gt.x, pred.y - gt.y) <= threshold) ++count.correct;
        ++count.total;
      }
      correct += count.correct;
      total += count.total;
      if (count.total > 0) {
        fraction_sum += static_cast<double>(count.correct) / static_cast<double>(count.total);
        ++images_with_points;
      }
      level.images.push_back(count);
    }
    level.pck_per_point = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    level.pck_per_image = images_with_points > 0 ? fraction_sum / static_cast<double>(images_with_points) : 0.0;
    report.levels.push_back(std::move(level));
  }
  return report;
}

PermutationFixture make_permutation_fixture(const PermutationFixtureOptions& options) {
  const std::size_t T = options.grid.size();
  const std::size_t C = options.channels;
  if (T == 0 || C == 0) fail(ErrorCode::invalid_argument, "permutation fixture needs a non-empty grid and C >= 1");
  if (options.massive_dim && *options.massive_dim >= C) fail(ErrorCode::invalid_argument, "massive dim out of range");
  const ImageSize image{options.grid.height * 16, options.grid.width * 16};

  FixtureRng rng(options.seed);
  std::vector<float> src(T * C);
  for (auto& v : src) v = rng.uniform_pm1();
  std::vector<std::size_t> perm(T);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = T; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::vector<float> tgt(T * C);
  for (std::size_t i = 0; i < T; ++i) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * C), C,
                tgt.begin() + static_cast<std::ptrdiff_t>(perm[i] * C));
  }

  PermutationFixture fx;
  fx.source = FeatureMap(std::move(src), T, C, options.grid, image, Stage::original);
  fx.target = FeatureMap(std::move(tgt), T, C, options.grid, image, Stage::original);
  if (options.massive_dim) {
    const double typical = median_abs(fx.source);
    const std::size_t d = *options.massive_dim;
    for (FeatureMap* f : {&fx.source, &fx.target}) {
      for (std::size_t t = 0; t < T; ++t) {
        const double jitter = 1.0 + options.massive_jitter * rng.uniform_pm1();
        f->at(t, d) = static_cast<float>(options.massive_ratio * typical * jitter);
      }
    }
  }
  fx.permutation = perm;
  fx.source_keypoints.image_size = image;
  fx.target_keypoints.image_size = image;
  for (std::size_t i = 0; i < T; ++i) {
    const auto [sx, sy] = fx.source.token_center(i);
    const auto [tx, ty] = fx.target.token_center(perm[i]);
    fx.source_keypoints.points.push_back({sx, sy});
    fx.target_keypoints.points.push_back({tx, ty});
  }
  return fx;
}

}  // namespace ditf
