// Copyright 2026 The tilevit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Zero-shot open-vocabulary scoring against precomputed class embeddings,
// pixel-level prediction, mIoU evaluation and PCA feature projection.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tilevit/errors.hpp"
#include "tilevit/tensor.hpp"

namespace tilevit {

struct ClassEmbeddings {
  std::vector<std::string> names;
  std::vector<std::vector<double>> vectors;  // C x d

  std::size_t classes() const { return names.size(); }
  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }

  void validate() const {
    require(!names.empty(), "class embeddings: no classes");
    require(names.size() == vectors.size(),
            "class embeddings: name/vector count mismatch");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < names.size(); ++i) {
      require(seen.insert(names[i]).second,
              "class embeddings: duplicate class '" + names[i] + "'");
      require(vectors[i].size() == dim() && dim() > 0,
              "class embeddings: inconsistent dimension for '" + names[i] + "'");
      for (double v : vectors[i])
        require(std::isfinite(v),
                "class embeddings: non-finite value for '" + names[i] + "'");
    }
  }
};

// Text format: "TVITCLS1 C d", then per class a name line followed by a line
// of d space-separated reals.
inline ClassEmbeddings parse_class_embeddings(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw DataError("class embeddings: empty file");
  std::istringstream hs(header);
  std::string magic;
  long long c = -1, d = -1;
  hs >> magic >> c >> d;
  if (magic != "TVITCLS1" || c <= 0 || d <= 0)
    throw DataError("class embeddings: bad header '" + header + "'");
  ClassEmbeddings out;
  for (long long i = 0; i < c; ++i) {
    std::string name, line;
    if (!std::getline(is, name) || !std::getline(is, line))
      throw DataError("class embeddings: expected " + std::to_string(c) +
                      " classes, file ends after " + std::to_string(i));
    if (!name.empty() && name.back() == '\r') name.pop_back();
    std::istringstream ls(line);
    std::vector<double> v;
    double x = 0.0;
    while (ls >> x) v.push_back(x);
    if (!ls.eof() || v.size() != static_cast<std::size_t>(d))
      throw DataError("class embeddings: class '" + name + "' needs " +
                      std::to_string(d) + " reals");
    out.names.push_back(name);
    out.vectors.push_back(std::move(v));
  }
  try {
    out.validate();
  } catch (const InvalidArgument& e) {
    throw DataError(e.what());
  }
  return out;
}

inline ClassEmbeddings load_class_embeddings(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open class embeddings: " + path);
  return parse_class_embeddings(is);
}

inline void write_class_embeddings(std::ostream& os, const ClassEmbeddings& e) {
  os << "TVITCLS1 " << e.classes() << ' ' << e.dim() << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < e.classes(); ++i) {
    os << e.names[i] << '\n';
    for (std::size_t j = 0; j < e.dim(); ++j)
      os << (j ? " " : "") << e.vectors[i][j];
    os << '\n';
  }
}

// Cosine similarity of every cell against every class: h x w x C.
inline FeatureGrid class_similarities(const FeatureGrid& features,
                                      const ClassEmbeddings& classes,
                                      double epsilon = 1e-12) {
  classes.validate();
  require(features.channels() == classes.dim(),
          "class_similarities: feature dim " +
              std::to_string(features.channels()) +
              " != class embedding dim " + std::to_string(classes.dim()));
  const FeatureGrid v = l2_normalize_channels(features, epsilon);
  std::vector<std::vector<double>> f = classes.vectors;
  for (auto& row : f) {
    double sq = 0.0;
    for (double x : row) sq += x * x;
    const double n = std::sqrt(sq);
    if (n >= epsilon)
      for (double& x : row) x /= n;
  }
  const std::size_t c = classes.classes();
  FeatureGrid out(features.height(), features.width(), c);
  for (std::size_t r = 0; r < v.height(); ++r) {
    for (std::size_t col = 0; col < v.width(); ++col) {
      auto cell = v.cell(r, col);
      auto o = out.cell(r, col);
      for (std::size_t j = 0; j < c; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < cell.size(); ++k) dot += cell[k] * f[j][k];
        o[j] = std::clamp(dot, -1.0, 1.0);
      }
    }
  }
  return out;
}

struct SegMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;  // row-major

  SegMask() = default;
  SegMask(std::size_t h, std::size_t w, std::int32_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {}

  std::int32_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::int32_t at(std::size_t r, std::size_t c) const {
    return labels[r * width + c];
  }
  friend bool operator==(const SegMask&, const SegMask&) = default;
};

// Bilinear up-sampling of the similarity map, then per-pixel argmax with
// ties going to the lowest class index.
inline SegMask predict_mask(const FeatureGrid& sims, std::size_t out_h,
                            std::size_t out_w) {
  const FeatureGrid y = bilinear_resize(sims, out_h, out_w);
  SegMask m(out_h, out_w);
  for (std::size_t r = 0; r < out_h; ++r) {
    for (std::size_t c = 0; c < out_w; ++c) {
      auto v = y.cell(r, c);
      m.at(r, c) = static_cast<std::int32_t>(
          std::max_element(v.begin(), v.end()) - v.begin());
    }
  }
  return m;
}

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes,
                           std::optional<std::int32_t> ignore_index = {})
      : classes_(classes), ignore_(ignore_index), counts_(classes * classes, 0) {
    require(classes > 0, "ConfusionMatrix: need at least one class");
  }

  void add(const SegMask& pred, const SegMask& gt) {
    require(pred.height == gt.height && pred.width == gt.width,
            "miou: prediction " + std::to_string(pred.height) + "x" +
                std::to_string(pred.width) + " vs ground truth " +
                std::to_string(gt.height) + "x" + std::to_string(gt.width));
    const auto c = static_cast<std::int32_t>(classes_);
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      const std::int32_t g = gt.labels[i];
      if (ignore_ && g == *ignore_) continue;
      const std::int32_t p = pred.labels[i];
      if (g < 0 || g >= c)
        throw DataError("miou: ground-truth label " + std::to_string(g) +
                        " outside [0, " + std::to_string(c) + ")");
      if (p < 0 || p >= c)
        throw DataError("miou: predicted label " + std::to_string(p) +
                        " outside [0, " + std::to_string(c) + ")");
      ++counts_[static_cast<std::size_t>(g) * classes_ + static_cast<std::size_t>(p)];
    }
  }

  void merge(const ConfusionMatrix& o) {
    require(o.classes_ == classes_, "ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  std::uint64_t at(std::size_t gt, std::size_t pred) const {
    return counts_[gt * classes_ + pred];
  }
  std::size_t classes() const { return classes_; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

 private:
  std::size_t classes_;
  std::optional<std::int32_t> ignore_;
  std::vector<std::uint64_t> counts_;
};

struct EvalReport {
  std::vector<std::optional<double>> class_iou;  // nullopt: absent everywhere
  double mean_iou = 0.0;
  ConfusionMatrix confusion{1};
  std::vector<double> forward_seconds;  // per image, filled by the evaluator
};

inline EvalReport report_from_confusion(const ConfusionMatrix& cm) {
  EvalReport r;
  r.confusion = cm;
  const std::size_t c = cm.classes();
  r.class_iou.assign(c, std::nullopt);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t uni = row + col - tp;  // TP + FN + FP
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.class_iou[k] = iou;
    sum += iou;
    ++present;
  }
  r.mean_iou = present ? sum / static_cast<double>(present) : 0.0;
  return r;
}

inline EvalReport miou(const std::vector<SegMask>& preds,
                       const std::vector<SegMask>& gts, std::size_t classes,
                       std::optional<std::int32_t> ignore_index = {}) {
  require(preds.size() == gts.size(),
          "miou: " + std::to_string(preds.size()) + " predictions vs " +
              std::to_string(gts.size()) + " ground truths");
  ConfusionMatrix cm(classes, ignore_index);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    try {
      cm.add(preds[i], gts[i]);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("pair " + std::to_string(i) + ": " + e.what());
    }
  }
  return report_from_confusion(cm);
}

// Top three principal directions of a set of feature cells.
struct PcaBasis {
  Eigen::RowVectorXd mean;
  Eigen::Matrix<double, Eigen::Dynamic, 3> directions;  // d x 3, unit columns
  std::array<double, 3> variances{};                     // descending
};

inline PcaBasis fit_pca(const FeatureGrid& basis_source) {
  const std::size_t d = basis_source.channels();
  require(d >= 3, "pca_project: need at least 3 channels, got " + std::to_string(d));

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto n = static_cast<Eigen::Index>(basis_source.cells());
  Eigen::Map<const RowMat> src(basis_source.data(), n, static_cast<Eigen::Index>(d));
  PcaBasis b;
  b.mean = src.colwise().mean();
  const RowMat centered = src.rowwise() - b.mean;
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(std::max<Eigen::Index>(1, n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw DataError("pca_project: eigendecomposition failed");

  // Eigen sorts ascending; take the three largest.
  const Eigen::VectorXd vals = eig.eigenvalues();
  const double top = std::max(vals(vals.size() - 1), 0.0);
  const double tol = std::max(top, 1.0) * 1e-12 * static_cast<double>(d);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (vals(i) > tol) ++rank;
  if (rank < 3)
    throw DataError("pca_project: basis covariance has rank " +
                    std::to_string(rank) + ", need at least 3");

  b.directions.resize(static_cast<Eigen::Index>(d), 3);
  for (int j = 0; j < 3; ++j) {
    const Eigen::Index col = vals.size() - 1 - j;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;  // fixed sign for reproducible colours
    b.directions.col(j) = v;
    b.variances[j] = vals(col);
  }
  return b;
}

// Mean-centred coordinates along the basis directions: h x w x 3.
inline FeatureGrid pca_coordinates(const FeatureGrid& features, const PcaBasis& b) {
  require(static_cast<Eigen::Index>(features.channels()) == b.directions.rows(),
          "pca_project: channel mismatch");
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto m = static_cast<Eigen::Index>(features.cells());
  Eigen::Map<const RowMat> x(features.data(), m, b.directions.rows());
  const RowMat proj = (x.rowwise() - b.mean) * b.directions;
  return FeatureGrid(features.height(), features.width(), 3,
                     std::vector<double>(proj.data(), proj.data() + proj.size()));
}

// Projects features onto the top three principal directions of
// basis_source's cells, then min-max scales each channel to [0, 1].
inline FeatureGrid pca_project(const FeatureGrid& features,
                               const FeatureGrid& basis_source) {
  require(features.channels() == basis_source.channels(),
          "pca_project: channel mismatch");
  FeatureGrid out = pca_coordinates(features, fit_pca(basis_source));
  for (std::size_t j = 0; j < 3; ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < out.cells(); ++i) {
      lo = std::min(lo, out.data()[i * 3 + j]);
      hi = std::max(hi, out.data()[i * 3 + j]);
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < out.cells(); ++i) {
      double& v = out.data()[i * 3 + j];
      v = span > 0.0 ? (v - lo) / span : 0.0;
    }
  }
  return out;
}

}  // namespace tilevit
