#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <Eigen/SVD>

#include "oracles.hpp"
#include "unipose/error.hpp"
#include "unipose/tensor.hpp"

using namespace unipose;

namespace {

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
}

FeatureMap map_from_rows(const std::vector<std::vector<float>>& rows, std::string tag) {
  FeatureMap fm = FeatureMap::zeros(1, std::uint32_t(rows.size()), std::uint32_t(rows[0].size()), 1,
                                    std::uint32_t(rows.size()), 1, std::move(tag));
  for (std::size_t p = 0; p < rows.size(); ++p)
    for (std::size_t c = 0; c < rows[p].size(); ++c) fm.patch(p)[c] = rows[p][c];
  return fm;
}

std::uint64_t format_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_tensor(bytes);
  } catch (const FormatError& e) {
    return e.byte_offset();
  }
  ADD_FAILURE() << "expected a format error";
  return ~0ull;
}

}  // namespace

TEST(Tensor, WritesAndReadsSmallTensor) {
  oracle::TempDir dir("tensor");
  write_tensor(Tensor({2, 2}, {1, 2, 3, 4}), dir / "t.uftn");
  const Tensor t = read_tensor(dir / "t.uftn");
  EXPECT_EQ(t.shape(), (std::vector<std::uint32_t>{2, 2}));
  EXPECT_EQ(std::vector<float>(t.data().begin(), t.data().end()), (std::vector<float>{1, 2, 3, 4}));

  const auto bytes = file_bytes(dir / "t.uftn");
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 2 * 4u + 4 * 4u);
  EXPECT_EQ(std::memcmp(bytes.data(), "UFTN", 4), 0);
  EXPECT_EQ(bytes[4], 1);   // version
  EXPECT_EQ(bytes[8], 2);   // ndims
  EXPECT_EQ(bytes[12], 2);
  EXPECT_EQ(bytes[16], 2);
}

TEST(Tensor, RejectsBadMagicWithOffset) {
  oracle::TempDir dir("tensor");
  auto bytes = encode_tensor(Tensor({2, 2}, {1, 2, 3, 4}));
  std::memcpy(bytes.data(), "XXXX", 4);
  write_bytes(dir / "bad.uftn", bytes);
  try {
    read_tensor(dir / "bad.uftn");
    FAIL() << "bad magic accepted";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_EQ(e.byte_offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("bad.uftn"), std::string::npos);
  }
}

TEST(Tensor, ReportsOffsetsOfMalformedHeadersAndPayloads) {
  const auto good = encode_tensor(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));

  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  EXPECT_EQ(format_offset(truncated), truncated.size());

  auto version = good;
  version[4] = 7;
  EXPECT_EQ(format_offset(version), 4u);

  auto zero_dim = good;
  std::memset(zero_dim.data() + 16, 0, 4);
  EXPECT_EQ(format_offset(zero_dim), 16u);

  auto overflow = good;
  overflow[8] = 4;  // four dims of 0xffffffff
  overflow.resize(12);
  for (int i = 0; i < 16; ++i) overflow.push_back(0xff);
  EXPECT_GE(format_offset(overflow), 12u);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(format_offset(trailing), good.size());

  auto nan = good;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 20 + 8, &q, 4);
  EXPECT_EQ(format_offset(nan), 28u);

  EXPECT_EQ(format_offset({'U', 'F'}), 0u);
}

TEST(Tensor, RandomRoundTripsAreBitwiseIdentical) {
  oracle::TempDir dir("tensor");
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> nd(1, 4), dim(1, 6);
  std::normal_distribution<float> val(0.0f, 100.0f);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::uint32_t> shape(nd(rng));
    for (auto& d : shape) d = dim(rng);
    std::vector<float> data(element_count(shape));
    for (auto& v : data) v = val(rng);
    const Tensor t(shape, data);
    const auto path = dir / "r.uftn";
    write_tensor(t, path);
    const Tensor back = read_tensor(path);
    ASSERT_EQ(back.shape(), t.shape());
    ASSERT_EQ(std::memcmp(back.data().data(), t.data().data(), 4 * t.size()), 0);
    ASSERT_EQ(file_bytes(path), encode_tensor(back));
  }
}

TEST(Tensor, ConstructorRejectsInconsistentData) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), Error);
  EXPECT_THROW(Tensor({0, 2}), Error);
  EXPECT_THROW(Tensor({1}, {std::nanf("")}), Error);
}

TEST(FeatureMapFile, SidecarRoundTrip) {
  oracle::TempDir dir("fm");
  std::mt19937_64 rng(3);
  FeatureMap fm = oracle::random_feature_map(rng, 4, 5, 7, 0.2, false);
  fm.patch_size_px = 14;
  fm.image_w_px = 70;
  fm.image_h_px = 56;
  fm.source_tag = "dinov2";
  write_feature_map(fm, dir / "f.uftn");
  EXPECT_TRUE(std::filesystem::exists(dir / "f.json"));
  const FeatureMap back = read_feature_map(dir / "f.uftn");
  EXPECT_EQ(back.grid_h, 4u);
  EXPECT_EQ(back.grid_w, 5u);
  EXPECT_EQ(back.channels, 7u);
  EXPECT_EQ(back.patch_size_px, 14u);
  EXPECT_EQ(back.image_w_px, 70u);
  EXPECT_EQ(back.image_h_px, 56u);
  EXPECT_EQ(back.source_tag, "dinov2");
  EXPECT_EQ(back.values, fm.values);
}

TEST(FeatureMapFile, MissingSidecarAndOversizedGridAreErrors) {
  oracle::TempDir dir("fm");
  write_tensor(Tensor({2, 2, 3}), dir / "g.uftn");
  EXPECT_THROW(read_feature_map(dir / "g.uftn"), Error);

  FeatureMap fm = FeatureMap::zeros(10, 2, 1, 14, 28, 28, "x");
  EXPECT_THROW(validate(fm), Error);
  fm = FeatureMap::zeros(2, 2, 1, 14, 28, 28, "x");
  EXPECT_NO_THROW(validate(fm));
}

TEST(Combine, NormalizesThenConcatenates) {
  const FeatureMap a = map_from_rows({{3, 4}}, "a");
  const FeatureMap b = map_from_rows({{0, 5}}, "b");
  const WeightedMap in[] = {{&a, 1.0}, {&b, 1.0}};
  const FeatureMap out = combine_features(in);
  ASSERT_EQ(out.channels, 4u);
  const float expected[] = {0.6f, 0.8f, 0.0f, 1.0f};
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(out.patch(0)[c], expected[c], 1e-7);
}

TEST(Combine, DefaultWeightsDropFirstExtractor) {
  std::mt19937_64 rng(5);
  FeatureMap d1 = oracle::random_feature_map(rng, 3, 3, 5, 0.0, false);
  FeatureMap d2 = oracle::random_feature_map(rng, 3, 3, 4, 0.0, false);
  FeatureMap sd = oracle::random_feature_map(rng, 3, 3, 6, 0.0, false);
  d1.source_tag = "dinov1";
  d2.source_tag = "dinov2";
  sd.source_tag = "sd";
  const CombineWeights w;
  EXPECT_EQ(w.alpha_d1, 0.0);
  EXPECT_EQ(w.alpha_d2, 0.7);
  EXPECT_EQ(w.alpha_sd, 0.3);
  const std::vector<FeatureMap> maps = {d1, d2, sd};
  const FeatureMap out = combine_features(maps, w);
  EXPECT_EQ(out.channels, d2.channels + sd.channels);
  for (std::size_t p = 0; p < out.num_patches(); ++p) {
    double n2 = 0.0;
    for (float v : out.patch(p)) n2 += double(v) * v;
    EXPECT_NEAR(std::sqrt(n2), std::sqrt(0.7 * 0.7 + 0.3 * 0.3), 1e-6);
  }
}

TEST(Combine, MatchesScalarLoopOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uw(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<FeatureMap> maps;
    std::vector<double> weights;
    for (int m = 0; m < 3; ++m) {
      maps.push_back(oracle::random_feature_map(rng, 4, 3, 2 + m, 0.3, false));
      weights.push_back(m == 1 && trial % 4 == 0 ? 0.0 : uw(rng));
    }
    std::vector<WeightedMap> in;
    for (int m = 0; m < 3; ++m) in.push_back({&maps[m], weights[m]});
    const FeatureMap out = combine_features(in);

    double max_diff = 0.0;
    for (std::size_t p = 0; p < out.num_patches(); ++p) {
      std::size_t off = 0;
      double out_norm_sq = 0.0, weight_sum = 0.0;
      bool all_nonzero = true;
      for (int m = 0; m < 3; ++m) {
        if (weights[m] == 0.0) continue;
        double norm = 0.0;
        for (std::size_t c = 0; c < maps[m].channels; ++c) norm += maps[m].patch(p)[c] * maps[m].patch(p)[c];
        norm = std::sqrt(norm);
        all_nonzero = all_nonzero && norm > 0.0;
        weight_sum += weights[m];
        for (std::size_t c = 0; c < maps[m].channels; ++c) {
          const double expected = norm > 0.0 ? weights[m] * maps[m].patch(p)[c] / norm : 0.0;
          max_diff = std::max(max_diff, std::abs(expected - out.patch(p)[off + c]));
          out_norm_sq += double(out.patch(p)[off + c]) * out.patch(p)[off + c];
        }
        off += maps[m].channels;
      }
      ASSERT_EQ(off, out.channels);
      EXPECT_LE(std::sqrt(out_norm_sq), weight_sum + 1e-6);
      if (all_nonzero) {
        EXPECT_NEAR(std::sqrt(out_norm_sq), std::sqrt([&] {
                      double s = 0.0;
                      for (double w : weights) s += w * w;
                      return s;
                    }()),
                    1e-5);
      }
    }
    EXPECT_LT(max_diff, 1e-6);
  }
}

TEST(Combine, RejectsMismatchedGridsAndEmptySelection) {
  std::mt19937_64 rng(1);
  const FeatureMap a = oracle::random_feature_map(rng, 2, 2, 3, 0.0, false);
  const FeatureMap b = oracle::random_feature_map(rng, 2, 3, 3, 0.0, false);
  const WeightedMap mismatched[] = {{&a, 1.0}, {&b, 1.0}};
  EXPECT_THROW(combine_features(mismatched), Error);
  const WeightedMap none[] = {{&a, 0.0}};
  EXPECT_THROW(combine_features(none), Error);
}

TEST(Pca, PlanarDataReconstructsExactly) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd e1(5), e2(5);
  for (int i = 0; i < 5; ++i) {
    e1[i] = n01(rng);
    e2[i] = n01(rng);
  }
  FeatureMap a = FeatureMap::zeros(4, 4, 5, 1, 4, 4, "a");
  FeatureMap b = FeatureMap::zeros(3, 3, 5, 1, 3, 3, "b");
  for (FeatureMap* fm : {&a, &b})
    for (std::size_t p = 0; p < fm->num_patches(); ++p) {
      const Eigen::VectorXd v = n01(rng) * e1 + n01(rng) * e2;
      for (int c = 0; c < 5; ++c) fm->patch(p)[c] = float(v[c]);
    }
  PcaInfo info;
  const auto [ra, rb] = pca_reduce_pair(a, b, 2, &info);
  ASSERT_EQ(ra.channels, 2u);
  ASSERT_EQ(rb.channels, 2u);
  for (const auto& pair : {std::make_pair(&a, &ra), std::make_pair(&b, &rb)}) {
    for (std::size_t p = 0; p < pair.first->num_patches(); ++p) {
      Eigen::VectorXd y(2);
      for (int k = 0; k < 2; ++k) y[k] = pair.second->patch(p)[k];
      const Eigen::VectorXd rec = info.basis * y;
      for (int c = 0; c < 5; ++c) EXPECT_NEAR(rec[c], pair.first->patch(p)[c], 1e-5);
    }
  }
}

TEST(Pca, ProjectedVarianceMatchesEigenOracle) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureMap a = oracle::random_feature_map(rng, 5, 4, 6, 0.0, false);
    const FeatureMap b = oracle::random_feature_map(rng, 4, 4, 6, 0.0, false);
    const auto [ra, rb] = pca_reduce_pair(a, b, 3);

    // Oracle: singular values of the centred union.
    Eigen::MatrixXd x(a.num_patches() + b.num_patches(), 6);
    Eigen::MatrixXd y(x.rows(), 3);
    Eigen::Index r = 0;
    for (const auto& pr : {std::make_pair(&a, &ra), std::make_pair(&b, &rb)}) {
      for (std::size_t p = 0; p < pr.first->num_patches(); ++p, ++r) {
        for (int c = 0; c < 6; ++c) x(r, c) = pr.first->patch(p)[c];
        for (int c = 0; c < 3; ++c) y(r, c) = pr.second->patch(p)[c];
      }
    }
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(xc).singularValues();
    const double n = double(x.rows());
    const double oracle_var = (sv[0] * sv[0] + sv[1] * sv[1] + sv[2] * sv[2]) / n;
    const double got_var = yc.squaredNorm() / n;
    EXPECT_NEAR(got_var, oracle_var, 1e-6 * std::max(1.0, oracle_var));

    // No other 3-D orthonormal projection keeps more variance.
    for (int k = 0; k < 20; ++k) {
      Eigen::MatrixXd g(6, 3);
      std::normal_distribution<double> n01(0.0, 1.0);
      for (int i = 0; i < 18; ++i) g(i % 6, i / 6) = n01(rng);
      const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(6, 3);
      EXPECT_LE((xc * q).squaredNorm() / n, got_var + 1e-9);
    }
  }
}

TEST(Pca, FullRankReductionIsOrthogonal) {
  std::mt19937_64 rng(4);
  const FeatureMap a = oracle::random_feature_map(rng, 3, 4, 5, 0.2, false);
  const FeatureMap b = oracle::random_feature_map(rng, 4, 3, 5, 0.2, false);
  const auto [ra, rb] = pca_reduce_pair(a, b, 5);
  auto vec = [](const FeatureMap& fm, std::size_t p) {
    Eigen::VectorXd v(fm.channels);
    for (std::size_t c = 0; c < fm.channels; ++c) v[c] = fm.patch(p)[c];
    return v;
  };
  for (std::size_t p = 0; p < a.num_patches(); ++p) {
    for (std::size_t q = 0; q < b.num_patches(); ++q) {
      const Eigen::VectorXd u = vec(a, p), v = vec(b, q), ru = vec(ra, p), rv = vec(rb, q);
      const double d = (u - v).norm(), rd = (ru - rv).norm();
      EXPECT_NEAR(rd, d, 1e-5 * std::max(1.0, d));
      if (u.norm() > 0 && v.norm() > 0) {
        EXPECT_NEAR(ru.dot(rv) / (ru.norm() * rv.norm()), u.dot(v) / (u.norm() * v.norm()), 1e-5);
      }
    }
  }
  // Zero (masked) patches stay zero.
  for (std::size_t p = 0; p < a.num_patches(); ++p)
    if (vec(a, p).norm() == 0.0) EXPECT_EQ(vec(ra, p).norm(), 0.0);
}

TEST(Pca, RankDeficitReducesToRankAndRejectsTooManyDims) {
  FeatureMap a = FeatureMap::zeros(2, 2, 4, 1, 2, 2, "a");
  for (std::size_t p = 0; p < 4; ++p) a.patch(p)[0] = float(p + 1);  // one direction only
  PcaInfo info;
  const auto [ra, rb] = pca_reduce_pair(a, a, 3, &info);
  EXPECT_EQ(info.dims, 1u);
  EXPECT_EQ(ra.channels, 1u);
  EXPECT_THROW(pca_reduce_pair(a, a, 5), Error);
}

TEST(Pca, TypicalDescriptorWidthReducesTo64) {
  std::mt19937_64 rng(8);
  const FeatureMap a = oracle::random_feature_map(rng, 8, 8, 384, 0.0, false);
  const FeatureMap b = oracle::random_feature_map(rng, 8, 8, 384, 0.0, false);
  const auto [ra, rb] = pca_reduce_pair(a, b, 64);
  EXPECT_EQ(ra.channels, 64u);
  EXPECT_EQ(rb.channels, 64u);
}
