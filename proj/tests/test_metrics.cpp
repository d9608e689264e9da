// SPDX-License-Identifier: Apache-2.0
#include "ltr/metrics.hpp"
#include "test_support.hpp"

using namespace ltr;
using ltr::testing::random_matrix;

TEST(Top1, CountsExactMatches) {
  EXPECT_EQ(top1_accuracy(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}), 1.0);
  EXPECT_EQ(top1_accuracy(std::vector<int>{0, 0}, std::vector<int>{1, 1}), 0.0);
  EXPECT_EQ(top1_accuracy(std::vector<int>{0, 1, 2, 3}, std::vector<int>{0, 1, 2, 0}), 0.75);
  EXPECT_THROW(top1_accuracy(std::vector<int>{}, std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW(top1_accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), std::invalid_argument);
}

TEST(Argmax, FirstMaximumWins) {
  Matrix l(2, 3);
  l << 0.1, 0.5, 0.5, -1, -2, -3;
  EXPECT_EQ(argmax_rows(l), (std::vector<int>{1, 0}));
}

TEST(Grouped, SingleGroupEqualsOverall) {
  const std::vector<int> counts{500, 400, 300};
  const std::vector<int> pred{0, 1, 1, 2, 0, 2};
  const std::vector<int> lab{0, 1, 2, 2, 1, 2};
  const auto g = grouped_accuracy(pred, lab, group_classes(counts));
  ASSERT_TRUE(g.many);
  EXPECT_EQ(*g.many, top1_accuracy(pred, lab));
  EXPECT_FALSE(g.medium);
  EXPECT_FALSE(g.few);
}

TEST(Grouped, IndependentGroupsAndRecomposition) {
  // class 0 many, class 1 medium, class 2 few
  const std::vector<int> counts{200, 50, 5};
  const auto groups = group_classes(counts);
  const std::vector<int> lab{0, 0, 0, 1, 1, 2, 2, 2, 2};
  const std::vector<int> pred{0, 0, 0, 0, 2, 2, 1, 2, 0};
  const auto g = grouped_accuracy(pred, lab, groups);
  EXPECT_EQ(*g.many, 1.0);
  EXPECT_EQ(*g.medium, 0.0);
  EXPECT_EQ(*g.few, 0.5);
  const double recomposed = (3 * *g.many + 2 * *g.medium + 4 * *g.few) / 9.0;
  EXPECT_NEAR(recomposed, top1_accuracy(pred, lab), 1e-12);
}

TEST(Grouped, RandomRecomposition) {
  std::mt19937_64 rng(1);
  const std::vector<int> counts{300, 120, 90, 40, 19, 3};
  const auto groups = group_classes(counts);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> pred(200), lab(200);
    for (std::size_t i = 0; i < 200; ++i) {
      lab[i] = static_cast<int>(rng() % 6);
      pred[i] = rng() % 3 == 0 ? static_cast<int>(rng() % 6) : lab[i];
    }
    const auto g = grouped_accuracy(pred, lab, groups);
    auto n_of = [&](const std::vector<int> &m) {
      return static_cast<double>(std::count_if(lab.begin(), lab.end(), [&](int y) {
        return std::find(m.begin(), m.end(), y) != m.end();
      }));
    };
    const double rec = (*g.many * n_of(groups.many) + *g.medium * n_of(groups.medium) +
                        *g.few * n_of(groups.few)) /
                       200.0;
    EXPECT_NEAR(rec, top1_accuracy(pred, lab), 1e-12);
  }
}

TEST(Icd, HandComputedAndIdenticalFeatures) {
  Matrix f(5, 2);
  f << 0, 0, 2, 0, 7, 7, 7, 7, 7, 7;
  const auto r = intra_class_distance(f, std::vector<int>{0, 0, 1, 1, 1}, 3);
  EXPECT_DOUBLE_EQ(*r.per_class[0], 1.0);
  EXPECT_EQ(*r.per_class[1], 0.0);
  EXPECT_FALSE(r.per_class[2]);
  EXPECT_DOUBLE_EQ(r.average, 0.5);
  EXPECT_THROW(intra_class_distance(Matrix(0, 2), std::vector<int>{}, 2), std::invalid_argument);
}

TEST(Icd, TranslationRotationAndScale) {
  std::mt19937_64 rng(2);
  const Matrix f = random_matrix(40, 5, rng);
  std::vector<int> y(40);
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = static_cast<int>(i % 4);
  const auto base = intra_class_distance(f, y, 4);
  const Matrix shift = f.rowwise() + random_matrix(1, 5, rng, 10.0).row(0);
  const Eigen::HouseholderQR<Matrix> qr(random_matrix(5, 5, rng));
  const Matrix q = qr.householderQ();
  const auto shifted = intra_class_distance(shift, y, 4);
  const auto rotated = intra_class_distance(f * q, y, 4);
  const auto scaled = intra_class_distance(2.5 * f, y, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_GE(*base.per_class[c], 0.0);
    EXPECT_NEAR(*shifted.per_class[c], *base.per_class[c], 1e-12);
    EXPECT_NEAR(*rotated.per_class[c], *base.per_class[c], 1e-12);
    EXPECT_NEAR(*scaled.per_class[c], 2.5 * *base.per_class[c], 1e-12);
  }
}

TEST(Report, JsonRoundTripAndValidation) {
  Matrix logits(4, 3), feats(4, 2);
  logits << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0;
  feats << 0, 0, 2, 0, 1, 1, 3, 3;
  const std::vector<int> lab{0, 1, 2, 2};
  const auto r = make_report(logits, feats, lab, {200, 50, 5}, 3);
  EXPECT_EQ(r.overall_top1, 0.75);
  EXPECT_EQ(*r.group_top1.few, 0.5);
  const auto j = to_json(r);
  EXPECT_EQ(validate_report_json(j), "");
  EXPECT_EQ(to_json(report_from_json(j)), j);
  EXPECT_EQ(r.eval_counts, (std::vector<int>{1, 1, 2}));

  auto bad = j;
  bad["overall_top1"] = 1.5;
  EXPECT_NE(validate_report_json(bad), "");
  bad = j;
  bad.erase("avg_icd");
  EXPECT_NE(validate_report_json(bad), "");
  bad = j;
  bad["group_top1"]["tail"] = 0.2;
  EXPECT_NE(validate_report_json(bad), "");
}

TEST(Report, EmptyGroupIsAbsentNotZero) {
  Matrix logits = Matrix::Identity(2, 2), feats = Matrix::Zero(2, 2);
  const auto j = to_json(make_report(logits, feats, std::vector<int>{0, 1}, {500, 300}, 0));
  EXPECT_TRUE(j["group_top1"].contains("many"));
  EXPECT_FALSE(j["group_top1"].contains("medium"));
  EXPECT_FALSE(j["group_top1"].contains("few"));
}

TEST(IcdTable, RendersReferenceRow) {
  MetricsReport r;
  r.train_counts = {5000, 2997, 1796, 1077, 645, 387, 232, 139, 83, 50};
  for (double v : {1.50, 2.72, 1.40, 1.45, 1.05, 1.39, 0.97, 1.08, 1.02, 1.32})
    r.per_class_icd.push_back(v);
  r.avg_icd = 1.39;
  const std::string t = icd_table(r, "ICD with RSG");
  EXPECT_EQ(t, "| Label | 0 | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | AVG. |\n"
               "|---|---|---|---|---|---|---|---|---|---|---|---|\n"
               "| Sample Size | 5000 | 2997 | 1796 | 1077 | 645 | 387 | 232 | 139 | 83 | 50 |  |\n"
               "| ICD with RSG | 1.50 | 2.72 | 1.40 | 1.45 | 1.05 | 1.39 | 0.97 | 1.08 | 1.02 | 1.32 | 1.39 |\n");
}
