/*
 * Copyright 2026 The shapfuse Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "shapfuse/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "shapfuse/attribution.hpp"
#include "shapfuse/fusion.hpp"
#include "shapfuse/heads.hpp"
#include "shapfuse/io.hpp"
#include "shapfuse/metrics.hpp"
#include "shapfuse/mil.hpp"
#include "shapfuse/pool.hpp"

namespace shapfuse::verify {

namespace fs = std::filesystem;

int VerifyReport::passed() const {
  return static_cast<int>(std::count_if(results.begin(), results.end(),
                                        [](const PropertyResult& r) { return r.passed; }));
}

int VerifyReport::failed() const {
  return static_cast<int>(results.size()) - passed();
}

namespace {

constexpr std::array<double, 5> kGrid = {-1.0, -0.5, 0.0, 0.5, 1.0};

class TreeGen {
 public:
  TreeGen(std::mt19937_64& rng, int max_depth, int features_used, int classes,
          bool normalized)
      : rng_(rng),
        max_depth_(max_depth),
        features_(features_used),
        classes_(classes),
        normalized_(normalized) {}

  forest::Tree Build() {
    tree_ = forest::Tree();
    tree_.num_classes = classes_;
    Node(0);
    return std::move(tree_);
  }

 private:
  int Node(int depth) {
    const int id = tree_.num_nodes();
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.cover.push_back(0.0);
    for (int c = 0; c < classes_; ++c) tree_.value.push_back(0.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const bool leaf = depth >= max_depth_ || (depth > 0 && u01(rng_) < 0.25);
    if (leaf) {
      std::uniform_int_distribution<int> cover(1, 6);
      tree_.cover[id] = cover(rng_);
      double sum = 0.0;
      for (int c = 0; c < classes_; ++c) {
        const double v = normalized_ ? u01(rng_) + 1e-3 : u01(rng_) * 4.0 - 2.0;
        tree_.value[id * classes_ + c] = v;
        sum += v;
      }
      if (normalized_)
        for (int c = 0; c < classes_; ++c) tree_.value[id * classes_ + c] /= sum;
      return id;
    }
    std::uniform_int_distribution<int> feat(0, features_ - 1);
    std::uniform_int_distribution<int> grid(0, static_cast<int>(kGrid.size()) - 1);
    tree_.feature[id] = feat(rng_);
    tree_.threshold[id] = kGrid[grid(rng_)];
    const int l = Node(depth + 1);
    const int r = Node(depth + 1);
    tree_.left[id] = l;
    tree_.right[id] = r;
    tree_.cover[id] = tree_.cover[l] + tree_.cover[r];
    for (int c = 0; c < classes_; ++c)
      tree_.value[id * classes_ + c] =
          (tree_.cover[l] * tree_.value[l * classes_ + c] +
           tree_.cover[r] * tree_.value[r * classes_ + c]) /
          tree_.cover[id];
    return id;
  }

  std::mt19937_64& rng_;
  int max_depth_;
  int features_;
  int classes_;
  bool normalized_;
  forest::Tree tree_;
};

forest::TreeEnsemble MakeEnsemble(std::mt19937_64& rng, int num_trees, int max_depth,
                                  int num_features, int features_used, int classes,
                                  bool normalized) {
  forest::TreeEnsemble e;
  e.num_features = num_features;
  e.num_classes = classes;
  e.class_prior.assign(static_cast<std::size_t>(classes), 1.0 / classes);
  TreeGen gen(rng, max_depth, features_used, classes, normalized);
  for (int t = 0; t < num_trees; ++t) e.trees.push_back(gen.Build());
  e.ValidateStructure();
  return e;
}

// Grid values (to provoke threshold ties) mixed with continuous ones.
std::vector<double> RandomInput(std::mt19937_64& rng, int m) {
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::uniform_int_distribution<int> grid(0, static_cast<int>(kGrid.size()) - 1);
  std::bernoulli_distribution on_grid(0.4);
  std::vector<double> x(static_cast<std::size_t>(m));
  for (double& v : x) v = on_grid(rng) ? kGrid[grid(rng)] : u(rng);
  return x;
}

class Recorder {
 public:
  // Reserves the report slot now so results keep declaration order.
  Recorder(VerifyReport& report, std::string name)
      : report_(report), slot_(report.results.size()) {
    r_.name = std::move(name);
    report_.results.emplace_back();
    start_ = std::chrono::steady_clock::now();
  }
  ~Recorder() {
    r_.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    r_.passed = r_.failures == 0 && r_.checks > 0;
    if (r_.checks == 0 && r_.detail.empty()) r_.detail = "no checks ran";
    report_.results[slot_] = std::move(r_);
  }
  // Records |err| <= tol.
  void Near(double err, double tol, const std::string& what = "") {
    ++r_.checks;
    err = std::abs(err);
    if (!(err <= tol)) {
      ++r_.failures;
      if (r_.detail.empty()) {
        std::ostringstream os;
        os << (what.empty() ? "error" : what) << " " << err << " > " << tol;
        r_.detail = os.str();
      }
    }
    if (std::isfinite(err)) r_.worst = std::max(r_.worst, err);
    else r_.worst = std::numeric_limits<double>::infinity();
  }
  void True(bool ok, const std::string& what) {
    ++r_.checks;
    if (!ok) {
      ++r_.failures;
      if (r_.detail.empty()) r_.detail = what;
    }
  }
  void Fail(const std::string& what) { True(false, what); }

 private:
  VerifyReport& report_;
  std::size_t slot_;
  PropertyResult r_;
  std::chrono::steady_clock::time_point start_;
};

// Runs `body`, turning an escaped exception into a failed check.
void Guard(Recorder& rec, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    rec.Fail(std::string("exception: ") + e.what());
  }
}

double SumPhi(const attribution::AttributionVector& a) { return a.phi.sum(); }

void ShapleyProperties(const SuiteOptions& o, VerifyReport& report) {
  std::mt19937_64 rng(DeriveSeed(o.seed, "verify-shapley"));
  std::uniform_int_distribution<int> nfeat(2, 12), ntree(1, 10), depth(1, 4), ncls(2, 4);

  Recorder oracle(report, "tree Shapley equals exact enumeration");
  Recorder local(report, "local accuracy");
  Recorder dummy(report, "unused features get exactly zero");
  Recorder consistency(report, "consistency under a monotone single-feature change");
  Recorder linearity(report, "linearity over ensembles");
  Recorder scaling(report, "scaling of leaf values");
  Recorder averaging(report, "background averaging equals mean of single backgrounds");

  Guard(oracle, [&] {
    for (int f = 0; f < o.random_forests; ++f) {
      const int m = nfeat(rng);
      const int c = ncls(rng);
      const int t = ntree(rng);
      const int d = depth(rng);
      // The last feature is never split on.
      const auto model = MakeEnsemble(rng, t, d, m, m - 1, c, true);
      for (int q = 0; q < o.queries_per_forest; ++q) {
        const auto fg = RandomInput(rng, m);
        const auto bg = RandomInput(rng, m);
        const int cls = std::uniform_int_distribution<int>(0, c - 1)(rng);
        const auto exact = attribution::ExactShapley(model, fg, bg, cls);
        const auto fast = attribution::TreeShapley(model, fg, bg, cls);
        oracle.Near((exact.phi - fast.phi).cwiseAbs().maxCoeff(), 1e-9, "max |tree - exact|");
        oracle.Near(exact.phi0 - fast.phi0, 1e-12, "base value mismatch");
        const double fx = forest::ClassMargin(model, fg, cls);
        local.Near(fast.phi0 + SumPhi(fast) - fx, 1e-9, "tree local accuracy");
        local.Near(exact.phi0 + SumPhi(exact) - fx, 1e-9, "exact local accuracy");
        dummy.True(fast.phi(m - 1) == 0.0 && exact.phi(m - 1) == 0.0,
                   "unused feature has nonzero attribution");
        for (int i = 0; i < m; ++i)
          if (fg[i] == bg[i])
            dummy.True(fast.phi(i) == 0.0 && exact.phi(i) == 0.0,
                       "feature with equal foreground/background value is nonzero");

        // Consistency: append a stump on feature i whose output rises from the
        // background side to the foreground side, against a zero leaf.
        const int i = std::uniform_int_distribution<int>(0, m - 1)(rng);
        if (fg[i] != bg[i]) {
          const double lo = std::min(fg[i], bg[i]);
          const double hi = std::max(fg[i], bg[i]);
          forest::Tree stump;
          stump.num_classes = c;
          stump.feature = {i, -1, -1};
          stump.threshold = {0.5 * (lo + hi), 0.0, 0.0};
          stump.left = {1, -1, -1};
          stump.right = {2, -1, -1};
          stump.cover = {2.0, 1.0, 1.0};
          stump.value.assign(static_cast<std::size_t>(3 * c), 0.0);
          const double gain = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
          const int fg_leaf = fg[i] <= stump.threshold[0] ? 1 : 2;
          stump.value[fg_leaf * c + cls] = gain;
          auto with_stump = model;
          with_stump.trees.push_back(stump);
          auto with_zero = model;
          const std::vector<double> zeros(static_cast<std::size_t>(c), 0.0);
          with_zero.trees.push_back(forest::Tree::Leaf(zeros));
          const auto a = attribution::TreeShapley(with_stump, fg, bg, cls);
          const auto b = attribution::TreeShapley(with_zero, fg, bg, cls);
          const double expected = gain / static_cast<double>(t + 1);
          consistency.True(a.phi(i) >= b.phi(i), "attribution decreased");
          consistency.Near(a.phi(i) - b.phi(i) - expected, 1e-12, "increment");
          for (int j = 0; j < m; ++j)
            if (j != i) consistency.Near(a.phi(j) - b.phi(j), 1e-12, "other feature moved");
        }

        // Linearity: union of two ensembles is the tree-count weighted mean.
        const int t2 = ntree(rng);
        const auto other = MakeEnsemble(rng, t2, d, m, m, c, true);
        auto both = model;
        both.trees.insert(both.trees.end(), other.trees.begin(), other.trees.end());
        const auto pa = attribution::TreeShapley(model, fg, bg, cls);
        const auto pb = attribution::TreeShapley(other, fg, bg, cls);
        const auto pu = attribution::TreeShapley(both, fg, bg, cls);
        const Vector expect = (t * pa.phi + t2 * pb.phi) / static_cast<double>(t + t2);
        linearity.Near((pu.phi - expect).cwiseAbs().maxCoeff(), 1e-9, "union");

        const double kappa = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
        auto scaled = model;
        for (auto& tree : scaled.trees)
          for (double& v : tree.value) v *= kappa;
        const auto ps = attribution::TreeShapley(scaled, fg, bg, cls);
        scaling.Near((ps.phi - kappa * pa.phi).cwiseAbs().maxCoeff(), 1e-9, "scaled phi");
        scaling.Near(ps.phi0 - kappa * pa.phi0, 1e-9, "scaled base value");

        if (q == 0) {
          const int rows = std::uniform_int_distribution<int>(1, 6)(rng);
          Matrix background(rows, m);
          for (int r = 0; r < rows; ++r) {
            const auto row = RandomInput(rng, m);
            for (int k = 0; k < m; ++k) background(r, k) = row[k];
          }
          const auto avg = attribution::ShapleyOverBackground(model, fg, background, cls);
          Vector mean = Vector::Zero(m);
          double mean0 = 0.0;
          for (int r = 0; r < rows; ++r) {
            const auto one = attribution::TreeShapley(model, fg, forest::Row(background, r), cls);
            mean += one.phi / rows;
            mean0 += one.phi0 / rows;
          }
          averaging.Near((avg.phi - mean).cwiseAbs().maxCoeff(), 1e-12, "averaged phi");
          averaging.Near(avg.phi0 - mean0, 1e-12, "averaged base value");
          averaging.Near(avg.phi0 + SumPhi(avg) - fx, 1e-9, "local accuracy over background");
        }
      }
    }
  });
}

void GradientCheck(Recorder& rec, int samples, std::mt19937_64& rng,
                   const std::vector<std::span<double>>& params,
                   const std::vector<std::span<const double>>& grads,
                   const std::function<double()>& loss) {
  // Spread samples over groups, at least one per group.
  const int groups = static_cast<int>(params.size());
  for (int s = 0; s < samples; ++s) {
    const int g = s % groups;
    std::uniform_int_distribution<std::size_t> pick(0, params[g].size() - 1);
    const std::size_t k = pick(rng);
    const double h = 1e-5;
    const double saved = params[g][k];
    params[g][k] = saved + h;
    const double up = loss();
    params[g][k] = saved - h;
    const double down = loss();
    params[g][k] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads[g][k];
    const double denom = std::max(std::abs(numeric) + std::abs(analytic), 1e-8);
    rec.Near((numeric - analytic) / denom, 1e-4, "relative gradient error");
  }
}

void MilProperties(const SuiteOptions& o, VerifyReport& report) {
  std::mt19937_64 rng(DeriveSeed(o.seed, "verify-mil"));
  const mil::MilShape shape;
  std::normal_distribution<double> normal(0.0, 1.0);

  Recorder attention(report, "attention weights sum to one");
  Recorder perm(report, "bag embedding is permutation invariant");
  Recorder grad(report, "MIL analytic gradient matches finite differences");
  Recorder head_grad(report, "MLP head gradient matches finite differences");

  Guard(attention, [&] {
    for (int trial = 0; trial < 20; ++trial) {
      mil::MilParams p = mil::MilParams::Init(shape, DeriveSeed(o.seed, "mil-params", trial));
      for (auto g : p.groups())
        for (double& v : g) v += 0.05 * normal(rng);
      const int k = std::uniform_int_distribution<int>(1, 30)(rng);
      data::Bag bag;
      bag.instances = Matrix(k, shape.input_dim);
      for (Eigen::Index i = 0; i < bag.instances.size(); ++i)
        bag.instances.data()[i] = 2.0 * normal(rng);
      const mil::BagForward f = mil::Forward(bag, p);
      attention.Near(f.attention.sum() - 1.0, 1e-12, "attention sum");
      attention.True((f.attention.array() > 0.0).all(), "non-positive attention weight");

      std::vector<int> order(static_cast<std::size_t>(k));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      data::Bag shuffled = bag;
      for (int i = 0; i < k; ++i) shuffled.instances.row(i) = bag.instances.row(order[i]);
      const mil::BagForward g = mil::Forward(shuffled, p);
      perm.Near((f.z - g.z).cwiseAbs().maxCoeff(), 1e-10, "z difference");
      perm.Near((f.logits - g.logits).cwiseAbs().maxCoeff(), 1e-10, "logit difference");
    }
  });

  Guard(grad, [&] {
    mil::MilParams p = mil::MilParams::Init(shape, DeriveSeed(o.seed, "mil-grad"));
    for (auto g : p.groups())
      for (double& v : g) v += 0.05 * normal(rng);
    Matrix x(5, shape.input_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    const int label = 2;
    mil::MilParams g = mil::MilParams::Zeros(shape);
    mil::LossAndGradient(x, label, p, &g);
    const auto pg = p.groups();
    const auto gg = std::as_const(g).groups();
    GradientCheck(grad, o.gradient_samples, rng, {pg.begin(), pg.end()},
                  {gg.begin(), gg.end()},
                  [&] { return mil::LossAndGradient(x, label, p, nullptr); });
  });

  Guard(head_grad, [&] {
    heads::MlpParams p = heads::MlpParams::Init(64, 128, 4, DeriveSeed(o.seed, "mlp-grad"));
    for (auto g : p.groups())
      for (double& v : g) v += 0.05 * normal(rng);
    Matrix x(6, 64);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    const std::vector<int> y = {0, 1, 2, 3, 1, 2};
    heads::MlpParams g = heads::MlpParams::ZerosLike(p);
    heads::MlpLossAndGradient(x, y, p, &g);
    const auto pg = p.groups();
    const auto gg = std::as_const(g).groups();
    GradientCheck(head_grad, o.gradient_samples, rng, {pg.begin(), pg.end()},
                  {gg.begin(), gg.end()},
                  [&] { return heads::MlpLossAndGradient(x, y, p, nullptr); });
  });
}

void FusionProperties(const SuiteOptions& o, VerifyReport& report) {
  std::mt19937_64 rng(DeriveSeed(o.seed, "verify-fusion"));
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random_vec = [&](int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
  };
  auto span_of = [](const Vector& v) {
    return std::span<const double>(v.data(), static_cast<std::size_t>(v.size()));
  };

  Recorder dims(report, "dimension contract 32 / 64 / 2048");
  Guard(dims, [&] {
    for (int trial = 0; trial < 10; ++trial) {
      const Vector z = random_vec(512);
      pool::DimensionSelector shap;
      shap.method = pool::PoolMethod::kShap;
      shap.scores = random_vec(512).cwiseAbs();
      shap.indices = pool::TopK(shap.scores, 32);
      shap.Validate();
      for (const auto& sel :
           {shap, pool::MakeBaselinePool(pool::PoolMethod::kAvg, 32, 0),
            pool::MakeBaselinePool(pool::PoolMethod::kMax, 32, 0),
            pool::MakeBaselinePool(pool::PoolMethod::kRand, 32, DeriveSeed(o.seed, "rand", trial))})
        dims.True(pool::ApplyPool(sel, span_of(z)).size() == fusion::kPooledDim,
                  "pooled length is not 32");
      const Vector a = random_vec(32), b = random_vec(32), c = random_vec(32);
      const Vector cat = fusion::ConcatHe(span_of(a), span_of(b));
      dims.True(cat.size() == fusion::kConcatDim, "concat length is not 64");
      dims.True(fusion::Kronecker(span_of(cat), span_of(c)).size() == fusion::kFusedDim,
                "fused length is not 2048");
    }
    bool threw = false;
    try {
      fusion::ConcatHe(span_of(random_vec(32)), span_of(random_vec(31)));
    } catch (const ShapeError&) {
      threw = true;
    }
    dims.True(threw, "concat accepted mismatched lengths");
  });

  Recorder bilinear(report, "Kronecker product is bilinear and matches a double loop");
  Guard(bilinear, [&] {
    for (int trial = 0; trial < 50; ++trial) {
      const Vector a1 = random_vec(64), a2 = random_vec(64), b = random_vec(32);
      const double alpha = normal(rng);
      const Vector k1 = fusion::Kronecker(span_of(a1), span_of(b));
      const Vector k2 = fusion::Kronecker(span_of(a2), span_of(b));
      const Vector scaled = alpha * a1;
      const Vector sum = a1 + a2;
      bilinear.Near((fusion::Kronecker(span_of(scaled), span_of(b)) - alpha * k1)
                        .cwiseAbs().maxCoeff(), 1e-12, "homogeneity");
      bilinear.Near((fusion::Kronecker(span_of(sum), span_of(b)) - k1 - k2)
                        .cwiseAbs().maxCoeff(), 1e-12, "additivity");
      double worst = 0.0;
      for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 32; ++j) worst = std::max(worst, std::abs(k1[i * 32 + j] - a1[i] * b[j]));
      bilinear.Near(worst, 1e-12, "double loop");
    }
  });

  Recorder auc(report, "AUC is invariant under monotone score transforms");
  Guard(auc, [&] {
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 200;
      Matrix s(n, 4);
      std::vector<int> y(n);
      for (int i = 0; i < n; ++i) {
        y[i] = i % 4;
        for (int c = 0; c < 4; ++c) s(i, c) = std::round(normal(rng) * 4.0) / 4.0 + (y[i] == c);
      }
      Matrix t = s;
      t = (t.array() * 3.0).exp().matrix();
      const auto a = metrics::MacroAucOvr(s, y);
      const auto b = metrics::MacroAucOvr(t, y);
      auc.True(a.has_value() && b.has_value(), "AUC missing");
      if (a && b) auc.Near(*a - *b, 1e-12, "AUC change");
    }
  });

  Recorder csv(report, "CSV round trip is bit-exact");
  Guard(csv, [&] {
    const fs::path dir = fs::temp_directory_path() /
                         ("shapfuse-verify-" + std::to_string(DeriveSeed(o.seed, "csv-dir")));
    std::uniform_real_distribution<double> expo(-300.0, 300.0);
    for (int trial = 0; trial < 5; ++trial) {
      Matrix m(7, 512);
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = normal(rng) * std::pow(10.0, expo(rng) * (i % 3 == 0));
      m(0, 0) = std::numeric_limits<double>::denorm_min();
      m(0, 1) = -0.0;
      m(0, 2) = std::numeric_limits<double>::max();
      const fs::path p = dir / ("m" + std::to_string(trial) + ".csv");
      io::SaveMatrix(p, m, {});
      const Matrix back = io::LoadMatrix(p);
      csv.True(back.rows() == m.rows() && back.cols() == m.cols() &&
                   std::memcmp(back.data(), m.data(), sizeof(double) * m.size()) == 0,
               "round trip changed bits");
    }
    fs::remove_all(dir);
  });
}

}  // namespace

forest::TreeEnsemble RandomEnsemble(std::mt19937_64& rng, int num_trees, int max_depth,
                                    int num_features, int num_classes, bool normalized) {
  return MakeEnsemble(rng, num_trees, max_depth, num_features, num_features, num_classes,
                      normalized);
}

VerifyReport RunPropertySuite(const SuiteOptions& options) {
  VerifyReport report;
  ShapleyProperties(options, report);
  MilProperties(options, report);
  FusionProperties(options, report);
  return report;
}

VerifyReport VerifyArtifacts(const fs::path& out_dir) {
  VerifyReport report;
  std::vector<fs::path> pool_dirs;
  const fs::path folds = out_dir / "folds";
  if (fs::exists(folds)) {
    for (const auto& fold : fs::directory_iterator(folds)) {
      const fs::path pd = fold.path() / "pool";
      if (!fs::exists(pd)) continue;
      for (const auto& mod : fs::directory_iterator(pd))
        if (fs::exists(mod.path() / "forest.json")) pool_dirs.push_back(mod.path());
    }
  }
  std::sort(pool_dirs.begin(), pool_dirs.end());

  {
    Recorder found(report, "fit-pool artifacts present");
    found.True(!pool_dirs.empty(), "no fit-pool artifacts under " + out_dir.string());
  }
  Recorder local(report, "saved attributions satisfy local accuracy against saved forests");
  Recorder base(report, "saved base values equal the mean background prediction");
  Recorder repro(report, "saved attributions are reproducible from the saved forest");
  Recorder select(report, "SHAP selectors keep the top-k saved scores");
  for (const fs::path& dir : pool_dirs) {
    const std::string where = fs::relative(dir, out_dir).generic_string();
    try {
      const auto model = forest::EnsembleFromJson(io::ReadJson(dir / "forest.json"));
      const Matrix eval = io::LoadMatrix(dir / "eval_inputs.csv");
      const Matrix bg = io::LoadMatrix(dir / "background.csv");
      const Matrix base_values = io::LoadMatrix(dir / "base_values.csv");
      std::vector<Matrix> phi;
      for (int c = 0; c < model.num_classes; ++c)
        phi.push_back(io::LoadMatrix(dir / ("phi_class" + std::to_string(c) + ".csv")));
      const Matrix pred = forest::PredictProba(model, eval);
      const Vector mean_bg = forest::PredictProba(model, bg).colwise().mean().transpose();
      for (Eigen::Index i = 0; i < eval.rows(); ++i) {
        for (int c = 0; c < model.num_classes; ++c) {
          local.Near(base_values(i, c) + phi[c].row(i).sum() - pred(i, c), 1e-9,
                     where + " local accuracy");
          base.Near(base_values(i, c) - mean_bg[c], 1e-9, where + " base value");
        }
      }
      const auto again = attribution::ShapleyOverBackgroundAllClasses(
          model, forest::Row(eval, 0), bg);
      for (int c = 0; c < model.num_classes; ++c)
        repro.Near((again.phi.col(c).transpose() - phi[c].row(0)).cwiseAbs().maxCoeff(), 1e-12,
                   where + " recomputed phi");

      const Matrix scores = io::LoadMatrix(dir / "scores.csv");
      const auto sel = pool::SelectorFromJson(io::ReadJson(dir / "selector_SHAP.json"));
      Vector mean_abs = Vector::Zero(eval.cols());
      for (int c = 0; c < model.num_classes; ++c)
        mean_abs += phi[c].cwiseAbs().colwise().mean().transpose() / model.num_classes;
      select.Near((mean_abs - scores.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-12,
                  where + " score aggregation");
      select.True(sel.indices == pool::TopK(scores.row(0).transpose(), sel.k),
                  where + " selector is not the top-k of its scores");
    } catch (const std::exception& e) {
      local.Fail(where + ": " + e.what());
    }
  }

  std::vector<std::pair<fs::path, bool>> tables;  // (manifest, is fused)
  if (fs::exists(folds)) {
    for (const auto& e : fs::recursive_directory_iterator(folds)) {
      const std::string name = e.path().filename().string();
      if (!e.is_regular_file() || !name.ends_with(".manifest.json")) continue;
      const bool pooled = e.path().parent_path().parent_path().filename() == "pooled";
      const bool fused = e.path().parent_path().filename() == "fused";
      if (pooled || fused) tables.emplace_back(e.path(), fused);
    }
  }
  std::sort(tables.begin(), tables.end());
  if (!tables.empty()) {
    Recorder widths(report, "pooled and fused artifacts have widths 32 and 2048");
    for (const auto& [path, fused] : tables) {
      const auto cols = io::ReadJson(path).at("shape").at(1).get<std::size_t>();
      widths.True(cols == (fused ? 2048u : 32u),
                  fs::relative(path, out_dir).generic_string() + " has width " +
                      std::to_string(cols));
    }
  }
  return report;
}

std::string FormatReport(const VerifyReport& report) {
  std::ostringstream os;
  for (const PropertyResult& r : report.results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << "  [" << r.checks << " checks";
    if (r.failures) os << ", " << r.failures << " failed";
    os << ", worst " << std::setprecision(3) << r.worst << ", " << std::fixed
       << std::setprecision(2) << r.seconds << " s]" << std::defaultfloat;
    if (!r.passed && !r.detail.empty()) os << "\n     " << r.detail;
    os << '\n';
  }
  os << report.passed() << " passed, " << report.failed() << " failed\n";
  return os.str();
}

}  // namespace shapfuse::verify
