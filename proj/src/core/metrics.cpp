#include "eegrecon/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "eegrecon/error.hpp"

namespace eegrecon {

using namespace nn;

namespace {

Tensor image_batch(const std::vector<const StimulusImage*>& images, int size) {
  Tensor x({static_cast<int>(images.size()), 3, size, size});
  const std::size_t inner = static_cast<std::size_t>(3) * size * size;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->height != size || images[i]->width != size)
      fail(Errc::DimMismatch, "backbone expects " + std::to_string(size) + "x" + std::to_string(size) + " images, got " +
                                  std::to_string(images[i]->height) + "x" + std::to_string(images[i]->width));
    const auto planar = to_unit_planar(*images[i]);
    std::copy(planar.begin(), planar.end(), x.data.begin() + i * inner);
  }
  return x;
}

FeatureMap to_map(const Tensor& t) {  // t [1,C,H,W]
  FeatureMap m;
  m.channels = t.dim(1);
  m.height = t.dim(2);
  m.width = t.dim(3);
  m.data = t.data;
  return m;
}

std::vector<double> softmax(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

// --- toy CNN ------------------------------------------------------------------

ToyCnnBackbone::ToyCnnBackbone(int num_classes, int image_size, std::uint64_t seed)
    : num_classes_(num_classes), image_size_(image_size) {
  if (num_classes < 2) fail(Errc::ConfigValidationError, "backbone needs at least two classes");
  if (image_size < 4 || image_size % 4 != 0) fail(Errc::BadDimensions, "backbone image size must be a multiple of 4");
  std::mt19937_64 rng(seed);
  c1_ = Conv2d(3, 8, 3, 2, 1, rng);
  c2_ = Conv2d(8, 16, 3, 2, 1, rng);
  fc1_ = Linear(16, 32, rng);
  fc2_ = Linear(32, num_classes, rng);
}

Var ToyCnnBackbone::logits(const Var& x, std::vector<Var>* taps, Var* embedding) const {
  const Var h1 = silu(c1_(x));
  const Var h2 = silu(c2_(h1));
  const int n = x->value.dim(0);
  const int p = h2->value.dim(2) * h2->value.dim(3);
  const Var pooled = reshape(adaptive_avg_pool1d(reshape(h2, {n, 16, p}), 1), {n, 16});
  const Var emb = silu(fc1_(pooled));
  if (taps) *taps = {h1, h2};
  if (embedding) *embedding = emb;
  return fc2_(emb);
}

ParamList ToyCnnBackbone::params() const {
  ParamList out;
  c1_.collect(out, "c1");
  c2_.collect(out, "c2");
  fc1_.collect(out, "fc1");
  fc2_.collect(out, "fc2");
  return out;
}

BackboneOutput ToyCnnBackbone::run(const StimulusImage& image) const {
  NoGradGuard ng;
  std::vector<Var> taps;
  Var emb;
  const Var z = logits(constant(image_batch({&image}, image_size_)), &taps, &emb);
  BackboneOutput out;
  out.probs = softmax(z->value.data);
  for (const auto& t : taps) out.taps.push_back(to_map(t->value));
  out.embedding = emb->value.data;
  return out;
}

ToyCnnBackbone train_toy_cnn(const std::vector<StimulusImage>& images, const std::vector<int>& labels,
                             int num_classes, const ClassifierHyper& hyper, std::uint64_t seed) {
  if (images.empty() || images.size() != labels.size()) fail(Errc::EmptySplit, "backbone needs labelled images");
  ToyCnnBackbone b(num_classes, images.front().height, seed);
  Adam opt(b.params(), hyper.lr);
  std::mt19937_64 rng(seed + 1);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < order.size(); s += hyper.batch) {
      std::vector<const StimulusImage*> batch;
      std::vector<int> y;
      for (std::size_t i = s; i < std::min(order.size(), s + hyper.batch); ++i) {
        batch.push_back(&images[order[i]]);
        y.push_back(labels[order[i]]);
      }
      const Var loss = cross_entropy(b.logits(constant(image_batch(batch, b.image_size()))), y);
      if (!std::isfinite(loss->value.data[0])) fail(Errc::DivergenceError, "backbone loss became non-finite");
      b.loss_history.push_back(loss->value.data[0]);
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  return b;
}

double backbone_accuracy(const FeatureBackbone& backbone, const std::vector<StimulusImage>& images,
                         const std::vector<int>& labels) {
  if (images.empty() || images.size() != labels.size()) fail(Errc::CountMismatch, "images and labels differ in count");
  int hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto p = backbone.run(images[i]).probs;
    hits += static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()) == labels[i];
  }
  return static_cast<double>(hits) / images.size();
}

void save_backbone(const std::filesystem::path& path, const ToyCnnBackbone& backbone) {
  save_checkpoint(path, "backbone",
                  {{"tag", backbone.tag()}, {"num_classes", backbone.num_classes()}, {"image_size", backbone.image_size()}},
                  backbone.params());
}

ToyCnnBackbone load_backbone(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "backbone") fail(Errc::ConfigValidationError, path.string() + " is a '" + ck.kind + "' checkpoint");
  if (ck.config.value("tag", "") != ToyCnnBackbone::kTag)
    fail(Errc::ConfigValidationError, path.string() + ": backbone tag " + ck.config.value("tag", "?") + " is not " +
                                          ToyCnnBackbone::kTag);
  ToyCnnBackbone b(ck.config.at("num_classes"), ck.config.at("image_size"), 0);
  assign_params(ck, b.params());
  return b;
}

// --- colour histogram -----------------------------------------------------------

BackboneOutput ColorHistogramBackbone::run(const StimulusImage& image) const {
  if (image.empty()) fail(Errc::EmptyInput, "empty image");
  BackboneOutput out;
  std::vector<double> hist(8, 1.0);  // add-one smoothing keeps every class possible
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      int bin = 0;
      for (int c = 0; c < 3; ++c) bin = bin * 2 + (image.pixels[image.index(y, x, c)] >= 128);
      hist[bin] += 1.0;
    }
  const double total = std::accumulate(hist.begin(), hist.end(), 0.0);
  for (auto& h : hist) h /= total;
  out.probs = hist;

  // block-mean colour grids at 1/2 and 1/4 resolution
  for (int f : {2, 4}) {
    FeatureMap m;
    m.channels = 3;
    m.height = std::max(1, image.height / f);
    m.width = std::max(1, image.width / f);
    m.data.assign(static_cast<std::size_t>(3) * m.height * m.width, 0.0);
    for (int c = 0; c < 3; ++c)
      for (int by = 0; by < m.height; ++by)
        for (int bx = 0; bx < m.width; ++bx) {
          double s = 0.0;
          int n = 0;
          for (int y = by * f; y < std::min(image.height, (by + 1) * f); ++y)
            for (int x = bx * f; x < std::min(image.width, (bx + 1) * f); ++x, ++n)
              s += image.pixels[image.index(y, x, c)] / 127.5 - 1.0;
          m.data[(static_cast<std::size_t>(c) * m.height + by) * m.width + bx] = n ? s / n : 0.0;
        }
    out.taps.push_back(std::move(m));
  }
  out.embedding = hist;
  const auto& coarse = out.taps.back().data;
  out.embedding.insert(out.embedding.end(), coarse.begin(), coarse.end());
  return out;
}

// --- inception score --------------------------------------------------------------

double inception_score_from_probs(const std::vector<std::vector<double>>& probs, int splits) {
  if (splits < 1) fail(Errc::ConfigValidationError, "splits must be >= 1");
  if (probs.size() < static_cast<std::size_t>(2 * splits))
    fail(Errc::TooFewImages, std::to_string(probs.size()) + " images for " + std::to_string(splits) +
                                 " splits; need at least " + std::to_string(2 * splits));
  const std::size_t k = probs.front().size();
  for (const auto& row : probs) {
    if (row.size() != k) fail(Errc::DimMismatch, "probability rows differ in length");
    for (double v : row)
      if (!(v >= 0.0) || !std::isfinite(v)) fail(Errc::ConfigValidationError, "probabilities must be finite and >= 0");
  }
  // extended precision keeps the uniform (1) and one-hot (K) cases exact after rounding
  const std::size_t n = probs.size();
  long double kl_sum = 0.0L;
  for (int s = 0; s < splits; ++s) {
    const std::size_t b = n * s / splits, e = n * (s + 1) / splits;
    std::vector<long double> marginal(k, 0.0L);
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < k; ++j) marginal[j] += probs[i][j];
    for (auto& m : marginal) m /= static_cast<long double>(e - b);
    long double kl = 0.0L;
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (probs[i][j] > 0.0) kl += probs[i][j] * (std::log(static_cast<long double>(probs[i][j])) - std::log(marginal[j]));
    kl_sum += kl / static_cast<long double>(e - b);
  }
  return static_cast<double>(std::exp(kl_sum / splits));
}

double inception_score(const std::vector<StimulusImage>& images, const FeatureBackbone& backbone, int splits) {
  if (images.size() < static_cast<std::size_t>(2 * std::max(1, splits)))
    fail(Errc::TooFewImages, std::to_string(images.size()) + " images for " + std::to_string(splits) + " splits");
  std::vector<std::vector<double>> probs;
  for (const auto& im : images) probs.push_back(backbone.run(im).probs);
  return inception_score_from_probs(probs, splits);
}

// --- frechet ------------------------------------------------------------------------

GaussianSummary summarize(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) fail(Errc::TooFewImages, "a Gaussian summary needs at least two samples");
  const std::size_t d = features.front().size();
  GaussianSummary g;
  g.n = static_cast<int>(features.size());
  g.mean.assign(d, 0.0);
  for (const auto& f : features) {
    if (f.size() != d) fail(Errc::DimMismatch, "feature vectors differ in length");
    for (std::size_t j = 0; j < d; ++j) g.mean[j] += f[j];
  }
  for (auto& m : g.mean) m /= g.n;
  g.cov.assign(d * d, 0.0);
  for (const auto& f : features)
    for (std::size_t a = 0; a < d; ++a) {
      const double da = f[a] - g.mean[a];
      for (std::size_t b = a; b < d; ++b) g.cov[a * d + b] += da * (f[b] - g.mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      g.cov[a * d + b] /= g.n - 1;
      g.cov[b * d + a] = g.cov[a * d + b];
    }
  return g;
}

namespace {

using Mat = Eigen::MatrixXd;

Mat sym_from(const std::vector<double>& v, int d) {
  Mat m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = v[static_cast<std::size_t>(i) * d + j];
  return 0.5 * (m + m.transpose());
}

// Eigenvalues of a symmetric matrix with the [-1e-6, 0) band clamped to zero.
Eigen::VectorXd clamped_eigenvalues(const Eigen::SelfAdjointEigenSolver<Mat>& es, const char* what) {
  Eigen::VectorXd ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < -1e-6) fail(Errc::NonPSDProduct, std::string(what) + " has eigenvalue " + std::to_string(ev(i)));
    if (ev(i) < 0.0) ev(i) = 0.0;
  }
  return ev;
}

}  // namespace

double fid(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.dim() != b.dim()) fail(Errc::DimMismatch, "summaries have dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  const int d = a.dim();
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Mat sa = sym_from(a.cov, d), sb = sym_from(b.cov, d);

  // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}); the inner product is symmetric
  Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
  const Eigen::VectorXd la = clamped_eigenvalues(ea, "covariance");
  const Mat root_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  const Mat m = root_a * sb * root_a;
  Eigen::SelfAdjointEigenSolver<Mat> em(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lm = clamped_eigenvalues(em, "covariance product");
  const double tr_root = lm.cwiseSqrt().sum();
  const double v = mean_term + sa.trace() + sb.trace() - 2.0 * tr_root;
  return v < 0.0 && v > -1e-9 ? 0.0 : v;
}

std::vector<std::vector<double>> embeddings(const std::vector<StimulusImage>& images, const FeatureBackbone& backbone) {
  std::vector<std::vector<double>> out;
  for (const auto& im : images) out.push_back(backbone.run(im).embedding);
  return out;
}

// --- pairwise ---------------------------------------------------------------------------

double perceptual_distance_from_taps(const std::vector<FeatureMap>& x, const std::vector<FeatureMap>& y) {
  if (x.size() != y.size() || x.empty()) fail(Errc::DimMismatch, "tap lists differ");
  double total = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    const auto& a = x[l];
    const auto& b = y[l];
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
      fail(Errc::DimMismatch, "tap " + std::to_string(l) + " shapes differ");
    double layer = 0.0;
    for (int yy = 0; yy < a.height; ++yy)
      for (int xx = 0; xx < a.width; ++xx) {
        double na = 0.0, nb = 0.0;
        for (int c = 0; c < a.channels; ++c) {
          na += a.at(c, yy, xx) * a.at(c, yy, xx);
          nb += b.at(c, yy, xx) * b.at(c, yy, xx);
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        double d2 = 0.0;
        for (int c = 0; c < a.channels; ++c) {
          const double u = na > 0 ? a.at(c, yy, xx) / na : 0.0;
          const double v = nb > 0 ? b.at(c, yy, xx) / nb : 0.0;
          d2 += (u - v) * (u - v);
        }
        layer += d2;
      }
    total += layer / (a.height * a.width);
  }
  return total / x.size();
}

double perceptual_distance(const StimulusImage& x, const StimulusImage& y, const FeatureBackbone& backbone) {
  if (x.height != y.height || x.width != y.width) fail(Errc::DimMismatch, "images differ in size");
  return perceptual_distance_from_taps(backbone.run(x).taps, backbone.run(y).taps);
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail(Errc::DimMismatch, "embeddings differ in length");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) fail(Errc::ZeroEmbedding, "zero embedding");
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

double embedding_similarity(const StimulusImage& x, const StimulusImage& y, const FeatureBackbone& backbone) {
  return cosine_similarity(backbone.run(x).embedding, backbone.run(y).embedding);
}

// --- reports -----------------------------------------------------------------------------

MetricValues evaluate_set(const std::vector<StimulusImage>& generated, const std::vector<StimulusImage>& reference,
                          const std::vector<int>& pair_index, const FeatureBackbone& backbone, bool boosted,
                          int is_splits) {
  if (generated.size() != pair_index.size()) fail(Errc::CountMismatch, "generated images and pair indices differ in count");
  std::vector<BackboneOutput> gen, ref;
  for (const auto& im : generated) gen.push_back(backbone.run(im));
  for (const auto& im : reference) ref.push_back(backbone.run(im));

  MetricValues v;
  std::vector<std::vector<double>> probs, ge, re;
  for (const auto& o : gen) {
    probs.push_back(o.probs);
    ge.push_back(o.embedding);
  }
  for (const auto& o : ref) re.push_back(o.embedding);
  v.is = inception_score_from_probs(probs, is_splits);
  v.fid = fid(summarize(ge), summarize(re));
  double lp = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const auto& r = ref.at(pair_index[i]);
    lp += perceptual_distance_from_taps(gen[i].taps, r.taps);
    if (!boosted) cs += cosine_similarity(gen[i].embedding, r.embedding);
  }
  v.lpips = lp / gen.size();
  if (!boosted) v.clip_sim = cs / gen.size();
  return v;
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string metric_csv_header() {
  return "run_id,montage,channels,gamma,boosted,n_images,is,fid,lpips,clip_sim,backbone_tag,seed";
}

std::string metric_csv_row(const MetricReport& r) {
  for (const auto* s : {&r.run_id, &r.montage, &r.backbone_tag})
    if (s->find_first_of(",\n\"") != std::string::npos) fail(Errc::ConfigValidationError, "CSV field '" + *s + "' needs quoting");
  std::ostringstream o;
  char g[32];
  std::snprintf(g, sizeof g, "%g", r.gamma);
  o << r.run_id << ',' << r.montage << ',' << r.channels << ',' << g << ',' << (r.boosted ? "true" : "false") << ','
    << r.n_images << ',' << format_metric(r.values.is) << ',' << format_metric(r.values.fid) << ','
    << format_metric(r.values.lpips) << ',';
  // boosted sets never carry the embedding similarity
  if (r.values.clip_sim && !r.boosted) o << format_metric(*r.values.clip_sim);
  o << ',' << r.backbone_tag << ',' << r.seed;
  return o.str();
}

void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricReport>& rows) {
  std::string text = metric_csv_header() + "\n";
  for (const auto& r : rows) text += metric_csv_row(r) + "\n";
  write_text(path, text);
}

std::vector<MetricReport> read_metric_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != metric_csv_header())
    fail(Errc::ConfigValidationError, path.string() + " does not have the metric report header");
  std::vector<MetricReport> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 12) fail(Errc::ConfigValidationError, path.string() + ": malformed row '" + line + "'");
    MetricReport r;
    r.run_id = f[0];
    r.montage = f[1];
    r.channels = std::stoi(f[2]);
    r.gamma = std::stod(f[3]);
    r.boosted = f[4] == "true";
    r.n_images = std::stoi(f[5]);
    r.values.is = std::stod(f[6]);
    r.values.fid = std::stod(f[7]);
    r.values.lpips = std::stod(f[8]);
    if (!f[9].empty()) r.values.clip_sim = std::stod(f[9]);
    r.backbone_tag = f[10];
    r.seed = std::stoull(f[11]);
    out.push_back(std::move(r));
  }
  return out;
}

double gain_percent(double raw, double boosted, bool higher_is_better) {
  if (raw == 0.0) fail(Errc::ConfigValidationError, "gain undefined for a zero raw value");
  return 100.0 * (higher_is_better ? boosted - raw : raw - boosted) / raw;
}

std::string format_gain(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f%%", percent);
  return buf;
}

}  // namespace eegrecon
