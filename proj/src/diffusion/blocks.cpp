#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "eegrecon/diffusion.hpp"
#include "eegrecon/error.hpp"

namespace eegrecon {

using namespace nn;

double DiffusionSchedule::sqrt_ab(int t) const { return std::sqrt(alpha_bar.at(t)); }
double DiffusionSchedule::sqrt_one_minus_ab(int t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }

Json DiffusionSchedule::to_json() const {
  return {{"kind", "linear"}, {"T", T}, {"beta_start", beta_start}, {"beta_end", beta_end}};
}

DiffusionSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) fail(Errc::ConfigValidationError, "schedule needs T >= 1");
  if (!(beta_start > 0.0) || beta_end < beta_start || beta_end >= 1.0)
    fail(Errc::ConfigValidationError, "need 0 < beta_start <= beta_end < 1");
  DiffusionSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

DiffusionSchedule make_default_schedule(int T) {
  const double k = 1000.0 / std::max(T, 1);
  return make_linear_schedule(T, 1e-4 * k, std::min(0.02 * k, 0.999));
}

Tensor forward_diffuse(const Tensor& z0, int t, const Tensor& eps, const DiffusionSchedule& schedule) {
  if (t < 0 || t > schedule.T)
    fail(Errc::TimestepOutOfRange, "t=" + std::to_string(t) + " outside [0, " + std::to_string(schedule.T) + "]");
  if (z0.shape != eps.shape) fail(Errc::ShapeMismatch, "z0 " + shape_str(z0.shape) + " vs eps " + shape_str(eps.shape));
  if (t == 0) return z0;
  const double a = schedule.sqrt_ab(t), b = schedule.sqrt_one_minus_ab(t);
  Tensor out(z0.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
  return out;
}

Tensor guided_eps(const Tensor& eps_u, const Tensor& eps_c, double gamma) {
  if (eps_u.shape != eps_c.shape) fail(Errc::ShapeMismatch, "guidance branches differ in shape");
  Tensor out(eps_u.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = (1.0 - gamma) * eps_u.data[i] + gamma * eps_c.data[i];
  return out;
}

Tensor gaussian_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = n(rng);
  return t;
}

// --- ResBlock ---------------------------------------------------------------

ResBlock::ResBlock(int in, int out, int cond_dim, std::mt19937_64& rng)
    : conv1(in, out, 3, 1, 1, rng), conv2(out, out, 3, 1, 1, rng), cond_proj(cond_dim, out, rng), has_skip(in != out) {
  if (has_skip) skip = Conv2d(in, out, 1, 1, 0, rng);
}

Var ResBlock::operator()(const Var& x, const Var& cond) const {
  Var h = conv1(silu(x));
  h = add_channelwise(h, cond_proj(silu(cond)));
  h = conv2(silu(h));
  return add(has_skip ? skip(x) : x, h);
}

void ResBlock::collect(ParamList& out, const std::string& prefix) const {
  conv1.collect(out, prefix + ".conv1");
  conv2.collect(out, prefix + ".conv2");
  cond_proj.collect(out, prefix + ".cond");
  if (has_skip) skip.collect(out, prefix + ".skip");
}

// --- Autoencoder ------------------------------------------------------------

Autoencoder::Autoencoder(bool identity_, int image_size_, int factor_, int latent_channels_, int hidden_,
                         std::mt19937_64& rng)
    : identity(identity_), image_size(image_size_), factor(factor_), latent_channels(latent_channels_), hidden(hidden_) {
  if (identity) {
    factor = 1;
    latent_channels = 3;
    return;
  }
  if (factor < 1 || (factor & (factor - 1)) != 0) fail(Errc::ConfigValidationError, "autoencoder factor must be a power of two");
  if (image_size % factor != 0) fail(Errc::BadDimensions, "image size not divisible by the autoencoder factor");
  // channels double at each halving: hidden, 2*hidden, ...
  std::vector<int> ch{hidden};
  for (int f = factor; f > 1; f /= 2) ch.push_back(2 * ch.back());
  e_in = Conv2d(3, ch.front(), 3, 1, 1, rng);
  for (std::size_t i = 0; i + 1 < ch.size(); ++i) e_down.emplace_back(ch[i], ch[i + 1], 3, 2, 1, rng);
  e_mid = Conv2d(ch.back(), ch.back(), 3, 1, 1, rng);
  e_out = Conv2d(ch.back(), 2 * latent_channels, 3, 1, 1, rng);
  d_in = Conv2d(latent_channels, ch.back(), 3, 1, 1, rng);
  d_mid = Conv2d(ch.back(), ch.back(), 3, 1, 1, rng);
  for (std::size_t i = ch.size() - 1; i > 0; --i) d_up.emplace_back(ch[i], ch[i - 1], 3, 1, 1, rng);
  d_out = Conv2d(ch.front(), 3, 3, 1, 1, rng);
}

Var Autoencoder::moments(const Var& x) const {
  if (identity) return x;
  Var h = e_in(x);
  for (const auto& d : e_down) h = d(silu(h));
  h = add(h, e_mid(silu(h)));
  return e_out(silu(h));
}

Var Autoencoder::encode_mean(const Var& x) const {
  if (identity) return x;
  return nn::scale(slice(moments(x), 0, latent_channels), this->scale);
}

Var Autoencoder::decode(const Var& z) const {
  if (identity) return z;
  Var h = d_in(nn::scale(z, 1.0 / this->scale));
  h = add(h, d_mid(silu(h)));
  for (const auto& u : d_up) h = u(silu(upsample_nearest2x(h)));
  return d_out(silu(h));
}

void Autoencoder::collect(ParamList& out, const std::string& prefix) const {
  if (identity) return;
  e_in.collect(out, prefix + ".e_in");
  for (std::size_t i = 0; i < e_down.size(); ++i) e_down[i].collect(out, prefix + ".e_down" + std::to_string(i));
  e_mid.collect(out, prefix + ".e_mid");
  e_out.collect(out, prefix + ".e_out");
  d_in.collect(out, prefix + ".d_in");
  d_mid.collect(out, prefix + ".d_mid");
  for (std::size_t i = 0; i < d_up.size(); ++i) d_up[i].collect(out, prefix + ".d_up" + std::to_string(i));
  d_out.collect(out, prefix + ".d_out");
}

// --- TextEncoder ------------------------------------------------------------

std::vector<std::string> TextEncoder::tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> TextEncoder::build_vocab(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus)
    for (auto& w : tokenize(text)) words.insert(std::move(w));
  std::vector<std::string> vocab{kNullToken, kUnknownToken};
  vocab.insert(vocab.end(), words.begin(), words.end());
  return vocab;
}

TextEncoder::TextEncoder(std::vector<std::string> vocab, int embed_dim, int cond_dim, std::mt19937_64& rng)
    : vocab_(std::move(vocab)) {
  if (vocab_.size() < 2 || vocab_[0] != kNullToken || vocab_[1] != kUnknownToken)
    fail(Errc::ConfigValidationError, "vocabulary must start with the null and unknown tokens");
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_[vocab_[i]] = static_cast<int>(i);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t({static_cast<int>(vocab_.size()), embed_dim});
  for (auto& v : t.data) v = n(rng);
  table_ = leaf(std::move(t), true);
  proj_ = Linear(embed_dim, cond_dim, rng);
}

std::vector<int> TextEncoder::token_ids(const std::string& text) const {
  const auto toks = tokenize(text);
  if (toks.empty()) return {0};
  std::vector<int> ids;
  for (const auto& w : toks) {
    const auto it = index_.find(w);
    ids.push_back(it == index_.end() ? 1 : it->second);
  }
  return ids;
}

Var TextEncoder::encode(const std::vector<std::string>& texts) const {
  std::vector<std::vector<int>> ids;
  for (const auto& t : texts) ids.push_back(token_ids(t));
  return proj_(embedding_mean(table_, ids));
}

void TextEncoder::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".table", table_});
  proj_.collect(out, prefix + ".proj");
}

// --- TimeEmbedding ----------------------------------------------------------

TimeEmbedding::TimeEmbedding(int freq_dim_, int cond_dim, std::mt19937_64& rng)
    : freq_dim(freq_dim_), l1(freq_dim_, cond_dim, rng), l2(cond_dim, cond_dim, rng) {}

Var TimeEmbedding::operator()(const std::vector<int>& t) const {
  const int half = freq_dim / 2;
  Tensor f({static_cast<int>(t.size()), freq_dim});
  for (std::size_t n = 0; n < t.size(); ++n)
    for (int i = 0; i < half; ++i) {
      const double w = std::exp(-std::log(1000.0) * i / half);
      f.data[n * freq_dim + i] = std::sin(t[n] * w);
      f.data[n * freq_dim + half + i] = std::cos(t[n] * w);
    }
  return l2(silu(l1(constant(std::move(f)))));
}

void TimeEmbedding::collect(ParamList& out, const std::string& prefix) const {
  l1.collect(out, prefix + ".l1");
  l2.collect(out, prefix + ".l2");
}

// --- UNet -------------------------------------------------------------------

UNetEncoder::UNetEncoder(int in_channels, int c0, int cond_dim, std::mt19937_64& rng)
    : conv_in(in_channels, c0, 3, 1, 1, rng),
      down(c0, c0, 3, 2, 1, rng),
      res0(c0, c0, cond_dim, rng),
      res1(c0, 2 * c0, cond_dim, rng),
      mid(2 * c0, 2 * c0, cond_dim, rng) {}

UNetFeatures UNetEncoder::operator()(const Var& x, const Var& cond) const {
  UNetFeatures f;
  f.h0 = conv_in(x);
  f.h1 = res0(f.h0, cond);
  f.h3 = res1(down(f.h1), cond);
  f.mid = mid(f.h3, cond);
  return f;
}

void UNetEncoder::collect(ParamList& out, const std::string& prefix) const {
  conv_in.collect(out, prefix + ".conv_in");
  res0.collect(out, prefix + ".res0");
  down.collect(out, prefix + ".down");
  res1.collect(out, prefix + ".res1");
  mid.collect(out, prefix + ".mid");
}

UNetDecoder::UNetDecoder(int out_channels, int c0, int cond_dim, std::mt19937_64& rng)
    : r1(4 * c0, 2 * c0, cond_dim, rng),
      r2(2 * c0, c0, cond_dim, rng),
      r3(2 * c0, c0, cond_dim, rng),
      up(2 * c0, c0, 3, 1, 1, rng),
      conv_out(c0, out_channels, 3, 1, 1, rng) {}

Var UNetDecoder::operator()(const UNetFeatures& f, const Var& cond) const {
  Var h = r1(concat(f.mid, f.h3), cond);
  h = up(upsample_nearest2x(h));
  h = r2(concat(h, f.h1), cond);
  h = r3(concat(h, f.h0), cond);
  return conv_out(silu(h));
}

void UNetDecoder::collect(ParamList& out, const std::string& prefix) const {
  r1.collect(out, prefix + ".r1");
  up.collect(out, prefix + ".up");
  r2.collect(out, prefix + ".r2");
  r3.collect(out, prefix + ".r3");
  conv_out.collect(out, prefix + ".conv_out");
}

ControlAdapter::ControlAdapter(int in_channels, int c0, int cond_dim, std::mt19937_64& rng)
    : enc(in_channels, c0, cond_dim, rng),
      z0(Conv2d::zeros(c0, c0)),
      z1(Conv2d::zeros(c0, c0)),
      z3(Conv2d::zeros(2 * c0, 2 * c0)),
      zmid(Conv2d::zeros(2 * c0, 2 * c0)) {}

UNetFeatures ControlAdapter::operator()(const Var& c_eeg, const Var& cond) const {
  const UNetFeatures f = enc(c_eeg, cond);
  return {z0(f.h0), z1(f.h1), z3(f.h3), zmid(f.mid)};
}

void ControlAdapter::collect(ParamList& out, const std::string& prefix) const {
  enc.collect(out, prefix + ".enc");
  z0.collect(out, prefix + ".zero0");
  z1.collect(out, prefix + ".zero1");
  z3.collect(out, prefix + ".zero3");
  zmid.collect(out, prefix + ".zero_mid");
}

// --- EEG projection ---------------------------------------------------------

EegProjector::EegProjector(int eeg_channels, int samples, int filters, int bins_, int latent_channels_,
                           int latent_size_, std::mt19937_64& rng)
    : c1(eeg_channels, filters, 5, 2, 2, rng),
      c2(filters, filters, 5, 2, 2, rng),
      latent_channels(latent_channels_),
      latent_size(latent_size_) {
  const int l1 = (samples + 2 * 2 - 5) / 2 + 1;
  const int l2 = (l1 + 2 * 2 - 5) / 2 + 1;
  if (l2 < 1) fail(Errc::ConfigValidationError, "EEG window too short for the projection convolutions");
  bins = std::min(bins_, l2);
  fc = Linear(filters * bins, latent_channels * latent_size * latent_size, rng);
}

Var EegProjector::operator()(const Var& eeg) const {
  const int n = eeg->value.dim(0);
  Var h = silu(c2(silu(c1(eeg))));
  h = adaptive_avg_pool1d(h, bins);
  h = reshape(h, {n, h->value.dim(1) * bins});
  return reshape(fc(h), {n, latent_channels, latent_size, latent_size});
}

void EegProjector::collect(ParamList& out, const std::string& prefix) const {
  c1.collect(out, prefix + ".conv1");
  c2.collect(out, prefix + ".conv2");
  fc.collect(out, prefix + ".fc");
}

}  // namespace eegrecon
