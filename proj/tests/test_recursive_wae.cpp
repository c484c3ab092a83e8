#include <random>
#include <set>

#include <gtest/gtest.h>

#include "gramtex/error.hpp"
#include "gramtex/recursive_wae.hpp"
#include "support/finite_difference.hpp"
#include "support/toy_model.hpp"

using namespace gramtex;
using gramtex::testing::central_difference;
using gramtex::testing::random_gram_set;
using gramtex::testing::random_matrix;
using gramtex::testing::random_spd;
using gramtex::testing::random_vector;
using gramtex::testing::relative_error;
using gramtex::testing::toy_config;

namespace {

Affine random_affine(int in, int out, std::mt19937_64& rng) {
  return {random_matrix(out, in, rng), random_vector(out, rng)};
}

Vector relu_v(const Vector& x) { return x.cwiseMax(0.0); }

// Also moves h^(0) off zero, where relu([h; v]) sits on its kink.
void randomize_biases(GramWae& model, std::mt19937_64& rng) {
  for (auto& ref : parameter_refs(model)) {
    if (ref.name.ends_with("/bias") || ref.name.ends_with("initial_hidden")) {
      ref.map() = random_matrix(ref.rows, ref.cols, rng);
    }
  }
}

// Checks every autoencoder parameter and every input Gram entry of
// L = sum_b <R_b, decode(encode(X))_b> against central differences.
void check_autoencoder_gradients(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GramWae model = init_model(config, seed);
  randomize_biases(model, rng);
  std::vector<GramSet> inputs{random_gram_set(config, rng), random_gram_set(config, rng)};
  std::vector<GramSet> weights{random_gram_set(config, rng), random_gram_set(config, rng)};
  for (auto& w : weights) {
    for (auto& g : w.grams) g = random_matrix(g.rows(), g.cols(), rng);
  }

  auto loss = [&] {
    GramBatch batch{&inputs[0], &inputs[1]};
    const auto out = decode_batch(model, encode_batch(model, batch));
    double s = 0.0;
    for (std::size_t b = 0; b < out.size(); ++b) {
      for (std::size_t l = 0; l < out[b].size(); ++l) {
        s += (weights[b].grams[l].array() * out[b].grams[l].array()).sum();
      }
    }
    return s;
  };

  GramBatch batch{&inputs[0], &inputs[1]};
  EncoderTrace et;
  DecoderTrace dt;
  const Matrix z = encode_batch(model, batch, &et);
  decode_batch(model, z, &dt);
  GramWae grad = zeros_like(model);
  Matrix d_latent;
  decode_backward(model, dt, weights, grad, &d_latent);
  std::vector<GramSet> d_inputs;
  encode_backward(model, batch, et, d_latent, grad, &d_inputs);

  const auto params = parameter_refs(model, ParamGroup::autoencoder);
  const auto grads = parameter_refs(grad, ParamGroup::autoencoder);
  ASSERT_EQ(params.size(), grads.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    Vector numeric(params[p].size()), analytic(params[p].size());
    for (Eigen::Index i = 0; i < params[p].size(); ++i) {
      numeric[i] = central_difference(loss, params[p].data[i]);
      analytic[i] = grads[p].data[i];
    }
    EXPECT_LT(relative_error(numeric, analytic), 1e-4) << params[p].name;
  }
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    for (std::size_t l = 0; l < inputs[b].size(); ++l) {
      Matrix& g = inputs[b].grams[l];
      Vector numeric(g.size()), analytic(g.size());
      for (Eigen::Index i = 0; i < g.size(); ++i) {
        numeric[i] = central_difference(loss, g.data()[i]);
        analytic[i] = d_inputs[b].grams[l].data()[i];
      }
      EXPECT_LT(relative_error(numeric, analytic), 1e-4) << "input " << b << " layer " << l;
    }
  }
}

}  // namespace

// ---- recursive unit -------------------------------------------------------------

TEST(RecursiveUnit, ZeroWeightsAreResidualIdentity) {
  std::mt19937_64 rng(1);
  RecursiveUnitParams p{{Affine{Matrix::Zero(4, 7), Vector::Zero(4)}, Affine{Matrix::Zero(4, 4), Vector::Zero(4)}}};
  const Matrix h = random_matrix(4, 3, rng), v = random_matrix(3, 3, rng);
  EXPECT_EQ(ru_forward(p, h, v), h);
}

TEST(RecursiveUnit, ZeroInputsAndBiasesGiveZero) {
  std::mt19937_64 rng(2);
  RecursiveUnitParams p{{random_affine(7, 4, rng), random_affine(4, 4, rng)}};
  for (auto& a : p.layers) a.bias.setZero();
  EXPECT_EQ(ru_forward(p, Matrix::Zero(4, 2), Matrix::Zero(3, 2)), Matrix::Zero(4, 2));
}

TEST(RecursiveUnit, MatchesHandUnrolledOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    RecursiveUnitParams p{{random_affine(7, 4, rng), random_affine(4, 4, rng)}};
    const Vector h = random_vector(4, rng), v = random_vector(3, rng);
    Vector x(7);
    x << h, v;
    const Vector a1 = p.layers[0].weight * relu_v(x) + p.layers[0].bias;
    const Vector a2 = p.layers[1].weight * relu_v(a1) + p.layers[1].bias;
    const Vector expected = h + a2;
    EXPECT_LT(relative_error(Vector(ru_forward(p, h, v).col(0)), expected), 1e-6);
  }
}

TEST(RecursiveUnit, WidthMismatchThrows) {
  std::mt19937_64 rng(4);
  RecursiveUnitParams p{{random_affine(7, 4, rng), random_affine(4, 4, rng)}};
  EXPECT_THROW(ru_forward(p, Matrix::Zero(4, 1), Matrix::Zero(2, 1)), Error);
}

// ---- default five-layer model -----------------------------------------------------

class DefaultModel : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    config_ = new ModelConfig(default_model_config(Backbone(vgg_style_definition(), 0).full_layer_spec()));
    model_ = new GramWae(init_model(*config_, 7));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete config_;
  }
  static ModelConfig* config_;
  static GramWae* model_;
};
ModelConfig* DefaultModel::config_ = nullptr;
GramWae* DefaultModel::model_ = nullptr;

TEST_F(DefaultModel, EncodeGivesLatentOf128) {
  std::mt19937_64 rng(5);
  const Vector z = encode(random_gram_set(*config_, rng), *model_);
  EXPECT_EQ(z.size(), 128);
  EXPECT_TRUE(z.allFinite());
}

TEST_F(DefaultModel, DecodeShapesAndExactSymmetry) {
  std::mt19937_64 rng(6);
  const GramSet g = decode(random_vector(128, rng), *model_);
  const int widths[] = {64, 128, 256, 512, 512};
  ASSERT_EQ(g.size(), 5u);
  for (std::size_t l = 0; l < 5; ++l) {
    EXPECT_EQ(g.grams[l].rows(), widths[l]);
    EXPECT_EQ(g.grams[l].cols(), widths[l]);
    EXPECT_TRUE(g.grams[l] == g.grams[l].transpose());
  }
  EXPECT_EQ(g.layer_ids, config_->layers.layer_ids());
}

TEST_F(DefaultModel, ParameterCountMatchesClosedForm) {
  EXPECT_EQ(parameter_count(*model_), count_model_params(*config_));
}

TEST_F(DefaultModel, ParameterBudget) {
  const double g2v_count = static_cast<double>(count_model_params(*config_));
  ModelConfig dense = *config_;
  dense.transform = TransformVariant::dense_fc;
  const double fc_count = static_cast<double>(count_model_params(dense));
  EXPECT_NEAR(g2v_count, 10.8e6, 0.2 * 10.8e6);
  EXPECT_NEAR(fc_count, 184e6, 0.2 * 184e6);
  EXPECT_GE(fc_count / g2v_count, 14.0);
  EXPECT_LE(fc_count / g2v_count, 20.0);
}

// ---- toy configurations -----------------------------------------------------------

TEST(Encode, ZeroParametersGiveHeadBias) {
  std::mt19937_64 rng(8);
  const ModelConfig c = toy_config();
  GramWae model = zeros_like(init_model(c, 1));
  model.encoder.head.bias = random_vector(c.latent_dim, rng);
  EXPECT_EQ(encode(random_gram_set(c, rng), model), model.encoder.head.bias);
}

TEST(Encode, ZeroUnitsMakeCodeIndependentOfInput) {
  std::mt19937_64 rng(9);
  const ModelConfig c = toy_config();
  GramWae model = init_model(c, 2);
  model.encoder.initial_hidden = random_vector(c.hidden_dim, rng);
  for (auto& unit : model.encoder.units) {
    for (auto& a : unit.layers) {
      a.weight.setZero();
      a.bias.setZero();
    }
  }
  const Vector expected =
      model.encoder.head.weight * relu_v(model.encoder.initial_hidden) + model.encoder.head.bias;
  EXPECT_EQ(encode(random_gram_set(c, rng), model), expected);
  EXPECT_EQ(encode(random_gram_set(c, rng), model), expected);
}

TEST(Encode, LayerOrderMatters) {
  std::mt19937_64 rng(10);
  const ModelConfig c = toy_config({3, 3, 3});
  GramWae model = init_model(c, 3);
  randomize_biases(model, rng);
  GramSet x = random_gram_set(c, rng);
  GramSet swapped = x;
  std::swap(swapped.grams[0], swapped.grams[2]);
  EXPECT_GT((encode(x, model) - encode(swapped, model)).norm(), 1e-8);
}

TEST(Encode, LayerMismatchThrows) {
  std::mt19937_64 rng(11);
  const ModelConfig c = toy_config();
  const GramWae model = init_model(c, 4);
  GramSet x = random_gram_set(c, rng);
  x.grams.pop_back();
  x.layer_ids.pop_back();
  EXPECT_THROW(encode(x, model), Error);
}

TEST(Decode, ZeroWeightOracle) {
  std::mt19937_64 rng(12);
  const ModelConfig c = toy_config();
  GramWae model = zeros_like(init_model(c, 5));
  randomize_biases(model, rng);
  for (auto& b : model.decoder.branches) b.weight = random_matrix(b.weight.rows(), b.weight.cols(), rng);
  for (auto& p : model.decoder.v2g) p.mixing = random_matrix(p.mixing.rows(), p.mixing.cols(), rng);
  for (auto& p : model.encoder.g2v) p.basis = random_matrix(p.basis.rows(), p.basis.cols(), rng);

  const Vector z = random_vector(c.latent_dim, rng);
  const GramSet out = decode(z, model);

  // Hand recursion: zero weights leave only biases in the trunk.
  Vector h = model.decoder.head.bias;
  const std::size_t n = c.layers.size();
  for (std::size_t l = n; l-- > 0;) {
    const auto& branch = model.decoder.branches[l];
    const Vector v = branch.weight * relu_v(h) + branch.bias;
    const Vector coeff = model.decoder.v2g[l].mixing * v;
    const Matrix& u = model.encoder.g2v[l].basis;
    Matrix expected = Matrix::Zero(u.cols(), u.cols());
    for (Eigen::Index i = 0; i < u.rows(); ++i) expected += coeff[i] * u.row(i).transpose() * u.row(i);
    EXPECT_LT((out.grams[l] - expected).norm(), 1e-9 * std::max(1.0, expected.norm())) << "layer " << l;
    if (l > 0) h += model.decoder.units[0].layers.back().bias;
  }
}

TEST(Decode, UntiedBasesUseOwnProjections) {
  std::mt19937_64 rng(13);
  ModelConfig c = toy_config();
  c.tie_bases = false;
  const GramWae model = init_model(c, 6);
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    EXPECT_EQ(&model.decoder_basis(l), &model.decoder.v2g[l].basis);
  }
  c.tie_bases = true;
  const GramWae tied = init_model(c, 6);
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    EXPECT_EQ(&tied.decoder_basis(l), &tied.encoder.g2v[l].basis);
    EXPECT_EQ(tied.decoder.v2g[l].basis.size(), 0);
  }
}

TEST(Decode, WrongLatentLengthThrows) {
  const GramWae model = init_model(toy_config(), 7);
  EXPECT_THROW(decode(Vector::Zero(3), model), Error);
}

// ---- discriminator ----------------------------------------------------------------

TEST(Discriminator, ZeroParametersGiveHalf) {
  const ModelConfig c = toy_config();
  const GramWae model = zeros_like(init_model(c, 8));
  std::mt19937_64 rng(14);
  EXPECT_DOUBLE_EQ(discriminate(random_vector(c.latent_dim, rng), model.discriminator), 0.5);
}

TEST(Discriminator, MonotoneInFinalBias) {
  const ModelConfig c = toy_config();
  GramWae model = init_model(c, 9);
  std::mt19937_64 rng(15);
  const Vector z = random_vector(c.latent_dim, rng);
  double previous = discriminate(z, model.discriminator);
  for (int k = 0; k < 5; ++k) {
    model.discriminator.layers.back().bias[0] += 0.5;
    const double now = discriminate(z, model.discriminator);
    EXPECT_GT(now, previous);
    EXPECT_GT(now, 0.0);
    EXPECT_LT(now, 1.0);
    previous = now;
  }
}

TEST(Discriminator, MatchesUnrolledOracle) {
  const ModelConfig c = toy_config();
  GramWae model = init_model(c, 10);
  std::mt19937_64 rng(16);
  randomize_biases(model, rng);
  const auto& L = model.discriminator.layers;
  ASSERT_EQ(L.size(), 4u);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector z = random_vector(c.latent_dim, rng);
    const Vector x1 = L[0].weight * z + L[0].bias;
    const Vector x2 = L[1].weight * relu_v(x1) + L[1].bias;
    const Vector x3 = L[2].weight * relu_v(x2) + L[2].bias;
    const double logit = (L[3].weight * relu_v(x3) + L[3].bias)[0];
    const double expected = 1.0 / (1.0 + std::exp(-logit));
    EXPECT_LT(relative_error(discriminate(z, model.discriminator), expected), 1e-6);
  }
}

TEST(Discriminator, GradientMatchesFiniteDifferences) {
  const ModelConfig c = toy_config();
  GramWae model = init_model(c, 11);
  std::mt19937_64 rng(17);
  randomize_biases(model, rng);
  Matrix z = random_matrix(c.latent_dim, 3, rng);
  const Matrix r = random_matrix(1, 3, rng);
  auto loss = [&] { return (r.array() * discriminator_logits(model.discriminator, z).array()).sum(); };

  DiscriminatorTrace trace;
  discriminator_logits(model.discriminator, z, &trace);
  GramWae grad = zeros_like(model);
  Matrix d_z;
  discriminator_backward(model.discriminator, trace, r, &grad.discriminator, &d_z);

  const auto params = parameter_refs(model, ParamGroup::discriminator);
  const auto grads = parameter_refs(grad, ParamGroup::discriminator);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Vector numeric(params[p].size()), analytic(params[p].size());
    for (Eigen::Index i = 0; i < params[p].size(); ++i) {
      numeric[i] = central_difference(loss, params[p].data[i]);
      analytic[i] = grads[p].data[i];
    }
    EXPECT_LT(relative_error(numeric, analytic), 1e-4) << params[p].name;
  }
  Vector numeric(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) numeric[i] = central_difference(loss, z.data()[i]);
  EXPECT_LT(relative_error(numeric, Eigen::Map<const Vector>(d_z.data(), d_z.size())), 1e-4);
}

// ---- end-to-end gradients -------------------------------------------------------

TEST(AutoencoderGradient, TiedSharedRecursive) { check_autoencoder_gradients(toy_config(), 21); }

TEST(AutoencoderGradient, UntiedUnsharedRecursive) {
  ModelConfig c = toy_config();
  c.tie_bases = false;
  c.share_units = false;
  check_autoencoder_gradients(c, 22);
}

TEST(AutoencoderGradient, MlpArchitecture) {
  ModelConfig c = toy_config();
  c.architecture = Architecture::mlp;
  check_autoencoder_gradients(c, 23);
}

TEST(AutoencoderGradient, DenseFcTransform) {
  ModelConfig c = toy_config();
  c.transform = TransformVariant::dense_fc;
  check_autoencoder_gradients(c, 24);
}

TEST(AutoencoderGradient, DeeperUnits) {
  ModelConfig c = toy_config();
  c.unit_depth = 3;
  check_autoencoder_gradients(c, 25);
}

// ---- structure --------------------------------------------------------------------

TEST(Parameters, NamesAreUniqueAndCountsMatch) {
  for (int variant = 0; variant < 5; ++variant) {
    ModelConfig c = toy_config();
    c.tie_bases = variant != 1;
    c.share_units = variant != 2;
    if (variant == 3) c.architecture = Architecture::mlp;
    if (variant == 4) c.transform = TransformVariant::dense_fc;
    const GramWae model = init_model(c, 12);
    std::set<std::string> names;
    for (const auto& ref : parameter_refs(model)) EXPECT_TRUE(names.insert(ref.name).second) << ref.name;
    EXPECT_EQ(parameter_count(model), count_model_params(c)) << "variant " << variant;
  }
}

TEST(Parameters, TransformNamesFollowLayout) {
  const GramWae model = init_model(toy_config(), 13);
  std::set<std::string> names;
  for (const auto& ref : parameter_refs(model)) names.insert(ref.name);
  EXPECT_TRUE(names.contains("g2v/layer0/U"));
  EXPECT_TRUE(names.contains("g2v/layer0/W_out"));
  EXPECT_TRUE(names.contains("v2g/layer0/W_in"));
}

TEST(Parameters, InitIsDeterministicPerSeed) {
  const ModelConfig c = toy_config();
  const GramWae a = init_model(c, 14), b = init_model(c, 14), other = init_model(c, 15);
  const auto ra = parameter_refs(a), rb = parameter_refs(b), ro = parameter_refs(other);
  bool differs = false;
  for (std::size_t p = 0; p < ra.size(); ++p) {
    EXPECT_EQ(Matrix(ra[p].map()), Matrix(rb[p].map()));
    differs |= Matrix(ra[p].map()) != Matrix(ro[p].map());
  }
  EXPECT_TRUE(differs);
}

TEST(ModelConfigJson, RoundTrip) {
  ModelConfig c = toy_config();
  c.architecture = Architecture::mlp;
  c.tie_bases = false;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.layers, c.layers);
}
