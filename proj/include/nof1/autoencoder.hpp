#ifndef NOF1_AUTOENCODER_HPP
#define NOF1_AUTOENCODER_HPP

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "nof1/adam.hpp"
#include "nof1/common.hpp"
#include "nof1/dataio.hpp"
#include "nof1/rng.hpp"
#include "nof1/tensor.hpp"

namespace nof1 {

/// Convolutional autoencoder configuration.
///
/// Encoder: 7 conv layers (3x3, pad 1, per-layer stride) each followed by
/// ReLU, flatten, then a ReLU linear layer to latent_dim. Decoder: linear
/// from latent to a (H/32, W/32) map, then 5 pairs of (3x3 conv, stride-2
/// 4x4 transposed conv), ReLU throughout, sigmoid after the last pair.
/// Five stride-2 upsamplings mean input sides must be multiples of 32.
struct AEConfig {
    std::pair<int, int> input_hw{64, 64};
    int latent_dim = 64;
    std::vector<int> encoder_channels{16, 32, 32, 64, 64, 128, 128};
    std::vector<int> encoder_strides{2, 1, 2, 1, 2, 1, 2};
    std::vector<int> decoder_channels{128, 64, 32, 16, 8};
    int epochs = 10;
    int batch_size = 32;
    double learning_rate = 0.001;
    double init_gain = 1.5;  // scale on the Kaiming-uniform bound
    std::uint64_t seed = 0;

    void validate() const {
        if (latent_dim < 1) throw ConfigError("AEConfig: latent_dim must be >= 1");
        if (encoder_channels.size() != 7)
            throw ConfigError("AEConfig: encoder needs exactly 7 conv layers, got " +
                              std::to_string(encoder_channels.size()));
        if (encoder_strides.size() != 7) throw ConfigError("AEConfig: encoder needs 7 strides");
        if (decoder_channels.size() != 5)
            throw ConfigError("AEConfig: decoder needs exactly 5 conv/transpose pairs, got " +
                              std::to_string(decoder_channels.size()));
        for (int c : encoder_channels)
            if (c < 1) throw ConfigError("AEConfig: encoder channel counts must be positive");
        for (int c : decoder_channels)
            if (c < 1) throw ConfigError("AEConfig: decoder channel counts must be positive");
        for (int s : encoder_strides)
            if (s < 1) throw ConfigError("AEConfig: strides must be >= 1");
        if (epochs < 0 || batch_size < 1) throw ConfigError("AEConfig: bad epochs or batch_size");
        if (learning_rate < 0) throw ConfigError("AEConfig: negative learning rate");
        if (init_gain <= 0) throw ConfigError("AEConfig: init_gain must be positive");
        const auto [h, w] = input_hw;
        if (h < 32 || w < 32 || h % 32 != 0 || w % 32 != 0)
            throw ConfigError("AEConfig: decoder reshape needs input sides divisible by 32 (got " +
                              std::to_string(h) + "x" + std::to_string(w) +
                              "); the 5 stride-2 upsampling pairs reconstruct H = 32 * (H/32)");
    }

    std::pair<int, int> encoder_output_hw() const {
        int h = input_hw.first, w = input_hw.second;
        for (int s : encoder_strides) {
            h = (h - 1) / s + 1;  // 3x3 conv with pad 1
            w = (w - 1) / s + 1;
        }
        return {h, w};
    }
    std::pair<int, int> decoder_seed_hw() const { return {input_hw.first / 32, input_hw.second / 32}; }
};

/// n_images x latent_dim embedding matrix in chronological row order.
struct EmbeddingMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major
    std::vector<std::string> participant_ids;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct LossHistory {
    std::vector<double> train;  // per-epoch mean over samples seen
    std::vector<double> val;    // per-epoch loss on the validation copy
};

class AEModel {
public:
    AEModel() = default;
    explicit AEModel(AEConfig config) : config_(std::move(config)) { init_params(); }

    // deep copies: parameter buffers are cloned so two models never alias
    AEModel(const AEModel& other) { *this = other; }
    AEModel& operator=(const AEModel& other) {
        if (this == &other) return *this;
        config_ = other.config_;
        names_ = other.names_;
        history_ = other.history_;
        opt_ = other.opt_;
        layout_ = other.layout_;
        params_.clear();
        params_.reserve(other.params_.size());
        for (const auto& p : other.params_) {
            Tensor c = p.clone();
            c.set_tracked();
            params_.push_back(std::move(c));
        }
        return *this;
    }
    AEModel(AEModel&&) = default;
    AEModel& operator=(AEModel&&) = default;

    const AEConfig& config() const { return config_; }
    LossHistory& history() { return history_; }
    const LossHistory& history() const { return history_; }

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }
    const std::vector<std::string>& parameter_names() const { return names_; }

    std::size_t total_parameters() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    AdamState& optimizer_state() { return opt_; }

    /// Encoder forward: [N,3,H,W] -> [N,latent_dim].
    Tensor encode(const Tensor& batch, Tape* tape = nullptr) const {
        Tensor h = batch;
        for (int l = 0; l < 7; ++l)
            h = relu(conv2d(h, params_[layout_.enc_k[l]], params_[layout_.enc_b[l]],
                            config_.encoder_strides[l], 1, tape), tape);
        const std::size_t n = h.shape()[0];
        const std::size_t flat = h.size() / n;
        h = reshape(h, {n, flat}, tape);
        // the linear output layer is the embedding head; no activation so the
        // latent space is not confined to the nonnegative orthant
        return linear(h, params_[layout_.enc_lin_w], params_[layout_.enc_lin_b], tape);
    }

    /// Decoder forward: [N,latent_dim] -> [N,3,H,W] with values in (0,1).
    Tensor decode(const Tensor& latent, Tape* tape = nullptr) const {
        const auto [sh, sw] = config_.decoder_seed_hw();
        Tensor h = relu(linear(latent, params_[layout_.dec_lin_w], params_[layout_.dec_lin_b], tape), tape);
        const std::size_t n = latent.shape()[0];
        h = reshape(h, {n, static_cast<std::size_t>(config_.decoder_channels[0]),
                        static_cast<std::size_t>(sh), static_cast<std::size_t>(sw)}, tape);
        for (int l = 0; l < 5; ++l) {
            h = relu(conv2d(h, params_[layout_.dec_conv_k[l]], params_[layout_.dec_conv_b[l]], 1, 1, tape), tape);
            h = conv_transpose2d(h, params_[layout_.dec_tconv_k[l]], params_[layout_.dec_tconv_b[l]], 2, 1, tape);
            if (l < 4) h = relu(h, tape);
        }
        return sigmoid(h, tape);
    }

    Tensor forward(const Tensor& batch, Tape* tape = nullptr) const { return decode(encode(batch, tape), tape); }

private:
    void init_params() {
        config_.validate();
        Rng rng(config_.seed);
        auto kaiming = [&rng, this](Shape shape, std::size_t fan_in) {
            const double bound = config_.init_gain * std::sqrt(6.0 / static_cast<double>(fan_in));
            std::vector<double> v(shape_numel(shape));
            for (double& x : v) x = rng.uniform(-bound, bound);
            return Tensor::from(std::move(shape), std::move(v));
        };
        auto add_param = [this](const std::string& name, Tensor t) {
            t.set_tracked();
            names_.push_back(name);
            params_.push_back(std::move(t));
            return params_.size() - 1;
        };

        int cin = 3;
        for (int l = 0; l < 7; ++l) {
            const int cout = config_.encoder_channels[l];
            layout_.enc_k[l] = add_param("enc.conv" + std::to_string(l) + ".kernel",
                                         kaiming({static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), 3, 3},
                                                 static_cast<std::size_t>(cin) * 9));
            layout_.enc_b[l] = add_param("enc.conv" + std::to_string(l) + ".bias",
                                         Tensor::zeros({static_cast<std::size_t>(cout)}));
            cin = cout;
        }
        const auto [eh, ew] = encoder_output_hw_checked();
        const std::size_t flat = static_cast<std::size_t>(cin) * eh * ew;
        layout_.enc_lin_w = add_param("enc.linear.weight",
                                      kaiming({static_cast<std::size_t>(config_.latent_dim), flat}, flat));
        layout_.enc_lin_b = add_param("enc.linear.bias", Tensor::zeros({static_cast<std::size_t>(config_.latent_dim)}));

        const auto [sh, sw] = config_.decoder_seed_hw();
        const std::size_t dseed = static_cast<std::size_t>(config_.decoder_channels[0]) * sh * sw;
        layout_.dec_lin_w = add_param("dec.linear.weight",
                                      kaiming({dseed, static_cast<std::size_t>(config_.latent_dim)},
                                              static_cast<std::size_t>(config_.latent_dim)));
        layout_.dec_lin_b = add_param("dec.linear.bias", Tensor::zeros({dseed}));

        for (int l = 0; l < 5; ++l) {
            const int c_in = config_.decoder_channels[l];
            const int c_out = (l < 4) ? config_.decoder_channels[l + 1] : 3;
            layout_.dec_conv_k[l] = add_param("dec.pair" + std::to_string(l) + ".conv.kernel",
                                              kaiming({static_cast<std::size_t>(c_in), static_cast<std::size_t>(c_in), 3, 3},
                                                      static_cast<std::size_t>(c_in) * 9));
            layout_.dec_conv_b[l] = add_param("dec.pair" + std::to_string(l) + ".conv.bias",
                                              Tensor::zeros({static_cast<std::size_t>(c_in)}));
            layout_.dec_tconv_k[l] = add_param("dec.pair" + std::to_string(l) + ".tconv.kernel",
                                               kaiming({static_cast<std::size_t>(c_in), static_cast<std::size_t>(c_out), 4, 4},
                                                       static_cast<std::size_t>(c_in) * 16));
            layout_.dec_tconv_b[l] = add_param("dec.pair" + std::to_string(l) + ".tconv.bias",
                                               Tensor::zeros({static_cast<std::size_t>(c_out)}));
        }
    }

    std::pair<std::size_t, std::size_t> encoder_output_hw_checked() const {
        const auto [h, w] = config_.encoder_output_hw();
        if (h < 1 || w < 1)
            throw ConfigError("AEConfig: encoder collapses the feature map to zero size");
        return {static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
    }

    struct Layout {
        std::array<std::size_t, 7> enc_k{}, enc_b{};
        std::size_t enc_lin_w = 0, enc_lin_b = 0;
        std::size_t dec_lin_w = 0, dec_lin_b = 0;
        std::array<std::size_t, 5> dec_conv_k{}, dec_conv_b{}, dec_tconv_k{}, dec_tconv_b{};
    };

    AEConfig config_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    LossHistory history_;
    AdamState opt_;
    Layout layout_;

    friend void save_model(const AEModel&, const std::string&);
    friend AEModel load_model(const std::string&);
};

/// Seeded construction; two builds with the same config give identical
/// parameters.
inline AEModel build(const AEConfig& config) { return AEModel(config); }

namespace detail {

inline Tensor make_batch(const std::vector<ImageSample>& samples, const std::vector<std::size_t>& idx,
                         std::size_t begin, std::size_t end) {
    const Shape& s0 = samples[idx[begin]].pixels.shape();
    if (s0.size() != 3)
        throw ConfigError("make_batch: sample " + std::to_string(idx[begin]) + " pixels must be [C,H,W], got " +
                          shape_str(s0));
    const std::size_t n = end - begin;
    Tensor batch = Tensor::zeros({n, s0[0], s0[1], s0[2]});
    const std::size_t stride = shape_numel(s0);
    for (std::size_t i = 0; i < n; ++i) {
        const Tensor& px = samples[idx[begin + i]].pixels;
        if (px.shape() != s0)
            throw ConfigError("train: sample " + std::to_string(idx[begin + i]) + " has shape " +
                              shape_str(px.shape()) + ", expected " + shape_str(s0));
        std::copy(px.data().begin(), px.data().end(), batch.data().begin() + i * stride);
    }
    return batch;
}

inline double dataset_loss(const AEModel& model, const std::vector<ImageSample>& set, std::size_t batch_size) {
    double sse_weighted = 0.0;
    std::size_t total = 0;
    std::vector<std::size_t> idx(set.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t b = 0; b < set.size(); b += batch_size) {
        const std::size_t e = std::min(set.size(), b + batch_size);
        Tensor batch = make_batch(set, idx, b, e);
        const double l = mse_loss(model.forward(batch), batch).item();
        sse_weighted += l * static_cast<double>(batch.size());
        total += batch.size();
    }
    return sse_weighted / static_cast<double>(total);
}

}  // namespace detail

/// Minibatch Adam on reconstruction MSE. The shuffle stream is seeded from
/// config.seed, so identical (inputs, seed) give bitwise-identical models.
/// Train and validation sets are expected to be independently augmented
/// copies; they must not alias each other's pixel buffers.
inline AEModel train(AEModel model, const std::vector<ImageSample>& train_set,
                     const std::vector<ImageSample>& val_set, const AEConfig& config) {
    if (train_set.empty()) throw UsageError("train: empty training set");
    for (const auto& tr : train_set)
        for (const auto& va : val_set)
            if (tr.pixels.same_buffer(va.pixels))
                throw UsageError("train: validation sample aliases a training tensor");

    AdamState& opt = model.optimizer_state();
    opt.lr = config.learning_rate;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(config.seed, 0x5u + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double sse_weighted = 0.0;
        std::size_t total = 0;
        const std::size_t bs = static_cast<std::size_t>(config.batch_size);
        for (std::size_t b = 0; b < order.size(); b += bs) {
            const std::size_t e = std::min(order.size(), b + bs);
            Tensor batch = detail::make_batch(train_set, order, b, e);
            Tape tape;
            double loss_value = 0.0;
            try {
                Tensor loss = mse_loss(model.forward(batch, &tape), batch, &tape);
                loss_value = loss.item();
                zero_grads(model.parameters());
                tape.backward(loss);
            } catch (const NumericError& err) {
                throw NumericError("train: epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(b / bs) + ": " + err.what());
            }
            adam_step(model.parameters(), opt);
            sse_weighted += loss_value * static_cast<double>(batch.size());
            total += batch.size();
        }
        model.history().train.push_back(sse_weighted / static_cast<double>(total));
        model.history().val.push_back(
            val_set.empty() ? 0.0 : detail::dataset_loss(model, val_set, bs));
    }
    return model;
}

/// Deterministic encoder pass over samples in their given order.
inline EmbeddingMatrix embed(const AEModel& model, const std::vector<ImageSample>& samples) {
    EmbeddingMatrix m;
    m.rows = samples.size();
    m.cols = static_cast<std::size_t>(model.config().latent_dim);
    m.values.resize(m.rows * m.cols);
    m.participant_ids.reserve(m.rows);
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t bs = static_cast<std::size_t>(model.config().batch_size);
    for (std::size_t b = 0; b < samples.size(); b += bs) {
        const std::size_t e = std::min(samples.size(), b + bs);
        Tensor latent = model.encode(detail::make_batch(samples, idx, b, e));
        std::copy(latent.data().begin(), latent.data().end(), m.values.begin() + b * m.cols);
    }
    for (const auto& s : samples) m.participant_ids.push_back(s.record.participant_id);
    if (!all_finite(m.values)) throw NumericError("embed: non-finite embedding");
    return m;
}

/// Full autoencoder pass; outputs live in (0,1) through the sigmoid head.
inline std::vector<Tensor> reconstruct(const AEModel& model, const std::vector<ImageSample>& samples) {
    std::vector<Tensor> out;
    out.reserve(samples.size());
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    const std::size_t bs = static_cast<std::size_t>(model.config().batch_size);
    for (std::size_t b = 0; b < samples.size(); b += bs) {
        const std::size_t e = std::min(samples.size(), b + bs);
        Tensor rec = model.forward(detail::make_batch(samples, idx, b, e));
        const Shape& s = rec.shape();
        const std::size_t stride = s[1] * s[2] * s[3];
        for (std::size_t i = 0; i < e - b; ++i) {
            Tensor img = Tensor::zeros({s[1], s[2], s[3]});
            std::copy(rec.data().begin() + i * stride, rec.data().begin() + (i + 1) * stride,
                      img.data().begin());
            out.push_back(std::move(img));
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// Checkpoint format NOF1AE01: config block, loss history, then raw
// little-endian doubles per parameter. load(save(m)) == m bitwise.
// --------------------------------------------------------------------------

namespace detail {

template <typename T>
void put(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw DataError("load_model: truncated checkpoint");
    return v;
}

inline void put_vec_i32(std::ofstream& f, const std::vector<int>& v) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(v.size()));
    for (int x : v) put<std::int32_t>(f, x);
}

inline std::vector<int> get_vec_i32(std::ifstream& f) {
    std::vector<int> v(get<std::uint32_t>(f));
    for (int& x : v) x = get<std::int32_t>(f);
    return v;
}

inline void put_vec_f64(std::ofstream& f, const std::vector<double>& v) {
    put<std::uint64_t>(f, v.size());
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
}

inline std::vector<double> get_vec_f64(std::ifstream& f) {
    std::vector<double> v(get<std::uint64_t>(f));
    f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    if (!f) throw DataError("load_model: truncated checkpoint");
    return v;
}

}  // namespace detail

inline void save_model(const AEModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_model: cannot open " + path + " for writing");
    f.write("NOF1AE01", 8);
    const AEConfig& c = model.config_;
    detail::put<std::int32_t>(f, c.input_hw.first);
    detail::put<std::int32_t>(f, c.input_hw.second);
    detail::put<std::int32_t>(f, c.latent_dim);
    detail::put_vec_i32(f, c.encoder_channels);
    detail::put_vec_i32(f, c.encoder_strides);
    detail::put_vec_i32(f, c.decoder_channels);
    detail::put<std::int32_t>(f, c.epochs);
    detail::put<std::int32_t>(f, c.batch_size);
    detail::put<double>(f, c.learning_rate);
    detail::put<double>(f, c.init_gain);
    detail::put<std::uint64_t>(f, c.seed);
    detail::put_vec_f64(f, model.history_.train);
    detail::put_vec_f64(f, model.history_.val);
    detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(model.params_.size()));
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
        const std::string& name = model.names_[i];
        detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_vec_f64(f, model.params_[i].data());
    }
    if (!f) throw DataError("save_model: write failed for " + path);
}

inline AEModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_model: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "NOF1AE01")
        throw DataError("load_model: " + path + " is not a NOF1AE01 checkpoint");
    AEConfig c;
    c.input_hw.first = detail::get<std::int32_t>(f);
    c.input_hw.second = detail::get<std::int32_t>(f);
    c.latent_dim = detail::get<std::int32_t>(f);
    c.encoder_channels = detail::get_vec_i32(f);
    c.encoder_strides = detail::get_vec_i32(f);
    c.decoder_channels = detail::get_vec_i32(f);
    c.epochs = detail::get<std::int32_t>(f);
    c.batch_size = detail::get<std::int32_t>(f);
    c.learning_rate = detail::get<double>(f);
    c.init_gain = detail::get<double>(f);
    c.seed = detail::get<std::uint64_t>(f);
    AEModel model(c);
    model.history_.train = detail::get_vec_f64(f);
    model.history_.val = detail::get_vec_f64(f);
    const std::uint32_t n_params = detail::get<std::uint32_t>(f);
    if (n_params != model.params_.size()) throw DataError("load_model: parameter count mismatch");
    for (std::size_t i = 0; i < n_params; ++i) {
        const std::uint32_t len = detail::get<std::uint32_t>(f);
        std::string name(len, '\0');
        f.read(name.data(), len);
        if (name != model.names_[i]) throw DataError("load_model: parameter order mismatch at " + name);
        auto values = detail::get_vec_f64(f);
        if (values.size() != model.params_[i].size())
            throw DataError("load_model: size mismatch for " + name);
        model.params_[i].data() = std::move(values);
    }
    return model;
}

}  // namespace nof1

#endif
