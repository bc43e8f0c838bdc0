#include "corrflow/encoder.hpp"

#include <string>

#include "corrflow/rng.hpp"
#include "corrflow/sample.hpp"

namespace corrflow {

namespace {
int down_layer_base(int stage) { return 3 * stage; }         // stage >= 1
int up_layer_base(int levels, int stage) {                   // stage >= 1
    return 3 * levels + 3 * (stage - 1);
}
}  // namespace

EncoderWeights EncoderWeights::zeros(int levels, int base_channels, int in_channels) {
    if (levels < 1 || base_channels < 1)
        throw ShapeError("EncoderWeights: levels and base_channels must be positive");
    EncoderWeights w;
    w.levels = levels;
    w.base_channels = base_channels;
    w.in_channels = in_channels;
    const int B = base_channels;
    w.layers.push_back(ConvParams::zeros(3, in_channels, B));
    w.layers.push_back(ConvParams::zeros(3, B, B));
    w.layers.push_back(ConvParams::zeros(3, B, B));
    for (int s = 1; s < levels; ++s) {
        const int ci = B << (s - 1), co = B << s;
        w.layers.push_back(ConvParams::zeros(3, ci, co, /*stride=*/2, /*padding=*/1));
        w.layers.push_back(ConvParams::zeros(3, co, co));
        w.layers.push_back(ConvParams::zeros(3, co, co));
    }
    for (int u = 1; u < levels; ++u) {
        const int out = B << (levels - 1 - u);
        const int cat = 3 * out;  // upsampled (2*out) + skip (out)
        w.layers.push_back(ConvParams::zeros(1, cat, out));
        w.layers.push_back(ConvParams::zeros(3, cat, out));
        w.layers.push_back(ConvParams::zeros(3, out, out));
    }
    w.validate();
    return w;
}

EncoderWeights EncoderWeights::random(Rng& rng, int levels, int base_channels, int in_channels) {
    EncoderWeights w = zeros(levels, base_channels, in_channels);
    for (ConvParams& p : w.layers) {
        const double scale = std::sqrt(2.0 / (static_cast<double>(p.k) * p.k * p.c_in));
        for (real& v : p.kernel) v = static_cast<real>(rng.normal(0.0, scale));
    }
    return w;
}

EncoderWeights EncoderWeights::from_layers(std::vector<ConvParams> layers) {
    if (layers.size() < 3 || layers.size() % 6 != 3)
        throw ShapeError("EncoderWeights: layer count " + std::to_string(layers.size()) +
                         " does not match the 6L-3 layout");
    const int levels = (static_cast<int>(layers.size()) + 3) / 6;
    EncoderWeights w;
    w.levels = levels;
    w.base_channels = layers[0].c_out;
    w.in_channels = layers[0].c_in;
    w.layers = std::move(layers);
    w.validate();
    return w;
}

void EncoderWeights::validate() const {
    const int expected = 6 * levels - 3;
    if (static_cast<int>(layers.size()) != expected)
        throw ShapeError("EncoderWeights: expected " + std::to_string(expected) +
                         " layers for L=" + std::to_string(levels) + ", got " +
                         std::to_string(layers.size()));
    EncoderWeights ref = zeros(levels, base_channels, in_channels);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].validate();
        const ConvParams& a = layers[i];
        const ConvParams& b = ref.layers[i];
        if (a.k != b.k || a.c_in != b.c_in || a.c_out != b.c_out || a.stride != b.stride ||
            a.padding != b.padding)
            throw ShapeError("EncoderWeights: layer " + std::to_string(i) + " is k" +
                             std::to_string(a.k) + " " + std::to_string(a.c_in) + "->" +
                             std::to_string(a.c_out) + " s" + std::to_string(a.stride) +
                             ", manifest wants k" + std::to_string(b.k) + " " +
                             std::to_string(b.c_in) + "->" + std::to_string(b.c_out) + " s" +
                             std::to_string(b.stride));
    }
}

std::size_t EncoderWeights::param_count() const {
    std::size_t n = 0;
    for (const ConvParams& p : layers) n += p.param_count();
    return n;
}

Pyramid extract_pyramid_encoder(const Tensor& image, const EncoderWeights& w,
                                EncoderTape* tape) {
    w.validate();
    if (image.channels() != w.in_channels)
        throw ShapeError("extract_pyramid_encoder: image " + image.shape_str() +
                         " vs encoder expecting " + std::to_string(w.in_channels) +
                         " channels");
    require_pyramid_compatible(image.height(), image.width(), w.levels,
                               "extract_pyramid_encoder");
    const int L = w.levels;
    if (tape) {
        tape->input = image;
        tape->conv_inputs.assign(w.layers.size(), Tensor());
        tape->lrelu_pres.assign(w.layers.size(), Tensor());
        tape->up_inputs.assign(L - 1, Tensor());
        tape->skip_outputs.assign(L, Tensor());
    }

    auto run_conv = [&](int i, const Tensor& in) {
        if (tape) tape->conv_inputs[i] = in;
        return conv2d(in, w.layers[i]);
    };
    auto run_lrelu = [&](int i, Tensor pre) {
        if (tape) tape->lrelu_pres[i] = pre;
        return leaky_relu(pre, kEncoderLeakSlope);
    };
    auto add_into = [](Tensor a, const Tensor& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] += b.values()[i];
        return a;
    };

    Tensor x = run_lrelu(0, run_conv(0, image));
    // residual block: x + c2(lrelu(c1(x)))
    auto resblock = [&](int i, Tensor in) {
        Tensor t = run_lrelu(i, run_conv(i, in));
        t = run_conv(i + 1, t);
        return add_into(std::move(in), t);
    };
    x = resblock(1, std::move(x));
    std::vector<Tensor> skips(L);
    skips[0] = x;
    for (int s = 1; s < L; ++s) {
        const int i = down_layer_base(s);
        x = run_lrelu(i, run_conv(i, x));
        x = resblock(i + 1, std::move(x));
        skips[s] = x;
    }
    if (tape) tape->skip_outputs = skips;

    Pyramid pyr;
    pyr.levels.resize(L);
    pyr.levels[0] = skips[L - 1];
    Tensor u = skips[L - 1];
    for (int stage = 1; stage < L; ++stage) {
        if (tape) tape->up_inputs[stage - 1] = u;
        Tensor up = resample2x(u, Resample::up);
        Tensor cat = concat_channels(up, skips[L - 1 - stage]);
        const int i = up_layer_base(L, stage);
        Tensor shortcut = run_conv(i, cat);
        Tensor t = run_lrelu(i + 1, run_conv(i + 1, cat));
        t = run_conv(i + 2, t);
        u = add_into(std::move(shortcut), t);
        pyr.levels[stage] = u;
    }
    pyr.validate();
    return pyr;
}

void encoder_backward(const EncoderWeights& w, const EncoderTape& tape,
                      const std::vector<Tensor>& g_levels, EncoderWeights& g_weights) {
    const int L = w.levels;
    if (static_cast<int>(g_levels.size()) != L)
        throw ShapeError("encoder_backward: need one gradient slot per level");
    if (g_weights.layers.size() != w.layers.size())
        g_weights = EncoderWeights::zeros(L, w.base_channels, w.in_channels);

    auto shaped_like = [](const Tensor& t) { return Tensor(t.height(), t.width(), t.channels()); };
    auto maybe_add = [](Tensor& dst, const Tensor& src) {
        if (src.size() == 0) return;
        for (std::size_t i = 0; i < dst.size(); ++i) dst.values()[i] += src.values()[i];
    };

    std::vector<Tensor> g_skips(L);
    for (int s = 0; s < L; ++s) g_skips[s] = shaped_like(tape.skip_outputs[s]);

    // Up path, finest stage first.
    Tensor g_u;
    for (int stage = L - 1; stage >= 1; --stage) {
        const int i = up_layer_base(L, stage);
        Tensor g_out(tape.up_inputs[stage - 1].height() * 2,
                     tape.up_inputs[stage - 1].width() * 2, w.layers[i].c_out);
        maybe_add(g_out, g_levels[stage]);
        maybe_add(g_out, g_u);  // empty on the first processed stage
        // out = proj(cat) + c2(lrelu(c1(cat)))
        Tensor g_cat = shaped_like(tape.conv_inputs[i]);
        Tensor g_t1a = shaped_like(tape.lrelu_pres[i + 1]);
        conv2d_vjp(tape.conv_inputs[i + 2], w.layers[i + 2], g_out, g_t1a,
                   g_weights.layers[i + 2]);
        Tensor g_t1 = shaped_like(tape.lrelu_pres[i + 1]);
        leaky_relu_vjp(tape.lrelu_pres[i + 1], kEncoderLeakSlope, g_t1a, g_t1);
        conv2d_vjp(tape.conv_inputs[i + 1], w.layers[i + 1], g_t1, g_cat,
                   g_weights.layers[i + 1]);
        conv2d_vjp(tape.conv_inputs[i], w.layers[i], g_out, g_cat, g_weights.layers[i]);
        // split into upsampled part and skip part
        const Tensor& up_in = tape.up_inputs[stage - 1];
        Tensor g_up(up_in.height() * 2, up_in.width() * 2, up_in.channels());
        Tensor g_skip = shaped_like(tape.skip_outputs[L - 1 - stage]);
        split_channels(g_cat, g_up, g_skip);
        maybe_add(g_skips[L - 1 - stage], g_skip);
        Tensor g_prev = shaped_like(up_in);
        resample2x_vjp(up_in, Resample::up, g_up, g_prev);
        g_u = std::move(g_prev);
    }

    // Bottom: grad from up chain plus the coarsest level output.
    Tensor g_x = shaped_like(tape.skip_outputs[L - 1]);
    maybe_add(g_x, g_u);
    maybe_add(g_x, g_levels[0]);

    // Down path backward.
    auto resblock_backward = [&](int i, Tensor g_out) {
        // out = in + c2(lrelu(c1(in)))
        Tensor g_t1a = shaped_like(tape.lrelu_pres[i]);
        conv2d_vjp(tape.conv_inputs[i + 1], w.layers[i + 1], g_out, g_t1a,
                   g_weights.layers[i + 1]);
        Tensor g_t1 = shaped_like(tape.lrelu_pres[i]);
        leaky_relu_vjp(tape.lrelu_pres[i], kEncoderLeakSlope, g_t1a, g_t1);
        Tensor g_in = std::move(g_out);  // identity branch
        conv2d_vjp(tape.conv_inputs[i], w.layers[i], g_t1, g_in, g_weights.layers[i]);
        return g_in;
    };

    for (int s = L - 1; s >= 1; --s) {
        const int i = down_layer_base(s);
        Tensor g_res_in = resblock_backward(i + 1, std::move(g_x));
        Tensor g_pre = shaped_like(tape.lrelu_pres[i]);
        leaky_relu_vjp(tape.lrelu_pres[i], kEncoderLeakSlope, g_res_in, g_pre);
        Tensor g_prev = shaped_like(tape.conv_inputs[i]);
        conv2d_vjp(tape.conv_inputs[i], w.layers[i], g_pre, g_prev, g_weights.layers[i]);
        g_x = std::move(g_prev);
        maybe_add(g_x, g_skips[s - 1]);
    }
    Tensor g_stem_out = resblock_backward(1, std::move(g_x));
    Tensor g_pre0 = shaped_like(tape.lrelu_pres[0]);
    leaky_relu_vjp(tape.lrelu_pres[0], kEncoderLeakSlope, g_stem_out, g_pre0);
    Tensor g_img = shaped_like(tape.input);
    conv2d_vjp(tape.conv_inputs[0], w.layers[0], g_pre0, g_img, g_weights.layers[0]);
    // image gradient discarded
}

}  // namespace corrflow
