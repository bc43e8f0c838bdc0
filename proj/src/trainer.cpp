#include "corrflow/trainer.hpp"

#include <cmath>
#include <string>

#include "corrflow/image.hpp"
#include "corrflow/loss.hpp"

namespace corrflow {

Pyramid FeatureExtractor::extract_a(const Tensor& image, int levels, EncoderTape* tape) const {
    if (kind == Kind::handcrafted) return extract_pyramid_handcrafted(image, levels, patch_radius);
    return extract_pyramid_encoder(image, encoder_a, tape);
}
Pyramid FeatureExtractor::extract_b(const Tensor& image, int levels, EncoderTape* tape) const {
    if (kind == Kind::handcrafted) return extract_pyramid_handcrafted(image, levels, patch_radius);
    return extract_pyramid_encoder(image, encoder_b, tape);
}
int FeatureExtractor::feature_channels(int level, int levels) const {
    if (kind == Kind::handcrafted) {
        const int side = 2 * patch_radius + 1;
        return 5 * side * side;
    }
    return encoder_a.base_channels << (levels - 1 - level);
}

namespace {

/// Gradient of the init field of a refined level back to the coarse field:
/// child coordinate = 2 * parent + subpixel, so each parent slot collects
/// twice the sum of its children's gradients.
void upsample_field_backward(const CorrField& coarse, const std::vector<real>& g_fine,
                             std::vector<real>& g_coarse) {
    const int fh = coarse.h * 2, fw = coarse.w * 2;
    for (int y = 0; y < fh; ++y) {
        const int cy_ = y >> 1;
        for (int x = 0; x < fw; ++x) {
            const int cx_ = x >> 1;
            for (int kk = 0; kk < coarse.k; ++kk) {
                const std::size_t fs = (static_cast<std::size_t>(y) * fw + x) * coarse.k + kk;
                const std::size_t cs = coarse.slot(cy_, cx_, kk);
                g_coarse[2 * cs] += 2 * g_fine[2 * fs];
                g_coarse[2 * cs + 1] += 2 * g_fine[2 * fs + 1];
            }
        }
    }
}

}  // namespace

PipelineGrads corr_pipeline_backward(const Pyramid& px, const Pyramid& py,
                                     const Tensor& target, const Tensor& exemplar,
                                     const std::vector<RefinerParams>& refiners,
                                     const MatchConfig& cfg, bool want_feature_grads) {
    const int L = px.level_count();
    if (static_cast<int>(refiners.size()) != L - 1)
        throw ShapeError("corr_pipeline_backward: need one refiner per level above coarsest");

    MatchTape tape;
    std::vector<CorrField> fields = hierarchical_match(px, py, refiners, cfg, &tape);

    PipelineGrads out;
    out.warps.reserve(L);
    for (int l = 0; l < L; ++l) {
        const Tensor ex_l = downsample_to(exemplar, fields[l].h, fields[l].w);
        out.warps.push_back(soft_warp(ex_l, fields[l], cfg.tau));
    }
    out.loss_corr = corr_loss(out.warps, target);

    out.g_refiners.reserve(L - 1);
    for (int l = 1; l < L; ++l)
        out.g_refiners.push_back(RefinerParams::zeros(px.levels[l].channels(), cfg.k,
                                                      refiners[l - 1].hidden_channels(),
                                                      refiners[l - 1].embed_channels()));
    if (want_feature_grads) {
        out.g_px.resize(L);
        out.g_py.resize(L);
        for (int l = 0; l < L; ++l) {
            out.g_px[l] = Tensor(px.levels[l].height(), px.levels[l].width(),
                                 px.levels[l].channels());
            out.g_py[l] = Tensor(py.levels[l].height(), py.levels[l].width(),
                                 py.levels[l].channels());
        }
    }

    const std::vector<Tensor> g_warp = corr_loss_grad(out.warps, target);

    // Per-level gradients on the final field, seeded by the warp and fed
    // across levels through the upsampled initialization.
    std::vector<std::vector<real>> g_coords(L), g_scores(L);
    for (int l = 0; l < L; ++l) {
        g_coords[l].assign(fields[l].slot_count() * 2, real(0));
        g_scores[l].assign(fields[l].slot_count(), real(0));
        const Tensor ex_l = downsample_to(exemplar, fields[l].h, fields[l].w);
        soft_warp_vjp(ex_l, fields[l], cfg.tau, out.warps[l].weights, g_warp[l],
                      /*g_exemplar=*/nullptr, &g_scores[l], &g_coords[l]);
    }

    for (int l = L - 1; l >= 1; --l) {
        const Tensor& fx = px.levels[l];
        const Tensor& fy = py.levels[l];
        Tensor* g_fx = want_feature_grads ? &out.g_px[l] : nullptr;
        Tensor* g_fy = want_feature_grads ? &out.g_py[l] : nullptr;
        LevelTape& lt = tape.levels[l];
        const int T = static_cast<int>(lt.iters.size());
        std::vector<real> g_c = std::move(g_coords[l]);
        std::vector<real> g_s = std::move(g_scores[l]);
        Tensor g_h;  // empty at the last iteration
        for (int t = T - 1; t >= 0; --t) {
            std::vector<real> g_prop(g_c.size(), real(0));
            g_h = gru_refine_step_backward(fx, fy, refiners[l - 1], cfg, lt.iters[t].gru,
                                           g_c, g_s, g_h, out.g_refiners[l - 1], g_prop,
                                           g_fx, g_fy);
            std::vector<real> g_in(g_c.size(), real(0));
            propagate_backward(lt.iters[t].prop_trace, g_prop, g_in);
            g_c = std::move(g_in);
            std::fill(g_s.begin(), g_s.end(), real(0));  // only the final field's scores are consumed
        }
        upsample_field_backward(fields[l - 1], g_c, g_coords[l - 1]);
    }

    // Coarsest level: coordinates are the exhaustive argmax (constant), but
    // its scores feed the level-0 warp and differentiate into the features.
    if (want_feature_grads)
        score_recompute_backward(px.levels[0], py.levels[0], fields[0].h, fields[0].w,
                                 fields[0].k, fields[0].coords, g_scores[0], nullptr,
                                 &out.g_px[0], &out.g_py[0]);
    return out;
}

std::vector<real> flatten_refiners(const std::vector<RefinerParams>& refiners) {
    std::vector<real> flat;
    for (const RefinerParams& r : refiners)
        for (const ConvParams* p : r.layers()) {
            flat.insert(flat.end(), p->kernel.begin(), p->kernel.end());
            flat.insert(flat.end(), p->bias.begin(), p->bias.end());
        }
    return flat;
}

void unflatten_refiners(std::span<const real> flat, std::vector<RefinerParams>& refiners) {
    std::size_t pos = 0;
    for (RefinerParams& r : refiners)
        for (ConvParams* p : r.layers()) {
            std::copy(flat.begin() + pos, flat.begin() + pos + p->kernel.size(),
                      p->kernel.begin());
            pos += p->kernel.size();
            std::copy(flat.begin() + pos, flat.begin() + pos + p->bias.size(), p->bias.begin());
            pos += p->bias.size();
        }
    if (pos != flat.size())
        throw ShapeError("unflatten_refiners: " + std::to_string(flat.size()) +
                         " values for " + std::to_string(pos) + " parameters");
}

std::vector<real> flatten_encoder(const EncoderWeights& w) {
    std::vector<real> flat;
    for (const ConvParams& p : w.layers) {
        flat.insert(flat.end(), p.kernel.begin(), p.kernel.end());
        flat.insert(flat.end(), p.bias.begin(), p.bias.end());
    }
    return flat;
}

void unflatten_encoder(std::span<const real> flat, EncoderWeights& w) {
    std::size_t pos = 0;
    for (ConvParams& p : w.layers) {
        std::copy(flat.begin() + pos, flat.begin() + pos + p.kernel.size(), p.kernel.begin());
        pos += p.kernel.size();
        std::copy(flat.begin() + pos, flat.begin() + pos + p.bias.size(), p.bias.begin());
        pos += p.bias.size();
    }
    if (pos != flat.size()) throw ShapeError("unflatten_encoder: size mismatch");
}

TrainResult train_refiner(const PairGenerator& pairs, std::vector<RefinerParams> refiners,
                          FeatureExtractor extractor, const TrainerConfig& cfg) {
    cfg.match.validate();
    const int L = cfg.match.levels;
    const bool enc = extractor.kind == FeatureExtractor::Kind::encoder;
    const bool joint = enc && cfg.train_encoder;

    TrainResult result;
    AdamState refiner_state(flatten_refiners(refiners).size());
    AdamState enc_state(joint ? flatten_encoder(extractor.encoder_a).size() * 2 : 0);

    for (int step = 0; step < cfg.steps; ++step) {
        const PairSample sample = pairs(step);
        EncoderTape tape_a, tape_b;
        const Pyramid px = extractor.extract_a(sample.image, L, joint ? &tape_a : nullptr);
        const Pyramid py = extractor.extract_b(sample.exemplar, L, joint ? &tape_b : nullptr);

        PipelineGrads pg = corr_pipeline_backward(px, py, sample.image, sample.exemplar,
                                                  refiners, cfg.match, joint);
        const real l_align = align_loss(px, py);
        const real total = cfg.lambda_corr * pg.loss_corr + cfg.lambda_align * l_align;
        if (!std::isfinite(total))
            throw std::runtime_error("train_refiner: non-finite loss at step " +
                                     std::to_string(step));
        result.trace.push_back({step, pg.loss_corr, l_align, total});

        // refiner update
        std::vector<real> flat = flatten_refiners(refiners);
        std::vector<real> grad = flatten_refiners(pg.g_refiners);
        for (real& g : grad) g *= cfg.lambda_corr;
        adam_step(flat, grad, refiner_state, cfg.adam);
        unflatten_refiners(flat, refiners);

        if (joint) {
            // corr-loss feature grads plus the alignment term
            std::vector<Tensor> ga = align_loss_grad(px, py);
            std::vector<Tensor> gb = align_loss_grad(py, px);
            std::vector<Tensor> g_levels_a(L), g_levels_b(L);
            for (int l = 0; l < L; ++l) {
                g_levels_a[l] = std::move(pg.g_px[l]);
                g_levels_b[l] = std::move(pg.g_py[l]);
                for (std::size_t i = 0; i < g_levels_a[l].size(); ++i) {
                    g_levels_a[l].values()[i] = cfg.lambda_corr * g_levels_a[l].values()[i] +
                                                cfg.lambda_align * ga[l].values()[i];
                    g_levels_b[l].values()[i] = cfg.lambda_corr * g_levels_b[l].values()[i] +
                                                cfg.lambda_align * gb[l].values()[i];
                }
            }
            EncoderWeights g_enc_a, g_enc_b;
            encoder_backward(extractor.encoder_a, tape_a, g_levels_a, g_enc_a);
            encoder_backward(extractor.encoder_b, tape_b, g_levels_b, g_enc_b);
            std::vector<real> eflat = flatten_encoder(extractor.encoder_a);
            std::vector<real> ebflat = flatten_encoder(extractor.encoder_b);
            eflat.insert(eflat.end(), ebflat.begin(), ebflat.end());
            std::vector<real> egrad = flatten_encoder(g_enc_a);
            std::vector<real> egb = flatten_encoder(g_enc_b);
            egrad.insert(egrad.end(), egb.begin(), egb.end());
            adam_step(eflat, egrad, enc_state, cfg.adam);
            unflatten_encoder(std::span<const real>(eflat.data(), eflat.size() / 2),
                              extractor.encoder_a);
            unflatten_encoder(
                std::span<const real>(eflat.data() + eflat.size() / 2, eflat.size() / 2),
                extractor.encoder_b);
        }
    }
    result.refiners = std::move(refiners);
    result.extractor = std::move(extractor);
    return result;
}

}  // namespace corrflow
