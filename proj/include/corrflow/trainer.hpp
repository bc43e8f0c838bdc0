#pragma once

#include <functional>
#include <vector>

#include "corrflow/adam.hpp"
#include "corrflow/encoder.hpp"
#include "corrflow/matcher.hpp"
#include "corrflow/pyramid.hpp"
#include "corrflow/warp.hpp"

namespace corrflow {

/// Which feature path the pipeline uses. The encoder variant carries two
/// independent domain encoders with identical architecture.
struct FeatureExtractor {
    enum class Kind { handcrafted, encoder } kind = Kind::handcrafted;
    int patch_radius = 1;
    EncoderWeights encoder_a, encoder_b;

    Pyramid extract_a(const Tensor& image, int levels, EncoderTape* tape = nullptr) const;
    Pyramid extract_b(const Tensor& image, int levels, EncoderTape* tape = nullptr) const;
    int feature_channels(int level, int levels) const;
};

struct PairSample {
    Tensor image;     // structure input; also the warp target
    Tensor exemplar;  // geometrically distorted version of the target
};
using PairGenerator = std::function<PairSample(int step)>;

struct TrainerConfig {
    MatchConfig match;
    AdamConfig adam;
    real lambda_align = real(1);
    real lambda_corr = real(1);
    bool train_encoder = true;  // joint update; moot for handcrafted features
    int steps = 200;
};

struct LossRow {
    int step;
    real corr, align, total;
};

struct TrainResult {
    std::vector<RefinerParams> refiners;
    FeatureExtractor extractor;
    std::vector<LossRow> trace;
};

/// Full forward + hand-rolled backward of the correspondence loss:
/// hierarchical match -> per-level soft warp -> L_corr, differentiated
/// through the warp, the recomputed scores, the offset head, the GRU (BPTT
/// across iterations and levels) and optionally into the feature pyramids.
struct PipelineGrads {
    real loss_corr = 0;
    std::vector<WarpResult> warps;
    std::vector<RefinerParams> g_refiners;
    std::vector<Tensor> g_px, g_py;  // filled when want_feature_grads
};
PipelineGrads corr_pipeline_backward(const Pyramid& px, const Pyramid& py,
                                     const Tensor& target, const Tensor& exemplar,
                                     const std::vector<RefinerParams>& refiners,
                                     const MatchConfig& cfg, bool want_feature_grads);

/// Optimizes the refiner (and optionally the encoders) with Adam on
/// lambda_corr * L_corr + lambda_align * L_align over generated pairs.
/// Deterministic given the generator. Throws on non-finite loss, naming the
/// step.
TrainResult train_refiner(const PairGenerator& pairs, std::vector<RefinerParams> refiners,
                          FeatureExtractor extractor, const TrainerConfig& cfg);

/// Flat parameter walks used by the optimizer and the serializer.
std::vector<real> flatten_refiners(const std::vector<RefinerParams>& refiners);
void unflatten_refiners(std::span<const real> flat, std::vector<RefinerParams>& refiners);
std::vector<real> flatten_encoder(const EncoderWeights& w);
void unflatten_encoder(std::span<const real> flat, EncoderWeights& w);

}  // namespace corrflow
