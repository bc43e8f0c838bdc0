#pragma once

#include <cstdint>
#include <vector>

#include "corrflow/conv.hpp"
#include "corrflow/field.hpp"
#include "corrflow/pyramid.hpp"
#include "corrflow/tensor.hpp"

namespace corrflow {

class Rng;

struct MatchConfig {
    int k = 16;                       // candidates per position
    int levels = 4;                   // pyramid levels
    int iters = 3;                    // propagate+refine sweeps per level
    real tau = real(0.01);            // softmax temperature for gathering/warping
    enum class RefineMode { pure, greedy } mode = RefineMode::pure;
    std::size_t exhaustive_cap_bytes = std::size_t(3) << 30;

    void validate() const;
};

/// Learned refinement parameters for one pyramid level: 1x1 embeddings of
/// the four GRU inputs, the three gate convolutions, and the two-layer
/// offset-update head. The final head conv starts at exact zero so an
/// untrained refiner leaves coordinates untouched.
struct RefinerParams {
    ConvParams embed_fx, embed_fy, embed_off, embed_score;
    ConvParams gate_z, gate_r, gate_h;  // on [hidden, x_t]
    ConvParams head1, head2;            // head2 emits 2K channels

    int hidden_channels() const { return gate_z.c_out; }
    int embed_channels() const { return embed_fx.c_out; }
    int topk() const { return head2.c_out / 2; }

    bool head_is_zero() const;
    void validate(int feat_channels, int k) const;

    static RefinerParams zeros(int feat_channels, int k, int hidden, int embed);
    /// Random gates/embeddings, zero final head conv.
    static RefinerParams init(Rng& rng, int feat_channels, int k, int hidden, int embed);

    /// Fixed layer order used for serialization and flat parameter walks.
    std::vector<ConvParams*> layers();
    std::vector<const ConvParams*> layers() const;
};

/// Exact top-K cosine matching of every position in fx against every
/// position in fy. Materializes the pairwise similarity matrix (the
/// coarsest-level strategy); throws if it would exceed cap_bytes.
CorrField exhaustive_match(const Tensor& fx, const Tensor& fy, int k,
                           std::size_t cap_bytes = std::size_t(3) << 30);

/// Provenance of one propagate call: for every output slot, the input slot
/// it was taken from and whether re-basing clamped each component.
struct PropagateTrace {
    std::vector<std::uint32_t> src_slot;
    std::vector<std::uint8_t> clamp_flags;  // bit0: x clamped, bit1: y clamped
};

/// One Jacobi sweep of PatchMatch neighborhood propagation: candidates are
/// the incumbent matches plus every 4-neighbor match re-based to p, all
/// scored by cosine similarity with bilinear lookup, top-K kept. Reads only
/// the input field, so the result is independent of evaluation order.
CorrField propagate(const CorrField& field, const Tensor& fx, const Tensor& fy,
                    PropagateTrace* trace = nullptr);

/// Saved intermediates of one gru_refine_step, enough for the backward pass.
struct GruStepTape {
    CorrField prop;            // input field H'_t
    Tensor h_prev;
    std::vector<real> gather_weights;  // softmax weights used for the fy gather
    Tensor gathered;           // G
    Tensor e_pre[4];           // embedding pre-activations (fx, fy, off, score)
    Tensor xt;                 // concat of activated embeddings
    Tensor z, r, hbar, h_new;
    std::vector<real> coords_new;      // pre-sort, post-clamp
    std::vector<real> scores_new;      // pre-sort
    std::vector<std::uint8_t> clamp_flags;  // per slot, bit0 x / bit1 y
    std::vector<std::uint8_t> rejected;     // greedy mode: slot reverted
    std::vector<std::int32_t> sort_perm;    // out slot i took pre-sort slot perm[i]
};

struct GruStepResult {
    CorrField field;
    Tensor hidden;
};

/// ConvGRU refinement of a propagated field: embeds (f^x, gathered f^y,
/// offsets, scores), updates the hidden state through the gates, predicts a
/// coordinate update from the hidden state, clamps, rescores and re-sorts.
GruStepResult gru_refine_step(const CorrField& propagated, const Tensor& hidden,
                              const Tensor& fx, const Tensor& fy,
                              const RefinerParams& params, const MatchConfig& cfg,
                              GruStepTape* tape = nullptr);

struct IterTape {
    PropagateTrace prop_trace;
    GruStepTape gru;
};
struct LevelTape {
    CorrField init;
    std::vector<IterTape> iters;
    bool refined = false;  // false when the zero-head shortcut was taken
};

/// T iterations of (propagate; gru_refine_step) with the hidden state
/// carried across iterations. When the offset head is exactly zero the GRU
/// is skipped; the output is bit-identical to running it. Tapes force the
/// full path.
CorrField refine_level(const CorrField& init, const Tensor& fx, const Tensor& fy,
                       const RefinerParams& params, const MatchConfig& cfg,
                       LevelTape* tape = nullptr);

struct MatchTape {
    std::vector<LevelTape> levels;  // entry 0 unused (exhaustive level)
};

/// Coarse-to-fine matching: exact search at the coarsest level, then per
/// level upsampling of the previous field followed by refine_level.
/// refiners holds one entry per level above the coarsest; pass an empty
/// vector for the untrained (pure PatchMatch) configuration.
std::vector<CorrField> hierarchical_match(const Pyramid& px, const Pyramid& py,
                                          const std::vector<RefinerParams>& refiners,
                                          const MatchConfig& cfg,
                                          MatchTape* tape = nullptr);

/// --- backward passes (used by the trainer and the gradient suite) ---

struct RefinerGrads {
    RefinerParams g;  // same shapes, accumulated
};

/// Routes output-coordinate gradients back to input slots of a propagate
/// call. g_in must be sized for the input field.
void propagate_backward(const PropagateTrace& trace, const std::vector<real>& g_out_coords,
                        std::vector<real>& g_in_coords);

/// Backward of gru_refine_step. Accumulates into g_params / g_fx / g_fy and
/// into g_prop_coords (gradient wrt the propagated field's coordinates);
/// returns the hidden-state gradient to carry to the previous iteration.
Tensor gru_refine_step_backward(const Tensor& fx, const Tensor& fy,
                                const RefinerParams& params, const MatchConfig& cfg,
                                const GruStepTape& tape,
                                const std::vector<real>& g_out_coords,
                                const std::vector<real>& g_out_scores,
                                const Tensor& g_h_new, RefinerParams& g_params,
                                std::vector<real>& g_prop_coords, Tensor* g_fx,
                                Tensor* g_fy);

/// Accumulates the gradient of freshly recomputed scores
/// s = cos(fx(p), fy_bilinear(coord)) into coordinate and feature grads.
/// coords holds h*w*k (x,y) pairs; null outputs are skipped.
void score_recompute_backward(const Tensor& fx, const Tensor& fy, int h, int w, int k,
                              const std::vector<real>& coords,
                              const std::vector<real>& g_scores,
                              std::vector<real>* g_coords, Tensor* g_fx, Tensor* g_fy);

}  // namespace corrflow
