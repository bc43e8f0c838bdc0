#include "corrflow/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "corrflow/parallel.hpp"
#include "corrflow/rng.hpp"
#include "corrflow/sample.hpp"
#include "corrflow/similarity.hpp"
#include "corrflow/warp.hpp"

namespace corrflow {

void MatchConfig::validate() const {
    if (k < 1) throw std::invalid_argument("MatchConfig: k must be >= 1");
    if (iters < 1) throw std::invalid_argument("MatchConfig: iters must be >= 1");
    if (levels < 1) throw std::invalid_argument("MatchConfig: levels must be >= 1");
    if (!(tau > 0)) throw std::invalid_argument("MatchConfig: tau must be positive");
}

bool RefinerParams::head_is_zero() const {
    for (real v : head2.kernel)
        if (v != real(0)) return false;
    for (real v : head2.bias)
        if (v != real(0)) return false;
    return true;
}

void RefinerParams::validate(int feat_channels, int k) const {
    for (const ConvParams* p : layers()) p->validate();
    const int ce = embed_fx.c_out;
    const int ch = gate_z.c_out;
    auto expect = [](bool ok, const std::string& what) {
        if (!ok) throw ShapeError("RefinerParams: " + what);
    };
    expect(embed_fx.k == 1 && embed_fy.k == 1 && embed_off.k == 1 && embed_score.k == 1,
           "embeddings must be 1x1 convs");
    expect(embed_fx.c_in == feat_channels, "embed_fx expects " + std::to_string(embed_fx.c_in) +
                                               " channels, features have " +
                                               std::to_string(feat_channels));
    expect(embed_fy.c_in == feat_channels, "embed_fy channel mismatch");
    expect(embed_off.c_in == 2 * k, "embed_off expects 2K channels");
    expect(embed_score.c_in == k, "embed_score expects K channels");
    expect(embed_fy.c_out == ce && embed_off.c_out == ce && embed_score.c_out == ce,
           "embeddings must share one output width");
    expect(gate_z.c_in == ch + 4 * ce && gate_r.c_in == ch + 4 * ce &&
               gate_h.c_in == ch + 4 * ce,
           "gate convs must take [hidden, x_t]");
    expect(gate_r.c_out == ch && gate_h.c_out == ch, "gate outputs must match hidden width");
    expect(head1.c_in == ch, "head1 must read the hidden state");
    expect(head2.c_in == head1.c_out, "head2 input mismatch");
    expect(head2.c_out == 2 * k, "head2 must emit 2K channels");
}

RefinerParams RefinerParams::zeros(int feat_channels, int k, int hidden, int embed) {
    RefinerParams p;
    p.embed_fx = ConvParams::zeros(1, feat_channels, embed);
    p.embed_fy = ConvParams::zeros(1, feat_channels, embed);
    p.embed_off = ConvParams::zeros(1, 2 * k, embed);
    p.embed_score = ConvParams::zeros(1, k, embed);
    p.gate_z = ConvParams::zeros(3, hidden + 4 * embed, hidden);
    p.gate_r = ConvParams::zeros(3, hidden + 4 * embed, hidden);
    p.gate_h = ConvParams::zeros(3, hidden + 4 * embed, hidden);
    p.head1 = ConvParams::zeros(3, hidden, hidden);
    p.head2 = ConvParams::zeros(3, hidden, 2 * k);
    return p;
}

RefinerParams RefinerParams::init(Rng& rng, int feat_channels, int k, int hidden, int embed) {
    RefinerParams p = zeros(feat_channels, k, hidden, embed);
    auto randomize = [&](ConvParams& c) {
        const double scale = std::sqrt(2.0 / (static_cast<double>(c.k) * c.k * c.c_in));
        for (real& v : c.kernel) v = static_cast<real>(rng.normal(0.0, scale));
    };
    randomize(p.embed_fx);
    randomize(p.embed_fy);
    randomize(p.embed_off);
    randomize(p.embed_score);
    randomize(p.gate_z);
    randomize(p.gate_r);
    randomize(p.gate_h);
    randomize(p.head1);
    // head2 stays zero: the untrained refiner must not move coordinates
    return p;
}

std::vector<ConvParams*> RefinerParams::layers() {
    return {&embed_fx, &embed_fy, &embed_off, &embed_score, &gate_z,
            &gate_r,   &gate_h,   &head1,     &head2};
}
std::vector<const ConvParams*> RefinerParams::layers() const {
    return {&embed_fx, &embed_fy, &embed_off, &embed_score, &gate_z,
            &gate_r,   &gate_h,   &head1,     &head2};
}

namespace {

real score_at(const real* fx_row, int channels, const Tensor& fy, real x, real y,
              std::vector<real>& scratch) {
    bilinear_sample(fy, x, y, scratch);
    return cosine_similarity(std::span<const real>(fx_row, channels),
                             std::span<const real>(scratch.data(), channels));
}

struct Candidate {
    real x, y;
    real score;
    real linidx;
    std::uint32_t src;
    std::uint8_t clamp_flags;
    int order;
};

bool candidate_less(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.linidx != b.linidx) return a.linidx < b.linidx;
    return a.order < b.order;
}

}  // namespace

CorrField exhaustive_match(const Tensor& fx, const Tensor& fy, int k,
                           std::size_t cap_bytes) {
    if (fx.channels() != fy.channels())
        throw ShapeError("exhaustive_match: channel mismatch, " + fx.shape_str() + " vs " +
                         fy.shape_str());
    const int np = fx.height() * fx.width();
    const int nq = fy.height() * fy.width();
    if (k < 1 || k > nq)
        throw std::invalid_argument("exhaustive_match: k=" + std::to_string(k) +
                                    " exceeds target positions " + std::to_string(nq));
    const std::size_t matrix_bytes =
        static_cast<std::size_t>(np) * static_cast<std::size_t>(nq) * sizeof(real);
    if (matrix_bytes > cap_bytes)
        throw std::runtime_error("exhaustive_match: similarity matrix needs " +
                                 std::to_string(matrix_bytes) + " bytes, cap is " +
                                 std::to_string(cap_bytes));
    const int C = fx.channels();

    // Unit-normalize both sides once; dead rows become zero vectors so all
    // their similarities are 0 (the degenerate cosine convention).
    auto normalize_rows = [C](const Tensor& t) {
        std::vector<real> unit(t.size());
        const int n = t.height() * t.width();
        for (int i = 0; i < n; ++i) {
            const real* src = t.data() + static_cast<std::size_t>(i) * C;
            real* dst = unit.data() + static_cast<std::size_t>(i) * C;
            real nn = 0;
            for (int c = 0; c < C; ++c) nn += src[c] * src[c];
            nn = std::sqrt(nn);
            if (nn < kCosineNormFloor) {
                for (int c = 0; c < C; ++c) dst[c] = 0;
            } else {
                const real inv = real(1) / nn;
                for (int c = 0; c < C; ++c) dst[c] = src[c] * inv;
            }
        }
        return unit;
    };
    const std::vector<real> ux = normalize_rows(fx);
    const std::vector<real> uy = normalize_rows(fy);

    // Full pairwise similarity matrix, the coarsest-level formulation.
    std::vector<real> sim(static_cast<std::size_t>(np) * nq);
    parallel_for(np, [&](int p) {
        const real* a = ux.data() + static_cast<std::size_t>(p) * C;
        real* row = sim.data() + static_cast<std::size_t>(p) * nq;
        for (int q = 0; q < nq; ++q) {
            const real* b = uy.data() + static_cast<std::size_t>(q) * C;
            real acc = 0;
            for (int c = 0; c < C; ++c) acc += a[c] * b[c];
            row[q] = acc;
        }
    });

    CorrField field(fx.height(), fx.width(), k, fy.height(), fy.width());
    parallel_for(np, [&](int p) {
        const real* row = sim.data() + static_cast<std::size_t>(p) * nq;
        // insertion into a sorted top-k buffer; ties by smaller linear index,
        // which is the scan order, so strict comparison suffices
        std::vector<int> best(k, -1);
        std::vector<real> bs(k, real(-2));
        for (int q = 0; q < nq; ++q) {
            const real s = row[q];
            if (s <= bs[k - 1]) continue;
            int pos = k - 1;
            while (pos > 0 && bs[pos - 1] < s) {
                bs[pos] = bs[pos - 1];
                best[pos] = best[pos - 1];
                --pos;
            }
            bs[pos] = s;
            best[pos] = q;
        }
        for (int kk = 0; kk < k; ++kk) {
            const std::size_t s = static_cast<std::size_t>(p) * k + kk;
            field.set_coord(s, static_cast<real>(best[kk] % fy.width()),
                            static_cast<real>(best[kk] / fy.width()));
            field.scores[s] = bs[kk];
        }
    });
    return field;
}

CorrField propagate(const CorrField& field, const Tensor& fx, const Tensor& fy,
                    PropagateTrace* trace) {
    if (fx.height() != field.h || fx.width() != field.w)
        throw ShapeError("propagate: field " + std::to_string(field.w) + "x" +
                         std::to_string(field.h) + " vs features " + fx.shape_str());
    if (fx.channels() != fy.channels())
        throw ShapeError("propagate: channel mismatch, " + fx.shape_str() + " vs " +
                         fy.shape_str());
    if (fy.height() != field.target_h || fy.width() != field.target_w)
        throw ShapeError("propagate: fy " + fy.shape_str() + " vs field target " +
                         std::to_string(field.target_w) + "x" +
                         std::to_string(field.target_h));

    const int C = fx.channels();
    const int K = field.k;
    CorrField out(field.h, field.w, K, field.target_h, field.target_w);
    if (trace) {
        trace->src_slot.assign(out.slot_count(), 0);
        trace->clamp_flags.assign(out.slot_count(), 0);
    }
    const real max_x = static_cast<real>(field.target_w - 1);
    const real max_y = static_cast<real>(field.target_h - 1);

    parallel_for(field.h, [&](int y) {
        std::vector<real> scratch(C);
        std::vector<Candidate> cands;
        cands.reserve(5 * K);
        std::vector<Candidate> kept;
        kept.reserve(K);
        const int nbr_dx[4] = {-1, 1, 0, 0};
        const int nbr_dy[4] = {0, 0, -1, 1};
        for (int x = 0; x < field.w; ++x) {
            cands.clear();
            int order = 0;
            auto push = [&](real cxv, real cyv, std::uint32_t src) {
                std::uint8_t flags = 0;
                real nx = cxv, ny = cyv;
                if (nx < 0) nx = 0, flags |= 1;
                if (nx > max_x) nx = max_x, flags |= 1;
                if (ny < 0) ny = 0, flags |= 2;
                if (ny > max_y) ny = max_y, flags |= 2;
                Candidate c;
                c.x = nx;
                c.y = ny;
                c.src = src;
                c.clamp_flags = flags;
                c.order = order++;
                cands.push_back(c);
            };
            for (int kk = 0; kk < K; ++kk) {
                const std::size_t s = field.slot(y, x, kk);
                push(field.cx(s), field.cy(s), static_cast<std::uint32_t>(s));
            }
            for (int n = 0; n < 4; ++n) {
                const int nx_ = x + nbr_dx[n];
                const int ny_ = y + nbr_dy[n];
                if (nx_ < 0 || nx_ >= field.w || ny_ < 0 || ny_ >= field.h) continue;
                const real rebase_x = static_cast<real>(x - nx_);
                const real rebase_y = static_cast<real>(y - ny_);
                for (int kk = 0; kk < K; ++kk) {
                    const std::size_t s = field.slot(ny_, nx_, kk);
                    push(field.cx(s) + rebase_x, field.cy(s) + rebase_y,
                         static_cast<std::uint32_t>(s));
                }
            }
            const real* fx_row = fx.row(y, x);
            for (Candidate& c : cands) {
                c.score = score_at(fx_row, C, fy, c.x, c.y, scratch);
                c.linidx = c.y * field.target_w + c.x;
            }
            std::sort(cands.begin(), cands.end(), candidate_less);
            // dedupe exact coordinate collisions, then backfill if short
            kept.clear();
            for (const Candidate& c : cands) {
                if (static_cast<int>(kept.size()) == K) break;
                bool dup = false;
                for (const Candidate& kc : kept)
                    if (kc.x == c.x && kc.y == c.y) {
                        dup = true;
                        break;
                    }
                if (!dup) kept.push_back(c);
            }
            while (static_cast<int>(kept.size()) < K)  // fewer distinct candidates than K
                kept.push_back(kept.back());
            for (int kk = 0; kk < K; ++kk) {
                const std::size_t s = out.slot(y, x, kk);
                out.set_coord(s, kept[kk].x, kept[kk].y);
                out.scores[s] = kept[kk].score;
                if (trace) {
                    trace->src_slot[s] = kept[kk].src;
                    trace->clamp_flags[s] = kept[kk].clamp_flags;
                }
            }
        }
    });
    return out;
}

void propagate_backward(const PropagateTrace& trace, const std::vector<real>& g_out_coords,
                        std::vector<real>& g_in_coords) {
    const std::size_t n = trace.src_slot.size();
    if (g_out_coords.size() != 2 * n || g_in_coords.size() < 2)
        throw ShapeError("propagate_backward: gradient buffer sizes inconsistent");
    for (std::size_t s = 0; s < n; ++s) {
        const std::uint32_t src = trace.src_slot[s];
        if (!(trace.clamp_flags[s] & 1)) g_in_coords[2 * src] += g_out_coords[2 * s];
        if (!(trace.clamp_flags[s] & 2)) g_in_coords[2 * src + 1] += g_out_coords[2 * s + 1];
    }
}

void score_recompute_backward(const Tensor& fx, const Tensor& fy, int h, int w, int k,
                              const std::vector<real>& coords,
                              const std::vector<real>& g_scores,
                              std::vector<real>* g_coords, Tensor* g_fx, Tensor* g_fy) {
    const int C = fx.channels();
    std::vector<real> gathered(C), ga(C), gb(C);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int kk = 0; kk < k; ++kk) {
                const std::size_t s = (static_cast<std::size_t>(y) * w + x) * k + kk;
                const real g = g_scores[s];
                if (g == real(0)) continue;
                const real cxv = coords[2 * s], cyv = coords[2 * s + 1];
                bilinear_sample(fy, cxv, cyv, gathered);
                std::fill(ga.begin(), ga.end(), real(0));
                std::fill(gb.begin(), gb.end(), real(0));
                cosine_similarity_vjp(std::span<const real>(fx.row(y, x), C),
                                      std::span<const real>(gathered.data(), C), g, ga, gb);
                if (g_fx) {
                    real* dst = g_fx->row(y, x);
                    for (int c = 0; c < C; ++c) dst[c] += ga[c];
                }
                const LocGrad lg = bilinear_sample_vjp(fy, cxv, cyv, gb, g_fy);
                if (g_coords) {
                    (*g_coords)[2 * s] += lg.gx;
                    (*g_coords)[2 * s + 1] += lg.gy;
                }
            }
}

namespace {

Tensor sigmoid(const Tensor& t) {
    Tensor out = t;
    for (real& v : out.values()) v = real(1) / (real(1) + std::exp(-v));
    return out;
}
Tensor tanh_t(const Tensor& t) {
    Tensor out = t;
    for (real& v : out.values()) v = std::tanh(v);
    return out;
}

/// Soft gather of fy at the field's coordinates: a soft warp of the feature
/// map itself.
Tensor soft_gather(const Tensor& fy, const CorrField& field, real tau,
                   std::vector<real>& weights) {
    WarpResult r = soft_warp(fy, field, tau);
    weights = std::move(r.weights);
    return std::move(r.warped);
}

Tensor offsets_tensor(const CorrField& f) {
    Tensor o(f.h, f.w, 2 * f.k);
    for (int y = 0; y < f.h; ++y)
        for (int x = 0; x < f.w; ++x) {
            real* dst = o.row(y, x);
            for (int kk = 0; kk < f.k; ++kk) {
                const std::size_t s = f.slot(y, x, kk);
                dst[2 * kk] = f.cx(s) - static_cast<real>(x);
                dst[2 * kk + 1] = f.cy(s) - static_cast<real>(y);
            }
        }
    return o;
}

Tensor scores_tensor(const CorrField& f) {
    Tensor t(f.h, f.w, f.k);
    for (int y = 0; y < f.h; ++y)
        for (int x = 0; x < f.w; ++x) {
            real* dst = t.row(y, x);
            for (int kk = 0; kk < f.k; ++kk) dst[kk] = f.scores[f.slot(y, x, kk)];
        }
    return t;
}

}  // namespace

GruStepResult gru_refine_step(const CorrField& propagated, const Tensor& hidden,
                              const Tensor& fx, const Tensor& fy,
                              const RefinerParams& params, const MatchConfig& cfg,
                              GruStepTape* tape) {
    cfg.validate();
    params.validate(fx.channels(), propagated.k);
    if (hidden.channels() != params.hidden_channels() || hidden.height() != propagated.h ||
        hidden.width() != propagated.w)
        throw ShapeError("gru_refine_step: hidden " + hidden.shape_str() + " vs field " +
                         std::to_string(propagated.w) + "x" + std::to_string(propagated.h) +
                         " hidden channels " + std::to_string(params.hidden_channels()));

    // x_t inputs
    std::vector<real> gather_w;
    Tensor gathered = soft_gather(fy, propagated, cfg.tau, gather_w);
    Tensor off = offsets_tensor(propagated);
    Tensor sc = scores_tensor(propagated);

    Tensor e_pre[4] = {conv2d(fx, params.embed_fx), conv2d(gathered, params.embed_fy),
                       conv2d(off, params.embed_off), conv2d(sc, params.embed_score)};
    Tensor xt = concat_channels(concat_channels(leaky_relu(e_pre[0], kEncoderLeakSlope),
                                                leaky_relu(e_pre[1], kEncoderLeakSlope)),
                                concat_channels(leaky_relu(e_pre[2], kEncoderLeakSlope),
                                                leaky_relu(e_pre[3], kEncoderLeakSlope)));

    Tensor hx = concat_channels(hidden, xt);
    Tensor z = sigmoid(conv2d(hx, params.gate_z));
    Tensor r = sigmoid(conv2d(hx, params.gate_r));
    Tensor rh = hidden;
    for (std::size_t i = 0; i < rh.size(); ++i) rh.values()[i] *= r.values()[i];
    Tensor rhx = concat_channels(rh, xt);
    Tensor hbar = tanh_t(conv2d(rhx, params.gate_h));
    Tensor h_new = hidden;
    for (std::size_t i = 0; i < h_new.size(); ++i)
        h_new.values()[i] = (real(1) - z.values()[i]) * hidden.values()[i] +
                            z.values()[i] * hbar.values()[i];

    Tensor d1 = conv2d(h_new, params.head1);
    Tensor delta = conv2d(leaky_relu(d1, kEncoderLeakSlope), params.head2);

    // coordinate update, rescore, re-sort
    const int K = propagated.k;
    const real max_x = static_cast<real>(propagated.target_w - 1);
    const real max_y = static_cast<real>(propagated.target_h - 1);
    const std::size_t n_slots = propagated.slot_count();
    std::vector<real> coords_new(2 * n_slots);
    std::vector<real> scores_new(n_slots);
    std::vector<std::uint8_t> clamp_flags(n_slots, 0);
    std::vector<std::uint8_t> rejected(n_slots, 0);
    const int C = fx.channels();
    const bool greedy = cfg.mode == MatchConfig::RefineMode::greedy;

    parallel_for(propagated.h, [&](int y) {
        std::vector<real> scratch(C);
        for (int x = 0; x < propagated.w; ++x) {
            const real* d = delta.row(y, x);
            for (int kk = 0; kk < K; ++kk) {
                const std::size_t s = propagated.slot(y, x, kk);
                real nx = propagated.cx(s) + d[2 * kk];
                real ny = propagated.cy(s) + d[2 * kk + 1];
                std::uint8_t flags = 0;
                if (nx < 0) nx = 0, flags |= 1;
                if (nx > max_x) nx = max_x, flags |= 1;
                if (ny < 0) ny = 0, flags |= 2;
                if (ny > max_y) ny = max_y, flags |= 2;
                real s_new = score_at(fx.row(y, x), C, fy, nx, ny, scratch);
                if (greedy && !(s_new > propagated.scores[s])) {
                    nx = propagated.cx(s);
                    ny = propagated.cy(s);
                    s_new = propagated.scores[s];
                    flags = 0;
                    rejected[s] = 1;
                }
                coords_new[2 * s] = nx;
                coords_new[2 * s + 1] = ny;
                scores_new[s] = s_new;
                clamp_flags[s] = flags;
            }
        }
    });

    CorrField out(propagated.h, propagated.w, K, propagated.target_h, propagated.target_w);
    std::vector<std::int32_t> perm(n_slots);
    parallel_for(propagated.h, [&](int y) {
        std::vector<Candidate> keys(K);
        for (int x = 0; x < propagated.w; ++x) {
            for (int kk = 0; kk < K; ++kk) {
                const std::size_t s = propagated.slot(y, x, kk);
                keys[kk].x = coords_new[2 * s];
                keys[kk].y = coords_new[2 * s + 1];
                keys[kk].score = scores_new[s];
                keys[kk].linidx = keys[kk].y * propagated.target_w + keys[kk].x;
                keys[kk].order = kk;
            }
            std::sort(keys.begin(), keys.end(), candidate_less);
            for (int kk = 0; kk < K; ++kk) {
                const std::size_t dst = out.slot(y, x, kk);
                const std::size_t src = propagated.slot(y, x, keys[kk].order);
                out.set_coord(dst, keys[kk].x, keys[kk].y);
                out.scores[dst] = keys[kk].score;
                perm[dst] = static_cast<std::int32_t>(src);
            }
        }
    });

    if (tape) {
        tape->prop = propagated;
        tape->h_prev = hidden;
        tape->gather_weights = std::move(gather_w);
        tape->gathered = std::move(gathered);
        for (int i = 0; i < 4; ++i) tape->e_pre[i] = std::move(e_pre[i]);
        tape->xt = std::move(xt);
        tape->z = std::move(z);
        tape->r = std::move(r);
        tape->hbar = std::move(hbar);
        tape->h_new = h_new;
        tape->coords_new = std::move(coords_new);
        tape->scores_new = std::move(scores_new);
        tape->clamp_flags = std::move(clamp_flags);
        tape->rejected = std::move(rejected);
        tape->sort_perm = std::move(perm);
    }
    return {std::move(out), std::move(h_new)};
}

Tensor gru_refine_step_backward(const Tensor& fx, const Tensor& fy,
                                const RefinerParams& params, const MatchConfig& cfg,
                                const GruStepTape& tape,
                                const std::vector<real>& g_out_coords,
                                const std::vector<real>& g_out_scores,
                                const Tensor& g_h_new, RefinerParams& g_params,
                                std::vector<real>& g_prop_coords, Tensor* g_fx,
                                Tensor* g_fy) {
    const CorrField& prop = tape.prop;
    const std::size_t n = prop.slot_count();
    const int K = prop.k;
    const int C = fx.channels();
    if (g_params.embed_fx.kernel.empty())
        g_params = RefinerParams::zeros(C, K, params.hidden_channels(), params.embed_channels());

    // undo the per-position sort
    std::vector<real> g_coords(2 * n, real(0));
    std::vector<real> g_scores(n, real(0));
    for (std::size_t dst = 0; dst < n; ++dst) {
        const std::size_t src = static_cast<std::size_t>(tape.sort_perm[dst]);
        g_coords[2 * src] += g_out_coords[2 * dst];
        g_coords[2 * src + 1] += g_out_coords[2 * dst + 1];
        g_scores[src] += g_out_scores[dst];
    }

    // recomputed scores at the updated coordinates
    score_recompute_backward(fx, fy, prop.h, prop.w, K, tape.coords_new, g_scores, &g_coords,
                             g_fx, g_fy);

    // clamp and greedy-revert routing, then split into delta and identity
    Tensor g_delta(prop.h, prop.w, 2 * K);
    for (int y = 0; y < prop.h; ++y)
        for (int x = 0; x < prop.w; ++x) {
            real* gd = g_delta.row(y, x);
            for (int kk = 0; kk < K; ++kk) {
                const std::size_t s = prop.slot(y, x, kk);
                real gx = g_coords[2 * s], gy = g_coords[2 * s + 1];
                if (tape.rejected[s]) {
                    // reverted slot: coords_new == prop coords, no delta path
                    g_prop_coords[2 * s] += gx;
                    g_prop_coords[2 * s + 1] += gy;
                    continue;
                }
                if (tape.clamp_flags[s] & 1) gx = 0;
                if (tape.clamp_flags[s] & 2) gy = 0;
                gd[2 * kk] += gx;
                gd[2 * kk + 1] += gy;
                g_prop_coords[2 * s] += gx;
                g_prop_coords[2 * s + 1] += gy;
            }
        }

    // offset head backward: delta = head2(lrelu(head1(h_new)))
    Tensor d1 = conv2d(tape.h_new, params.head1);  // recompute pre-activation
    Tensor d1a = leaky_relu(d1, kEncoderLeakSlope);
    Tensor g_d1a(prop.h, prop.w, params.head1.c_out);
    conv2d_vjp(d1a, params.head2, g_delta, g_d1a, g_params.head2);
    Tensor g_d1(prop.h, prop.w, params.head1.c_out);
    leaky_relu_vjp(d1, kEncoderLeakSlope, g_d1a, g_d1);
    Tensor g_h(prop.h, prop.w, params.hidden_channels());
    conv2d_vjp(tape.h_new, params.head1, g_d1, g_h, g_params.head1);
    if (g_h_new.size() == g_h.size())
        for (std::size_t i = 0; i < g_h.size(); ++i) g_h.values()[i] += g_h_new.values()[i];

    // GRU cell backward
    const Tensor& h_prev = tape.h_prev;
    Tensor g_z(prop.h, prop.w, params.hidden_channels());
    Tensor g_hbar(prop.h, prop.w, params.hidden_channels());
    Tensor g_hprev(prop.h, prop.w, params.hidden_channels());
    for (std::size_t i = 0; i < g_h.size(); ++i) {
        const real gh = g_h.values()[i];
        g_z.values()[i] = gh * (tape.hbar.values()[i] - h_prev.values()[i]);
        g_hbar.values()[i] = gh * tape.z.values()[i];
        g_hprev.values()[i] = gh * (real(1) - tape.z.values()[i]);
    }
    // hbar = tanh(gate_h([r*h_prev, xt]))
    Tensor g_ah = g_hbar;
    for (std::size_t i = 0; i < g_ah.size(); ++i)
        g_ah.values()[i] *= real(1) - tape.hbar.values()[i] * tape.hbar.values()[i];
    Tensor rh = h_prev;
    for (std::size_t i = 0; i < rh.size(); ++i) rh.values()[i] *= tape.r.values()[i];
    Tensor rhx = concat_channels(rh, tape.xt);
    Tensor g_rhx(rhx.height(), rhx.width(), rhx.channels());
    conv2d_vjp(rhx, params.gate_h, g_ah, g_rhx, g_params.gate_h);
    Tensor g_rh(prop.h, prop.w, params.hidden_channels());
    Tensor g_xt(prop.h, prop.w, tape.xt.channels());
    split_channels(g_rhx, g_rh, g_xt);
    Tensor g_r(prop.h, prop.w, params.hidden_channels());
    for (std::size_t i = 0; i < g_rh.size(); ++i) {
        g_r.values()[i] = g_rh.values()[i] * h_prev.values()[i];
        g_hprev.values()[i] += g_rh.values()[i] * tape.r.values()[i];
    }
    // z and r gates share the [h_prev, xt] input
    Tensor hx = concat_channels(h_prev, tape.xt);
    Tensor g_hx(hx.height(), hx.width(), hx.channels());
    Tensor g_az = g_z;
    for (std::size_t i = 0; i < g_az.size(); ++i)
        g_az.values()[i] *= tape.z.values()[i] * (real(1) - tape.z.values()[i]);
    conv2d_vjp(hx, params.gate_z, g_az, g_hx, g_params.gate_z);
    Tensor g_ar = g_r;
    for (std::size_t i = 0; i < g_ar.size(); ++i)
        g_ar.values()[i] *= tape.r.values()[i] * (real(1) - tape.r.values()[i]);
    conv2d_vjp(hx, params.gate_r, g_ar, g_hx, g_params.gate_r);
    {
        Tensor g_hprev_part(prop.h, prop.w, params.hidden_channels());
        Tensor g_xt_part(prop.h, prop.w, tape.xt.channels());
        split_channels(g_hx, g_hprev_part, g_xt_part);
        for (std::size_t i = 0; i < g_hprev.size(); ++i)
            g_hprev.values()[i] += g_hprev_part.values()[i];
        for (std::size_t i = 0; i < g_xt.size(); ++i)
            g_xt.values()[i] += g_xt_part.values()[i];
    }

    // embeddings backward: xt = concat(lrelu(e_pre[i]))
    const int ce = params.embed_channels();
    Tensor g_e[4];
    for (int i = 0; i < 4; ++i) g_e[i] = Tensor(prop.h, prop.w, ce);
    for (int y = 0; y < prop.h; ++y)
        for (int x = 0; x < prop.w; ++x) {
            const real* g = g_xt.row(y, x);
            for (int i = 0; i < 4; ++i) {
                real* dst = g_e[i].row(y, x);
                for (int c = 0; c < ce; ++c) dst[c] += g[i * ce + c];
            }
        }
    Tensor g_gathered(prop.h, prop.w, C);
    Tensor g_off(prop.h, prop.w, 2 * K);
    Tensor g_sc(prop.h, prop.w, K);
    {
        Tensor g_pre(prop.h, prop.w, ce);
        const ConvParams* embeds[4] = {&params.embed_fx, &params.embed_fy, &params.embed_off,
                                       &params.embed_score};
        ConvParams* g_embeds[4] = {&g_params.embed_fx, &g_params.embed_fy, &g_params.embed_off,
                                   &g_params.embed_score};
        const Tensor* inputs[4] = {&fx, &tape.gathered, nullptr, nullptr};
        Tensor off = offsets_tensor(prop);
        Tensor sc = scores_tensor(prop);
        inputs[2] = &off;
        inputs[3] = &sc;
        Tensor* g_inputs[4] = {g_fx, &g_gathered, &g_off, &g_sc};
        for (int i = 0; i < 4; ++i) {
            g_pre = Tensor(prop.h, prop.w, ce);
            leaky_relu_vjp(tape.e_pre[i], kEncoderLeakSlope, g_e[i], g_pre);
            if (g_inputs[i]) {
                conv2d_vjp(*inputs[i], *embeds[i], g_pre, *g_inputs[i], *g_embeds[i]);
            } else {
                Tensor sink(prop.h, prop.w, embeds[i]->c_in);
                conv2d_vjp(*inputs[i], *embeds[i], g_pre, sink, *g_embeds[i]);
            }
        }
    }

    // soft gather backward: a soft warp of the feature map
    std::vector<real> g_prop_scores(n, real(0));
    soft_warp_vjp(fy, prop, cfg.tau, tape.gather_weights, g_gathered, g_fy, &g_prop_scores,
                  &g_prop_coords);

    // offsets and scores tensors route straight back to the propagated field
    for (int y = 0; y < prop.h; ++y)
        for (int x = 0; x < prop.w; ++x) {
            const real* go = g_off.row(y, x);
            const real* gsrow = g_sc.row(y, x);
            for (int kk = 0; kk < K; ++kk) {
                const std::size_t s = prop.slot(y, x, kk);
                g_prop_coords[2 * s] += go[2 * kk];
                g_prop_coords[2 * s + 1] += go[2 * kk + 1];
                g_prop_scores[s] += gsrow[kk];
            }
        }

    // the propagated field's scores were themselves recomputed from its coords
    score_recompute_backward(fx, fy, prop.h, prop.w, K, prop.coords, g_prop_scores,
                             &g_prop_coords, g_fx, g_fy);

    return g_hprev;
}

CorrField refine_level(const CorrField& init, const Tensor& fx, const Tensor& fy,
                       const RefinerParams& params, const MatchConfig& cfg,
                       LevelTape* tape) {
    cfg.validate();
    if (tape) {
        tape->init = init;
        tape->iters.clear();
    }
    // Exact-zero offset head: the GRU cannot move coordinates, and the
    // rescore+resort inside the step reproduces the propagate output bit for
    // bit, so the whole step is skipped. Tapes force the full path.
    const bool shortcut = params.head_is_zero() && tape == nullptr;
    CorrField field = init;
    Tensor hidden(init.h, init.w, params.hidden_channels());
    for (int t = 0; t < cfg.iters; ++t) {
        IterTape* it = nullptr;
        if (tape) {
            tape->iters.emplace_back();
            it = &tape->iters.back();
        }
        field = propagate(field, fx, fy, it ? &it->prop_trace : nullptr);
        if (shortcut) continue;
        GruStepResult res = gru_refine_step(field, hidden, fx, fy, params, cfg,
                                            it ? &it->gru : nullptr);
        field = std::move(res.field);
        hidden = std::move(res.hidden);
    }
    if (tape) tape->refined = !shortcut;
    return field;
}

std::vector<CorrField> hierarchical_match(const Pyramid& px, const Pyramid& py,
                                          const std::vector<RefinerParams>& refiners,
                                          const MatchConfig& cfg, MatchTape* tape) {
    cfg.validate();
    px.validate();
    py.validate();
    if (px.level_count() != py.level_count())
        throw ShapeError("hierarchical_match: pyramids have different level counts");
    const int L = px.level_count();
    if (!refiners.empty() && static_cast<int>(refiners.size()) != L - 1)
        throw ShapeError("hierarchical_match: need one refiner per level above the coarsest");
    for (int l = 0; l < L; ++l)
        if (px.levels[l].channels() != py.levels[l].channels())
            throw ShapeError("hierarchical_match: channel mismatch at level " +
                             std::to_string(l));
    if (tape) tape->levels.assign(L, LevelTape{});

    std::vector<CorrField> fields(L);
    fields[0] = exhaustive_match(px.levels[0], py.levels[0], cfg.k, cfg.exhaustive_cap_bytes);
    for (int l = 1; l < L; ++l) {
        CorrField init = upsample_field(fields[l - 1]);
        const RefinerParams* rp = nullptr;
        RefinerParams fallback;
        if (refiners.empty()) {
            fallback = RefinerParams::zeros(px.levels[l].channels(), cfg.k, 1, 1);
            rp = &fallback;
        } else {
            rp = &refiners[l - 1];
        }
        fields[l] = refine_level(init, px.levels[l], py.levels[l], *rp, cfg,
                                 tape ? &tape->levels[l] : nullptr);
    }
    return fields;
}

}  // namespace corrflow
