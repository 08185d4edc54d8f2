#ifndef PVE_TOYDIT_HPP
#define PVE_TOYDIT_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pve/attention.hpp"
#include "pve/denoiser.hpp"
#include "pve/rng.hpp"
#include "pve/schedule.hpp"
#include "pve/tensor.hpp"

namespace pve {

struct ToyDiTConfig {
    int patch = 4;
    int embed = 128;
    int heads = 4;
    int layers = 4;
    int vocab = 64;
    int prompt_len = 5;
    int max_frames = 8;
    int height = 32;
    int width = 32;
    int channels = 3;
    bool linear_only = false;  // bypass attention/MLP blocks; exact gradients

    void validate() const {
        if (height % patch != 0 || width % patch != 0)
            throw ConfigError("ToyDiTConfig: height/width must be divisible by patch");
        if (embed % heads != 0) throw ConfigError("ToyDiTConfig: embed must be divisible by heads");
        if (patch < 1 || embed < 1 || heads < 1 || layers < 1 || vocab < 2 || prompt_len < 1 || max_frames < 1)
            throw ConfigError("ToyDiTConfig: extents must be positive");
    }

    int patches_per_frame() const { return (height / patch) * (width / patch); }
    int patch_dim() const { return patch * patch * channels; }

    bool operator==(const ToyDiTConfig&) const = default;
};

namespace dit {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct Block {
    Mat<S> ln1_g, ln1_b;
    Mat<S> wq, wk, wv, wo, bq, bk, bv, bo;
    Mat<S> ln2_g, ln2_b;
    Mat<S> xwq, xwk, xwv, xwo, xbq, xbk, xbv, xbo;
    Mat<S> ln3_g, ln3_b;
    Mat<S> mw1, mb1, mw2, mb2;
};

template <class S>
struct Params {
    Mat<S> patch_w, patch_b;
    Mat<S> time_w, time_b;
    Mat<S> prompt_w;  // additive prompt-summary conditioning (AdaLN-style shift)
    Mat<S> tok_embed;
    std::vector<Block<S>> blocks;
    Mat<S> lnf_g, lnf_b;
    Mat<S> head_w, head_b;

    template <class F>
    void visit(F&& f) {
        f("patch_w", patch_w);
        f("patch_b", patch_b);
        f("time_w", time_w);
        f("time_b", time_b);
        f("prompt_w", prompt_w);
        f("tok_embed", tok_embed);
        for (size_t l = 0; l < blocks.size(); ++l) {
            auto& b = blocks[l];
            std::string p = "blk" + std::to_string(l) + ".";
            f(p + "ln1_g", b.ln1_g); f(p + "ln1_b", b.ln1_b);
            f(p + "wq", b.wq); f(p + "wk", b.wk); f(p + "wv", b.wv); f(p + "wo", b.wo);
            f(p + "bq", b.bq); f(p + "bk", b.bk); f(p + "bv", b.bv); f(p + "bo", b.bo);
            f(p + "ln2_g", b.ln2_g); f(p + "ln2_b", b.ln2_b);
            f(p + "xwq", b.xwq); f(p + "xwk", b.xwk); f(p + "xwv", b.xwv); f(p + "xwo", b.xwo);
            f(p + "xbq", b.xbq); f(p + "xbk", b.xbk); f(p + "xbv", b.xbv); f(p + "xbo", b.xbo);
            f(p + "ln3_g", b.ln3_g); f(p + "ln3_b", b.ln3_b);
            f(p + "mw1", b.mw1); f(p + "mb1", b.mb1); f(p + "mw2", b.mw2); f(p + "mb2", b.mb2);
        }
        f("lnf_g", lnf_g); f("lnf_b", lnf_b);
        f("head_w", head_w);
        f("head_b", head_b);
    }
};

template <class S>
inline S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865476)));
}

template <class S>
inline S gelu_deriv(S x) {
    return S(0.5) * (S(1) + std::erf(x * S(0.7071067811865476))) +
           x * std::exp(S(-0.5) * x * x) * S(0.3989422804014327);
}

// classic transformer sinusoid; pos may be negative (loop-wrapped frames)
template <class S>
inline void sinusoid(double pos, int d, S* out) {
    for (int j = 0; j < d / 2; ++j) {
        double freq = std::pow(10000.0, -2.0 * j / d);
        out[2 * j] = static_cast<S>(std::sin(pos * freq));
        out[2 * j + 1] = static_cast<S>(std::cos(pos * freq));
    }
}

// per-row layer norm tape
template <class S>
struct LnTape {
    Mat<S> xhat;
    Mat<S> inv_std;  // n x 1
};

template <class S>
inline Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, LnTape<S>* tape) {
    const S eps = S(1e-5);
    Mat<S> out(x.rows(), x.cols());
    Mat<S> xhat(x.rows(), x.cols());
    Mat<S> inv_std(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S mu = x.row(i).mean();
        S var = (x.row(i).array() - mu).square().mean();
        S is = S(1) / std::sqrt(var + eps);
        inv_std(i, 0) = is;
        xhat.row(i) = (x.row(i).array() - mu) * is;
        out.row(i) = xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
    }
    if (tape) {
        tape->xhat = xhat;
        tape->inv_std = std::move(inv_std);
    }
    return out;
}

template <class S>
inline Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& g, const LnTape<S>& t, Mat<S>& dg, Mat<S>& db) {
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        Eigen::Array<S, 1, Eigen::Dynamic> dxhat = dy.row(i).array() * g.row(0).array();
        S m1 = dxhat.mean();
        S m2 = (dxhat * t.xhat.row(i).array()).mean();
        dx.row(i) = ((dxhat - m1 - t.xhat.row(i).array() * m2) * t.inv_std(i, 0)).matrix();
        dg.row(0).array() += dy.row(i).array() * t.xhat.row(i).array();
        db.row(0).array() += dy.row(i).array();
    }
    return dx;
}

template <class S>
struct AttnTape {
    Mat<S> q, k, v;      // full width, heads concatenated
    Mat<S> concat;       // pre-output-projection
    Mat<S> x_in;         // LN output feeding the projections
};

template <class S>
struct BlockTape {
    Mat<S> h_in;
    LnTape<S> ln1;
    AttnTape<S> sa;
    Mat<S> h_mid1;
    LnTape<S> ln2;
    AttnTape<S> xa;
    Mat<S> h_mid2;
    LnTape<S> ln3;
    Mat<S> c;         // ln3 output
    Mat<S> mlp_pre;   // before gelu
};

template <class S>
struct Tape {
    Mat<S> x_patch;     // n x pd
    Mat<S> time_sin;    // 1 x d
    Mat<S> prompt_e;    // P x d
    Mat<S> prompt_mean; // 1 x d
    std::vector<int> prompt_ids;
    std::vector<BlockTape<S>> blocks;
    Mat<S> h_final_in;
    LnTape<S> lnf;
    Mat<S> y;           // LN-f output
    int frames = 0;
    S eps_scale = S(1);  // d(eps)/d(head output); sqrt(abar) under the v head
};

}  // namespace dit

// Toy diffusion transformer over patch tokens with cross-attention to prompt
// slot tokens. Templated on the scalar so training runs in float while
// gradient checks run on a 64-bit shadow copy of the weights.
template <class S>
class ToyDiTNet {
public:
    using Mat = dit::Mat<S>;

    ToyDiTConfig cfg;
    dit::Params<S> params;

    // With a schedule attached the head output is read as the velocity
    // v = sqrt(abar) eps - sqrt(1-abar) x0 and converted analytically:
    // eps = sqrt(abar) v_hat + sqrt(1-abar) x_t. The step-dependent output
    // scaling then never has to be learned, which keeps low-noise predictions
    // stable on small training budgets. Without a schedule the head is raw eps.
    std::vector<float> abar;

    ToyDiTNet() = default;
    explicit ToyDiTNet(const ToyDiTConfig& c) : cfg(c) {
        cfg.validate();
        alloc(params, S(0));
    }

    void attach_schedule(const NoiseSchedule& s) { abar = s.alpha_bar; }

    void init_weights(RngStream& stream, double scale = 0.02) {
        auto fill = [&](Mat& m, double sd) {
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<S>(sd * stream.normal_at(stream.counter++));
        };
        params.visit([&](const std::string& name, Mat& m) {
            auto dotp = name.find('.');
            std::string s = dotp == std::string::npos ? name : name.substr(dotp + 1);
            bool is_ln = s.rfind("ln", 0) == 0;
            bool is_bias = (s.size() >= 2 && s.compare(s.size() - 2, 2, "_b") == 0) || s[0] == 'b' ||
                           (s.size() >= 2 && (s[0] == 'x' || s[0] == 'm') && s[1] == 'b');
            if (is_ln) {
                if (s.back() == 'g')
                    m.setOnes();
                else
                    m.setZero();
            } else if (is_bias) {
                m.setZero();
            } else {
                fill(m, scale);
            }
        });
    }

    int64_t param_count() {
        int64_t n = 0;
        params.visit([&](const std::string&, Mat& m) { n += m.size(); });
        return n;
    }

    // ---- forward ------------------------------------------------------------

    VideoTensor forward(const VideoTensor& v, int step, const PromptTokens& prompt,
                        const attn::WindowSpec* ws = nullptr, dit::Tape<S>* tape = nullptr) const {
        std::vector<const VideoTensor*> vs{&v};
        std::vector<const PromptTokens*> ps{&prompt};
        auto outs = run(vs, ps, step, nullptr, ws, tape);
        return std::move(outs[0]);
    }

    std::pair<VideoTensor, VideoTensor> forward_pair(const VideoTensor& v1, const VideoTensor& v2, int step,
                                                     const PromptTokens& p1, const PromptTokens& p2,
                                                     const attn::ReplacementSpec& spec,
                                                     const attn::WindowSpec* ws = nullptr) const {
        std::vector<const VideoTensor*> vs{&v1, &v2};
        std::vector<const PromptTokens*> ps{&p1, &p2};
        auto outs = run(vs, ps, step, spec.empty() ? nullptr : &spec, ws, nullptr);
        return {std::move(outs[0]), std::move(outs[1])};
    }

    // ---- backward -----------------------------------------------------------

    // d_out is dL/d(eps_hat) flattened to n x pd token layout
    void backward(const dit::Tape<S>& tape, const Mat& d_out, dit::Params<S>& grads) const {
        const int d = cfg.embed;
        // the pass-through term of the v head is input-only, so parameters see
        // the upstream gradient scaled by d(eps)/d(head) = sqrt(abar)
        Mat d_head = d_out * tape.eps_scale;
        Mat dy = d_head * params.head_w.transpose();
        add_to(grads.head_w, tape.y.transpose() * d_head);
        add_to(grads.head_b, colsum(d_head));

        Mat dh;
        if (cfg.linear_only) {
            dh = std::move(dy);
        } else {
            Mat dg = Mat::Zero(1, d), db = Mat::Zero(1, d);
            dh = dit::layer_norm_backward(dy, params.lnf_g, tape.lnf, dg, db);
            add_to(grads.lnf_g, dg);
            add_to(grads.lnf_b, db);
        }

        Mat d_prompt_e = Mat::Zero(cfg.prompt_len, d);
        if (!cfg.linear_only) {
            for (int l = cfg.layers - 1; l >= 0; --l) {
                dh = block_backward(tape.blocks[static_cast<size_t>(l)], tape.prompt_e, dh,
                                    params.blocks[static_cast<size_t>(l)], grads.blocks[static_cast<size_t>(l)],
                                    d_prompt_e);
            }
        }

        // h0 = X patch_w + patch_b + pe + ones * (time_sin time_w + time_b)
        add_to(grads.patch_w, tape.x_patch.transpose() * dh);
        add_to(grads.patch_b, colsum(dh));
        Mat dtp = colsum(dh);  // gradient of the broadcast time/prompt projections
        add_to(grads.time_w, tape.time_sin.transpose() * dtp);
        add_to(grads.time_b, dtp);
        add_to(grads.prompt_w, tape.prompt_mean.transpose() * dtp);
        Mat d_pmean = dtp * params.prompt_w.transpose();
        d_prompt_e.rowwise() += (d_pmean / static_cast<S>(cfg.prompt_len)).row(0);
        for (int t = 0; t < cfg.prompt_len; ++t)
            grads.tok_embed.row(tape.prompt_ids[static_cast<size_t>(t)]) += d_prompt_e.row(t);
    }

    // ---- loss ---------------------------------------------------------------

    struct Sample {
        const VideoTensor* noisy;
        const VideoTensor* eps_target;
        PromptTokens prompt;
        int step;
    };

    // Loss stays in S end to end (no float roundtrip through VideoTensor) so
    // the 64-bit shadow copy supports tight finite-difference checks.
    double loss_and_grad(const std::vector<Sample>& batch, dit::Params<S>* grads) const {
        if (grads) zero_like(*grads);
        double total = 0.0;
        for (const auto& s : batch) {
            dit::Tape<S> tape;
            std::vector<const VideoTensor*> vs{s.noisy};
            std::vector<const PromptTokens*> ps{&s.prompt};
            Mat pred = run_tokens(vs, ps, s.step, nullptr, nullptr, grads ? &tape : nullptr)[0];
            Mat target = patchify(*s.eps_target);
            Mat diff = pred - target;
            const double nelem = static_cast<double>(pred.size());
            total += static_cast<double>(diff.template cast<double>().squaredNorm()) / nelem;
            if (grads) {
                Mat d_out = diff * static_cast<S>(2.0 / (nelem * static_cast<double>(batch.size())));
                backward(tape, d_out, *grads);
            }
        }
        return total / static_cast<double>(batch.size());
    }

    // ---- weights ------------------------------------------------------------

    template <class S2>
    ToyDiTNet<S2> cast() const {
        ToyDiTNet<S2> out(cfg);
        auto* self = const_cast<ToyDiTNet<S>*>(this);
        std::vector<dit::Mat<S2>*> dst;
        out.params.visit([&](const std::string&, dit::Mat<S2>& m) { dst.push_back(&m); });
        size_t idx = 0;
        self->params.visit([&](const std::string&, Mat& m) {
            *dst[idx] = m.template cast<S2>();
            ++idx;
        });
        out.abar = abar;
        return out;
    }

    void save_checkpoint(const std::string& path) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw FormatError("cannot open for writing: " + path);
        os.write("VCKP", 4);
        detail::write_u16(os, 1);
        int32_t fields[10] = {cfg.patch,  cfg.embed,     cfg.heads,  cfg.layers, cfg.vocab,
                              cfg.prompt_len, cfg.max_frames, cfg.height, cfg.width,  cfg.channels};
        os.write(reinterpret_cast<const char*>(fields), sizeof(fields));
        uint8_t lin = cfg.linear_only ? 1 : 0;
        os.write(reinterpret_cast<const char*>(&lin), 1);
        uint32_t count = 0;
        params.visit([&](const std::string&, Mat&) { ++count; });
        detail::write_u32(os, count);
        params.visit([&](const std::string& name, Mat& m) {
            detail::write_u16(os, static_cast<uint16_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            detail::write_u32(os, static_cast<uint32_t>(m.rows()));
            detail::write_u32(os, static_cast<uint32_t>(m.cols()));
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) {
                    float f = static_cast<float>(m(i, j));
                    os.write(reinterpret_cast<const char*>(&f), 4);
                }
        });
        if (!os) throw FormatError("write failed: " + path);
    }

    static ToyDiTNet load_checkpoint(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw FormatError("cannot open: " + path);
        char magic[4] = {};
        is.read(magic, 4);
        if (!is || std::memcmp(magic, "VCKP", 4) != 0) throw FormatError("bad magic, expected VCKP");
        if (detail::read_u16(is) != 1) throw FormatError("unsupported VCKP version");
        int32_t fields[10];
        is.read(reinterpret_cast<char*>(fields), sizeof(fields));
        if (!is) throw FormatError("truncated VCKP config");
        ToyDiTConfig c;
        c.patch = fields[0]; c.embed = fields[1]; c.heads = fields[2]; c.layers = fields[3];
        c.vocab = fields[4]; c.prompt_len = fields[5]; c.max_frames = fields[6];
        c.height = fields[7]; c.width = fields[8]; c.channels = fields[9];
        uint8_t lin = 0;
        is.read(reinterpret_cast<char*>(&lin), 1);
        c.linear_only = lin != 0;
        ToyDiTNet net(c);
        uint32_t count = detail::read_u32(is);
        std::map<std::string, Mat*> by_name;
        net.params.visit([&](const std::string& name, Mat& m) { by_name[name] = &m; });
        for (uint32_t r = 0; r < count; ++r) {
            uint16_t len = detail::read_u16(is);
            std::string name(len, '\0');
            is.read(name.data(), len);
            uint32_t rows = detail::read_u32(is), cols = detail::read_u32(is);
            auto it = by_name.find(name);
            if (it == by_name.end()) throw FormatError("unknown parameter record: " + name);
            Mat& m = *it->second;
            if (m.rows() != static_cast<Eigen::Index>(rows) || m.cols() != static_cast<Eigen::Index>(cols))
                throw FormatError("parameter shape mismatch: " + name);
            for (uint32_t i = 0; i < rows; ++i)
                for (uint32_t j = 0; j < cols; ++j) {
                    float f = 0;
                    is.read(reinterpret_cast<char*>(&f), 4);
                    m(i, j) = static_cast<S>(f);
                }
            if (!is) throw FormatError("truncated parameter payload: " + name);
        }
        return net;
    }

    // token layout helpers, shared with the loss
    Mat patchify(const VideoTensor& v) const {
        const auto& dm = v.dims();
        const int p = cfg.patch, C = cfg.channels;
        const int py_n = cfg.height / p, px_n = cfg.width / p;
        Mat x(dm.f * py_n * px_n, cfg.patch_dim());
        for (int64_t f = 0; f < dm.f; ++f)
            for (int py = 0; py < py_n; ++py)
                for (int px = 0; px < px_n; ++px) {
                    Eigen::Index row = f * py_n * px_n + py * px_n + px;
                    for (int yy = 0; yy < p; ++yy)
                        for (int xx = 0; xx < p; ++xx)
                            for (int c = 0; c < C; ++c)
                                x(row, (yy * p + xx) * C + c) = static_cast<S>(v.at(f, py * p + yy, px * p + xx, c));
                }
        return x;
    }

    VideoTensor unpatchify(const Mat& x, int64_t frames) const {
        const int p = cfg.patch, C = cfg.channels;
        const int py_n = cfg.height / p, px_n = cfg.width / p;
        VideoTensor v(frames, cfg.height, cfg.width, C);
        for (int64_t f = 0; f < frames; ++f)
            for (int py = 0; py < py_n; ++py)
                for (int px = 0; px < px_n; ++px) {
                    Eigen::Index row = f * py_n * px_n + py * px_n + px;
                    for (int yy = 0; yy < p; ++yy)
                        for (int xx = 0; xx < p; ++xx)
                            for (int c = 0; c < C; ++c)
                                v.at(f, py * p + yy, px * p + xx, c) = static_cast<float>(x(row, (yy * p + xx) * C + c));
                }
        return v;
    }

    void alloc(dit::Params<S>& p, S) const {
        const int d = cfg.embed, pd = cfg.patch_dim();
        p.patch_w = Mat::Zero(pd, d);
        p.patch_b = Mat::Zero(1, d);
        p.time_w = Mat::Zero(d, d);
        p.time_b = Mat::Zero(1, d);
        p.prompt_w = Mat::Zero(d, d);
        p.tok_embed = Mat::Zero(cfg.vocab, d);
        p.blocks.resize(static_cast<size_t>(cfg.layers));
        for (auto& b : p.blocks) {
            b.ln1_g = Mat::Zero(1, d); b.ln1_b = Mat::Zero(1, d);
            b.wq = Mat::Zero(d, d); b.wk = Mat::Zero(d, d); b.wv = Mat::Zero(d, d); b.wo = Mat::Zero(d, d);
            b.bq = Mat::Zero(1, d); b.bk = Mat::Zero(1, d); b.bv = Mat::Zero(1, d); b.bo = Mat::Zero(1, d);
            b.ln2_g = Mat::Zero(1, d); b.ln2_b = Mat::Zero(1, d);
            b.xwq = Mat::Zero(d, d); b.xwk = Mat::Zero(d, d); b.xwv = Mat::Zero(d, d); b.xwo = Mat::Zero(d, d);
            b.xbq = Mat::Zero(1, d); b.xbk = Mat::Zero(1, d); b.xbv = Mat::Zero(1, d); b.xbo = Mat::Zero(1, d);
            b.ln3_g = Mat::Zero(1, d); b.ln3_b = Mat::Zero(1, d);
            b.mw1 = Mat::Zero(d, 4 * d); b.mb1 = Mat::Zero(1, 4 * d);
            b.mw2 = Mat::Zero(4 * d, d); b.mb2 = Mat::Zero(1, d);
        }
        p.lnf_g = Mat::Zero(1, d);
        p.lnf_b = Mat::Zero(1, d);
        p.head_w = Mat::Zero(d, pd);
        p.head_b = Mat::Zero(1, pd);
    }

    void zero_like(dit::Params<S>& g) const {
        alloc(g, S(0));
    }

private:
    static void add_to(Mat& dst, const Mat& src) { dst += src; }
    static Mat colsum(const Mat& m) { return m.colwise().sum(); }

    Mat prompt_embed(const PromptTokens& p) const {
        if (static_cast<int>(p.ids.size()) != cfg.prompt_len)
            throw ContractError("prompt length does not match config");
        Mat e(cfg.prompt_len, cfg.embed);
        for (int t = 0; t < cfg.prompt_len; ++t) {
            int id = p.ids[static_cast<size_t>(t)];
            if (id < 0 || id >= cfg.vocab) throw ContractError("prompt token id outside vocabulary");
            e.row(t) = params.tok_embed.row(id);
        }
        return e;
    }

    Mat positional(int64_t frames, const attn::WindowMask* wm) const {
        const int d = cfg.embed, ppf = cfg.patches_per_frame();
        Mat pe(frames * ppf, d);
        std::vector<S> tvec(static_cast<size_t>(d)), svec(static_cast<size_t>(d));
        for (int64_t f = 0; f < frames; ++f) {
            double fpos = wm ? static_cast<double>(wm->effective_pos[static_cast<size_t>(f)]) : static_cast<double>(f);
            dit::sinusoid(fpos, d, tvec.data());
            for (int pidx = 0; pidx < ppf; ++pidx) {
                dit::sinusoid(100.0 + pidx, d, svec.data());
                for (int j = 0; j < d; ++j) pe(f * ppf + pidx, j) = tvec[static_cast<size_t>(j)] + svec[static_cast<size_t>(j)];
            }
        }
        return pe;
    }

    // multi-head attention forward over already-projected q/k/v, optionally
    // AMR-paired with a source branch (used for the edit branch cross-attn)
    Mat heads_attend(const Mat& q, const Mat& k, const Mat& v, const attn::WindowMask* wm) const {
        const int H = cfg.heads, dh = cfg.embed / H;
        Mat concat(q.rows(), cfg.embed);
        std::vector<S> qh(static_cast<size_t>(q.rows() * dh)), kh(static_cast<size_t>(k.rows() * dh)),
            vh(static_cast<size_t>(k.rows() * dh));
        for (int h = 0; h < H; ++h) {
            copy_head(q, h, dh, qh);
            copy_head(k, h, dh, kh);
            copy_head(v, h, dh, vh);
            attn::AttnInputs<S> in{{qh.data(), static_cast<int>(q.rows()), dh},
                                   {kh.data(), static_cast<int>(k.rows()), dh},
                                   {vh.data(), static_cast<int>(k.rows()), dh}};
            std::vector<S> out = wm ? attn::attn_masked(in, *wm) : attn::attn_streaming(in);
            paste_head(concat, h, dh, out);
        }
        return concat;
    }

    std::pair<Mat, Mat> heads_attend_amr(const Mat& q1, const Mat& k1, const Mat& v1, const Mat& q2, const Mat& k2,
                                         const Mat& v2, const attn::ReplacementSpec& spec) const {
        const int H = cfg.heads, dh = cfg.embed / H;
        Mat c1(q1.rows(), cfg.embed), c2(q2.rows(), cfg.embed);
        std::vector<S> q1h, k1h, v1h, q2h, k2h, v2h;
        for (int h = 0; h < H; ++h) {
            copy_head(q1, h, dh, q1h);
            copy_head(k1, h, dh, k1h);
            copy_head(v1, h, dh, v1h);
            copy_head(q2, h, dh, q2h);
            copy_head(k2, h, dh, k2h);
            copy_head(v2, h, dh, v2h);
            attn::AttnInputs<S> a1{{q1h.data(), static_cast<int>(q1.rows()), dh},
                                   {k1h.data(), static_cast<int>(k1.rows()), dh},
                                   {v1h.data(), static_cast<int>(k1.rows()), dh}};
            attn::AttnInputs<S> a2{{q2h.data(), static_cast<int>(q2.rows()), dh},
                                   {k2h.data(), static_cast<int>(k2.rows()), dh},
                                   {v2h.data(), static_cast<int>(k2.rows()), dh}};
            auto [o1, o2] = attn::attn_amr(a1, a2, spec);
            paste_head(c1, h, dh, o1);
            paste_head(c2, h, dh, o2);
        }
        return {std::move(c1), std::move(c2)};
    }

    static void copy_head(const Mat& m, int h, int dh, std::vector<S>& out) {
        out.resize(static_cast<size_t>(m.rows() * dh));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (int j = 0; j < dh; ++j) out[static_cast<size_t>(i * dh + j)] = m(i, h * dh + j);
    }
    static void paste_head(Mat& m, int h, int dh, const std::vector<S>& in) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (int j = 0; j < dh; ++j) m(i, h * dh + j) = in[static_cast<size_t>(i * dh + j)];
    }

    std::vector<VideoTensor> run(const std::vector<const VideoTensor*>& vs, const std::vector<const PromptTokens*>& ps,
                                 int step, const attn::ReplacementSpec* spec, const attn::WindowSpec* ws,
                                 dit::Tape<S>* tape) const {
        auto mats = run_tokens(vs, ps, step, spec, ws, tape);
        std::vector<VideoTensor> outs;
        outs.reserve(mats.size());
        for (const auto& m : mats) outs.push_back(unpatchify(m, vs[0]->dims().f));
        return outs;
    }

    std::vector<Mat> run_tokens(const std::vector<const VideoTensor*>& vs, const std::vector<const PromptTokens*>& ps,
                                int step, const attn::ReplacementSpec* spec, const attn::WindowSpec* ws,
                                dit::Tape<S>* tape) const {
        const int d = cfg.embed;
        const int64_t frames = vs[0]->dims().f;
        for (const auto* v : vs) {
            const auto& dm = v->dims();
            if (dm.h != cfg.height || dm.w != cfg.width || dm.c != cfg.channels)
                throw ShapeError("ToyDiT: video dimensions do not match config");
            if (dm.f != frames) throw ShapeError("ToyDiT: paired branch frame counts differ");
        }
        std::optional<attn::WindowMask> wm;
        if (ws) {
            attn::WindowSpec w = *ws;
            w.total_frames = static_cast<int>(frames);
            w.tokens_per_frame = cfg.patches_per_frame();
            wm = attn::build_window_mask(w);
        } else if (frames > cfg.max_frames) {
            throw CapacityError("ToyDiT: frame count exceeds max_frames and no window given");
        }

        Mat time_sin(1, d);
        dit::sinusoid(static_cast<double>(step), d, time_sin.data());
        Mat time_proj = time_sin * params.time_w + params.time_b;
        Mat pe = positional(frames, wm ? &*wm : nullptr);

        struct Branch {
            Mat h;
            Mat prompt_e;
        };
        std::vector<Branch> br(vs.size());
        std::vector<Mat> xs(vs.size());
        for (size_t b = 0; b < vs.size(); ++b) {
            xs[b] = patchify(*vs[b]);
            br[b].prompt_e = prompt_embed(*ps[b]);
            Mat pmean = br[b].prompt_e.colwise().mean();
            br[b].h = xs[b] * params.patch_w;
            br[b].h.rowwise() += params.patch_b.row(0) + time_proj.row(0) + (pmean * params.prompt_w).row(0);
            br[b].h += pe;
            if (tape && b == 0) tape->prompt_mean = pmean;
        }
        if (tape) {
            tape->x_patch = xs[0];
            tape->time_sin = time_sin;
            tape->prompt_e = br[0].prompt_e;
            tape->prompt_ids = ps[0]->ids;
            tape->frames = static_cast<int>(frames);
            tape->blocks.resize(static_cast<size_t>(cfg.linear_only ? 0 : cfg.layers));
        }

        if (!cfg.linear_only) {
            for (int l = 0; l < cfg.layers; ++l) {
                const auto& blk = params.blocks[static_cast<size_t>(l)];
                dit::BlockTape<S>* bt = tape ? &tape->blocks[static_cast<size_t>(l)] : nullptr;

                // self-attention (never replaced)
                std::vector<Mat> sa_q(br.size()), sa_k(br.size()), sa_v(br.size());
                for (size_t b = 0; b < br.size(); ++b) {
                    if (bt && b == 0) bt->h_in = br[b].h;
                    Mat a = dit::layer_norm(br[b].h, blk.ln1_g, blk.ln1_b, bt && b == 0 ? &bt->ln1 : nullptr);
                    Mat q = a * blk.wq; q.rowwise() += blk.bq.row(0);
                    Mat k = a * blk.wk; k.rowwise() += blk.bk.row(0);
                    Mat v = a * blk.wv; v.rowwise() += blk.bv.row(0);
                    Mat concat = heads_attend(q, k, v, wm ? &*wm : nullptr);
                    Mat o = concat * blk.wo; o.rowwise() += blk.bo.row(0);
                    if (bt && b == 0) {
                        bt->sa.x_in = a; bt->sa.q = q; bt->sa.k = k; bt->sa.v = v; bt->sa.concat = concat;
                    }
                    br[b].h += o;
                }

                // cross-attention to prompt tokens; AMR pairs branch 0 -> 1
                std::vector<Mat> cq(br.size()), ck(br.size()), cv(br.size());
                for (size_t b = 0; b < br.size(); ++b) {
                    if (bt && b == 0) bt->h_mid1 = br[b].h;
                    Mat x = dit::layer_norm(br[b].h, blk.ln2_g, blk.ln2_b, bt && b == 0 ? &bt->ln2 : nullptr);
                    cq[b] = x * blk.xwq; cq[b].rowwise() += blk.xbq.row(0);
                    ck[b] = br[b].prompt_e * blk.xwk; ck[b].rowwise() += blk.xbk.row(0);
                    cv[b] = br[b].prompt_e * blk.xwv; cv[b].rowwise() += blk.xbv.row(0);
                    if (bt && b == 0) { bt->xa.x_in = x; bt->xa.q = cq[b]; bt->xa.k = ck[b]; bt->xa.v = cv[b]; }
                }
                if (spec && br.size() == 2) {
                    auto [c1, c2] = heads_attend_amr(cq[0], ck[0], cv[0], cq[1], ck[1], cv[1], *spec);
                    Mat o1 = c1 * blk.xwo; o1.rowwise() += blk.xbo.row(0);
                    Mat o2 = c2 * blk.xwo; o2.rowwise() += blk.xbo.row(0);
                    br[0].h += o1;
                    br[1].h += o2;
                } else {
                    for (size_t b = 0; b < br.size(); ++b) {
                        Mat concat = heads_attend(cq[b], ck[b], cv[b], nullptr);
                        Mat o = concat * blk.xwo; o.rowwise() += blk.xbo.row(0);
                        if (bt && b == 0) bt->xa.concat = concat;
                        br[b].h += o;
                    }
                }

                // MLP
                for (size_t b = 0; b < br.size(); ++b) {
                    if (bt && b == 0) bt->h_mid2 = br[b].h;
                    Mat c = dit::layer_norm(br[b].h, blk.ln3_g, blk.ln3_b, bt && b == 0 ? &bt->ln3 : nullptr);
                    Mat pre = c * blk.mw1; pre.rowwise() += blk.mb1.row(0);
                    Mat act = pre.unaryExpr([](S x) { return dit::gelu(x); });
                    Mat o = act * blk.mw2; o.rowwise() += blk.mb2.row(0);
                    if (bt && b == 0) { bt->c = c; bt->mlp_pre = pre; }
                    br[b].h += o;
                }
            }
        }

        const bool vparam = !abar.empty();
        S vp_sab = S(1), vp_somb = S(0);
        if (vparam) {
            if (step < 1 || step >= static_cast<int>(abar.size()))
                throw ContractError("ToyDiT: step outside attached schedule");
            const double ab = static_cast<double>(abar[static_cast<size_t>(step)]);
            vp_sab = static_cast<S>(std::sqrt(ab));
            vp_somb = static_cast<S>(std::sqrt(1.0 - ab));
        }

        std::vector<Mat> outs;
        outs.reserve(br.size());
        for (size_t b = 0; b < br.size(); ++b) {
            Mat y;
            if (cfg.linear_only) {
                y = br[b].h;
            } else {
                y = dit::layer_norm(br[b].h, params.lnf_g, params.lnf_b, tape && b == 0 ? &tape->lnf : nullptr);
            }
            if (tape && b == 0) {
                tape->h_final_in = br[b].h;
                tape->y = y;
                tape->eps_scale = vparam ? vp_sab : S(1);
            }
            Mat out = y * params.head_w;
            out.rowwise() += params.head_b.row(0);
            if (vparam) out = vp_sab * out + vp_somb * xs[b];
            outs.push_back(std::move(out));
        }
        return outs;
    }

    // backward through one block; returns dL/dh_in, accumulates parameter and
    // prompt-embedding gradients
    Mat block_backward(const dit::BlockTape<S>& bt, const Mat& prompt_e, const Mat& dh_out,
                       const dit::Block<S>& blk, dit::Block<S>& g, Mat& d_prompt_e) const {
        Mat dh = dh_out;

        // MLP
        {
            Mat act = bt.mlp_pre.unaryExpr([](S x) { return dit::gelu(x); });
            Mat d_act = dh * blk.mw2.transpose();
            g.mw2 += act.transpose() * dh;
            g.mb2 += dh.colwise().sum();
            Mat d_pre = d_act.cwiseProduct(bt.mlp_pre.unaryExpr([](S x) { return dit::gelu_deriv(x); }));
            Mat d_c = d_pre * blk.mw1.transpose();
            g.mw1 += bt.c.transpose() * d_pre;
            g.mb1 += d_pre.colwise().sum();
            Mat dg = dit::Mat<S>::Zero(1, blk.ln3_g.cols()), db = dg;
            Mat d_h_mid2 = dit::layer_norm_backward(d_c, blk.ln3_g, bt.ln3, dg, db);
            g.ln3_g += dg;
            g.ln3_b += db;
            dh += d_h_mid2;
        }

        // cross-attention
        {
            Mat d_concat = dh * blk.xwo.transpose();
            g.xwo += bt.xa.concat.transpose() * dh;
            g.xbo += dh.colwise().sum();
            Mat dq, dk, dv;
            attention_backward(bt.xa.q, bt.xa.k, bt.xa.v, d_concat, dq, dk, dv);
            Mat d_x = dq * blk.xwq.transpose();
            g.xwq += bt.xa.x_in.transpose() * dq;
            g.xbq += dq.colwise().sum();
            // prompt-side projections
            g.xwk += prompt_e.transpose() * dk;
            g.xbk += dk.colwise().sum();
            g.xwv += prompt_e.transpose() * dv;
            g.xbv += dv.colwise().sum();
            d_prompt_e += dk * blk.xwk.transpose() + dv * blk.xwv.transpose();
            Mat dg = dit::Mat<S>::Zero(1, blk.ln2_g.cols()), db = dg;
            Mat d_h_mid1 = dit::layer_norm_backward(d_x, blk.ln2_g, bt.ln2, dg, db);
            g.ln2_g += dg;
            g.ln2_b += db;
            dh += d_h_mid1;
        }

        // self-attention
        {
            Mat d_concat = dh * blk.wo.transpose();
            g.wo += bt.sa.concat.transpose() * dh;
            g.bo += dh.colwise().sum();
            Mat dq, dk, dv;
            attention_backward(bt.sa.q, bt.sa.k, bt.sa.v, d_concat, dq, dk, dv);
            Mat d_a = dq * blk.wq.transpose() + dk * blk.wk.transpose() + dv * blk.wv.transpose();
            g.wq += bt.sa.x_in.transpose() * dq;
            g.wk += bt.sa.x_in.transpose() * dk;
            g.wv += bt.sa.x_in.transpose() * dv;
            g.bq += dq.colwise().sum();
            g.bk += dk.colwise().sum();
            g.bv += dv.colwise().sum();
            Mat dg = dit::Mat<S>::Zero(1, blk.ln1_g.cols()), db = dg;
            Mat d_h_in = dit::layer_norm_backward(d_a, blk.ln1_g, bt.ln1, dg, db);
            g.ln1_g += dg;
            g.ln1_b += db;
            dh += d_h_in;
        }
        return dh;
    }

    // softmax-attention backward over concatenated heads; training path only,
    // probabilities are recomputed per head (exact softmax with max shift)
    void attention_backward(const Mat& q, const Mat& k, const Mat& v, const Mat& d_concat, Mat& dq, Mat& dk,
                            Mat& dv) const {
        const int H = cfg.heads, dh = cfg.embed / H;
        const Eigen::Index n = q.rows(), m = k.rows();
        dq = Mat::Zero(n, cfg.embed);
        dk = Mat::Zero(m, cfg.embed);
        dv = Mat::Zero(m, cfg.embed);
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
        for (int h = 0; h < H; ++h) {
            auto qh = q.block(0, h * dh, n, dh);
            auto kh = k.block(0, h * dh, m, dh);
            auto vh = v.block(0, h * dh, m, dh);
            auto doh = d_concat.block(0, h * dh, n, dh);
            Mat logits = (qh * kh.transpose()) * scale;
            Mat prob(n, m);
            for (Eigen::Index i = 0; i < n; ++i) {
                S mx = logits.row(i).maxCoeff();
                prob.row(i) = (logits.row(i).array() - mx).exp();
                prob.row(i) /= prob.row(i).sum();
            }
            Mat dvh = prob.transpose() * doh;
            Mat dprob = doh * vh.transpose();
            Mat ds(n, m);
            for (Eigen::Index i = 0; i < n; ++i) {
                S rowdot = dprob.row(i).cwiseProduct(prob.row(i)).sum();
                ds.row(i) = prob.row(i).array() * (dprob.row(i).array() - rowdot);
            }
            dq.block(0, h * dh, n, dh) = (ds * kh) * scale;
            dk.block(0, h * dh, m, dh) = (ds.transpose() * qh) * scale;
            dv.block(0, h * dh, m, dh) = dvh;
        }
    }
};

}  // namespace pve

#endif
