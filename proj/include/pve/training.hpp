#ifndef PVE_TRAINING_HPP
#define PVE_TRAINING_HPP

#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pve/toydit.hpp"

namespace pve {

// EpsModel adapter over the float net; carries an optional temporal window for
// videos longer than the training capacity.
class ToyDiTModel : public EpsModel {
public:
    explicit ToyDiTModel(ToyDiTNet<float> net, std::optional<attn::WindowSpec> window = std::nullopt)
        : net_(std::move(net)), window_(window) {}

    const ToyDiTNet<float>& net() const { return net_; }
    ToyDiTNet<float>& net() { return net_; }

    VideoTensor predict(const VideoTensor& v, int step, const PromptTokens& prompt) const override {
        return net_.forward(v, step, prompt, window_ ? &*window_ : nullptr);
    }

    std::pair<VideoTensor, VideoTensor> predict_pair(const VideoTensor& v1, const VideoTensor& v2, int step,
                                                     const PromptTokens& p1, const PromptTokens& p2,
                                                     const attn::ReplacementSpec& spec) const override {
        return net_.forward_pair(v1, v2, step, p1, p2, spec, window_ ? &*window_ : nullptr);
    }

    bool prompt_sensitive() const override { return true; }

private:
    ToyDiTNet<float> net_;
    std::optional<attn::WindowSpec> window_;
};

struct TrainOpts {
    double lr = 1e-2;
    double prompt_dropout = 0.1;  // classifier-free training
    double adagrad_eps = 1e-8;
    std::set<std::string> frozen;
};

// A prepared training example: noisy input, target noise, prompt, step.
struct PreparedSample {
    VideoTensor noisy;
    VideoTensor eps;
    PromptTokens prompt;
    int step = 0;
};

// Draw step/noise/dropout for each (video, prompt) pair from the stream.
inline std::vector<PreparedSample> prepare_batch(const std::vector<std::pair<const VideoTensor*, PromptTokens>>& items,
                                                 const NoiseSchedule& sched, RngStream& stream,
                                                 double prompt_dropout) {
    std::vector<PreparedSample> out;
    out.reserve(items.size());
    for (const auto& [video, prompt] : items) {
        PreparedSample s;
        s.step = static_cast<int>(stream.next_below(static_cast<uint64_t>(sched.steps))) + 1;
        s.eps = gaussian(stream, video->dims());
        s.noisy = add_noise(*video, s.step, s.eps, sched);
        s.prompt = stream.next_uniform() < prompt_dropout
                       ? PromptTokens::null_prompt(static_cast<int>(prompt.ids.size()))
                       : prompt;
        out.push_back(std::move(s));
    }
    return out;
}

// Momentum-free adaptive per-parameter step (Adagrad).
template <class S = float>
class Trainer {
public:
    Trainer(ToyDiTNet<S>& net, TrainOpts opts) : net_(net), opts_(std::move(opts)) {
        net_.zero_like(accum_);
        net_.zero_like(grads_);
    }

    double step(const std::vector<PreparedSample>& batch) {
        std::vector<typename ToyDiTNet<S>::Sample> samples;
        samples.reserve(batch.size());
        for (const auto& b : batch) samples.push_back({&b.noisy, &b.eps, b.prompt, b.step});
        double loss = net_.loss_and_grad(samples, &grads_);
        if (!std::isfinite(loss)) throw DivergenceError("training loss is non-finite");

        std::vector<dit::Mat<S>*> gs;
        std::vector<std::string> names;
        grads_.visit([&](const std::string& n, dit::Mat<S>& m) {
            gs.push_back(&m);
            names.push_back(n);
        });
        std::vector<dit::Mat<S>*> as;
        accum_.visit([&](const std::string&, dit::Mat<S>& m) { as.push_back(&m); });
        size_t idx = 0;
        net_.params.visit([&](const std::string& name, dit::Mat<S>& p) {
            dit::Mat<S>& g = *gs[idx];
            if (opts_.frozen.count(name)) {
                g.setZero();
            } else {
                dit::Mat<S>& a = *as[idx];
                a.array() += g.array().square();
                p.array() -= static_cast<S>(opts_.lr) * g.array() / (a.array().sqrt() + static_cast<S>(opts_.adagrad_eps));
            }
            ++idx;
        });
        return loss;
    }

    const dit::Params<S>& last_grads() const { return grads_; }

private:
    ToyDiTNet<S>& net_;
    TrainOpts opts_;
    dit::Params<S> accum_;
    dit::Params<S> grads_;
};

// Analytic-vs-central-difference check on randomly sampled parameter
// coordinates; runs on 64-bit shadow weights.
inline double grad_check(ToyDiTNet<double>& net, const std::vector<PreparedSample>& batch, int coords,
                         RngStream& stream, double h = 1e-3) {
    std::vector<ToyDiTNet<double>::Sample> samples;
    samples.reserve(batch.size());
    for (const auto& b : batch) samples.push_back({&b.noisy, &b.eps, b.prompt, b.step});

    dit::Params<double> grads;
    net.zero_like(grads);
    net.loss_and_grad(samples, &grads);

    std::vector<dit::Mat<double>*> ps, gs;
    net.params.visit([&](const std::string&, dit::Mat<double>& m) { ps.push_back(&m); });
    grads.visit([&](const std::string&, dit::Mat<double>& m) { gs.push_back(&m); });

    double max_rel = 0.0;
    for (int c = 0; c < coords; ++c) {
        size_t which = static_cast<size_t>(stream.next_below(ps.size()));
        auto& p = *ps[which];
        if (p.size() == 0) continue;
        Eigen::Index flat = static_cast<Eigen::Index>(stream.next_below(static_cast<uint64_t>(p.size())));
        double saved = p.data()[flat];
        p.data()[flat] = saved + h;
        double lp = net.loss_and_grad(samples, nullptr);
        p.data()[flat] = saved - h;
        double lm = net.loss_and_grad(samples, nullptr);
        p.data()[flat] = saved;
        double fd = (lp - lm) / (2.0 * h);
        double an = gs[which]->data()[flat];
        double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
        max_rel = std::max(max_rel, std::fabs(fd - an) / denom);
    }
    return max_rel;
}

}  // namespace pve

#endif
