#ifndef PVE_DENOISER_HPP
#define PVE_DENOISER_HPP

#include <cmath>
#include <utility>
#include <vector>

#include "pve/attention.hpp"
#include "pve/schedule.hpp"
#include "pve/tensor.hpp"

namespace pve {

// Fixed-length attribute-slot token list; slot semantics live in disjoint id
// ranges of the vocabulary, so the list is an unordered bag. id 0 is the null
// token used for the unconditional branch.
struct PromptTokens {
    std::vector<int> ids;

    bool operator==(const PromptTokens&) const = default;

    static PromptTokens null_prompt(int len) { return PromptTokens{std::vector<int>(static_cast<size_t>(len), 0)}; }
};

// Common surface of the two interchangeable eps-predictors.
struct EpsModel {
    virtual ~EpsModel() = default;

    virtual VideoTensor predict(const VideoTensor& v, int step, const PromptTokens& prompt) const = 0;

    // Paired dual-generation forward; cross-attention in the second branch is
    // map-replaced from the first per spec. Models without attention fall back
    // to two independent predictions.
    virtual std::pair<VideoTensor, VideoTensor> predict_pair(const VideoTensor& v1, const VideoTensor& v2,
                                                             int step, const PromptTokens& p1,
                                                             const PromptTokens& p2,
                                                             const attn::ReplacementSpec& spec) const {
        (void)spec;
        return {predict(v1, step, p1), predict(v2, step, p2)};
    }

    virtual bool prompt_sensitive() const { return false; }
};

// Isotropic Gaussian-mixture score oracle over a flattened space of dimension
// D. The forward marginal at step i is
//   p_i(x) = sum_k w_k N(x; sqrt(ab_i) mu_k, (ab_i s_k^2 + 1 - ab_i) Id)
// and the exact prediction is eps*(x, i) = -sqrt(1 - ab_i) grad log p_i(x),
// computed via softmax-weighted component responsibilities in 64-bit.
class GmmOracle : public EpsModel {
public:
    GmmOracle(std::vector<double> weights, std::vector<std::vector<double>> means, std::vector<double> variances,
              NoiseSchedule sched)
        : w_(std::move(weights)), mu_(std::move(means)), var_(std::move(variances)), sched_(std::move(sched)) {
        if (w_.empty() || w_.size() != mu_.size() || w_.size() != var_.size())
            throw ContractError("GmmOracle: component table sizes differ");
        double sum = 0.0;
        for (double w : w_) {
            if (!(w > 0.0)) throw ContractError("GmmOracle: weights must be positive");
            sum += w;
        }
        for (double& w : w_) w /= sum;
        dim_ = mu_[0].size();
        for (const auto& m : mu_)
            if (m.size() != dim_) throw ContractError("GmmOracle: mean dimensions differ");
        for (double v : var_)
            if (!(v >= 0.0)) throw ContractError("GmmOracle: variances must be >= 0");
    }

    size_t dim() const { return dim_; }
    const NoiseSchedule& schedule() const { return sched_; }

    double log_marginal(const std::vector<double>& x, int i) const {
        double ab = i == 0 ? 1.0 : sched_.alpha_bar[static_cast<size_t>(i)];
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> lp(w_.size());
        for (size_t k = 0; k < w_.size(); ++k) {
            lp[k] = std::log(w_[k]) + log_gauss(x, k, ab);
            best = std::max(best, lp[k]);
        }
        double acc = 0.0;
        for (double v : lp) acc += std::exp(v - best);
        return best + std::log(acc);
    }

    VideoTensor predict(const VideoTensor& v, int step, const PromptTokens&) const override {
        sched_.check_step(step);
        if (static_cast<size_t>(v.size()) != dim_) throw ShapeError("GmmOracle: input dimension mismatch");
        double ab = sched_.alpha_bar[static_cast<size_t>(step)];
        double somb = std::sqrt(1.0 - ab);
        std::vector<double> x(dim_);
        for (size_t t = 0; t < dim_; ++t) x[t] = v[static_cast<int64_t>(t)];

        // responsibilities
        std::vector<double> lp(w_.size());
        double best = -std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < w_.size(); ++k) {
            lp[k] = std::log(w_[k]) + log_gauss(x, k, ab);
            best = std::max(best, lp[k]);
        }
        double denom = 0.0;
        for (double& v2 : lp) {
            v2 = std::exp(v2 - best);
            denom += v2;
        }

        VideoTensor out(v.dims());
        for (size_t t = 0; t < dim_; ++t) {
            double grad = 0.0;
            for (size_t k = 0; k < w_.size(); ++k) {
                double s2 = ab * var_[k] + (1.0 - ab);
                grad += (lp[k] / denom) * (std::sqrt(ab) * mu_[k][t] - x[t]) / s2;
            }
            out[static_cast<int64_t>(t)] = static_cast<float>(-somb * grad);
        }
        return out;
    }

    // closed-form moments of the mixture itself (step 0), per dimension
    double mixture_mean(size_t t) const {
        double m = 0.0;
        for (size_t k = 0; k < w_.size(); ++k) m += w_[k] * mu_[k][t];
        return m;
    }
    double mixture_var(size_t t) const {
        double m = mixture_mean(t);
        double v = 0.0;
        for (size_t k = 0; k < w_.size(); ++k) v += w_[k] * (var_[k] + mu_[k][t] * mu_[k][t]);
        return v - m * m;
    }

private:
    double log_gauss(const std::vector<double>& x, size_t k, double ab) const {
        double s2 = ab * var_[k] + (1.0 - ab);
        double q = 0.0;
        for (size_t t = 0; t < dim_; ++t) {
            double d = x[t] - std::sqrt(ab) * mu_[k][t];
            q += d * d;
        }
        return -0.5 * (q / s2 + static_cast<double>(dim_) * std::log(2.0 * 3.14159265358979323846 * s2));
    }

    std::vector<double> w_;
    std::vector<std::vector<double>> mu_;
    std::vector<double> var_;
    NoiseSchedule sched_;
    size_t dim_ = 0;
};

inline EpsPrediction analytic_eps(const GmmOracle& oracle, const VideoTensor& x, int i, const NoiseSchedule&) {
    return EpsPrediction{oracle.predict(x, i, PromptTokens{}), i};
}

}  // namespace pve

#endif
