#pragma once

// Naive reference implementations used as independent oracles. Deliberately
// written as direct loops over the defining formulas; they must never call
// into the library's compute paths.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace testutil {

// Naive matrix product, plain triple loop.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        int m, int k, int n) {
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            out[static_cast<size_t>(i) * n + j] = acc;
        }
    return out;
}

// Naive 1-d cross-correlation over [C_in,L]; accumulation starts at the bias
// and runs input-channel outer, tap inner, with out-of-range taps contributing
// an explicit zero term.
inline std::vector<double> naive_conv1d(const std::vector<double>& x, int cin, int len,
                                        const std::vector<double>& w, int cout, int ksize,
                                        const std::vector<double>& bias, bool same_pad) {
    const int pad_left = same_pad ? (ksize - 1) / 2 : 0;
    const int len_out = same_pad ? len : len - ksize + 1;
    std::vector<double> out(static_cast<size_t>(cout) * len_out);
    for (int co = 0; co < cout; ++co) {
        for (int t = 0; t < len_out; ++t) {
            double acc = bias[static_cast<size_t>(co)];
            for (int ci = 0; ci < cin; ++ci) {
                for (int k = 0; k < ksize; ++k) {
                    const int src = t + k - pad_left;
                    const double xv =
                        (src >= 0 && src < len) ? x[static_cast<size_t>(ci) * len + src] : 0.0;
                    acc += w[(static_cast<size_t>(co) * cin + ci) * ksize + k] * xv;
                }
            }
            out[static_cast<size_t>(co) * len_out + t] = acc;
        }
    }
    return out;
}

// Dilated single-channel-subset convolution as ROCKET applies it: response at
// position t sums the subset channels' taps at stride `dilation`.
inline std::vector<double> naive_dilated_conv(const std::vector<double>& x, int channels, int len,
                                              const std::vector<double>& w,
                                              const std::vector<int>& channel_subset, int ksize,
                                              double bias, int dilation, int padding) {
    const int len_out = len + 2 * padding - (ksize - 1) * dilation;
    std::vector<double> out;
    out.reserve(static_cast<size_t>(std::max(len_out, 0)));
    (void)channels;
    for (int t = -padding; t + (ksize - 1) * dilation < len + padding; ++t) {
        double acc = bias;
        for (size_t cs = 0; cs < channel_subset.size(); ++cs) {
            for (int k = 0; k < ksize; ++k) {
                const int src = t + k * dilation;
                if (src >= 0 && src < len) {
                    acc += w[cs * static_cast<size_t>(ksize) + static_cast<size_t>(k)] *
                           x[static_cast<size_t>(channel_subset[cs]) * len + src];
                }
            }
        }
        out.push_back(acc);
    }
    return out;
}

// Scalar-loop LSTM recurrence: gates i,f,o = sigmoid, g = tanh over
// W[H x (D+H)] * [x;h] + b per gate.
struct NaiveLstmGates {
    std::vector<double> wi, wf, wo, wg;  // each H*(D+H)
    std::vector<double> bi, bf, bo, bg;  // each H
    int input_dim = 0, hidden = 0;
};

inline void naive_lstm_step(const NaiveLstmGates& p, const std::vector<double>& x,
                            std::vector<double>& h, std::vector<double>& c) {
    const int d = p.input_dim, hd = p.hidden;
    auto gate = [&](const std::vector<double>& w, const std::vector<double>& b, int row) {
        double acc = b[static_cast<size_t>(row)];
        for (int j = 0; j < d; ++j) acc += w[static_cast<size_t>(row) * (d + hd) + j] * x[static_cast<size_t>(j)];
        for (int j = 0; j < hd; ++j)
            acc += w[static_cast<size_t>(row) * (d + hd) + d + j] * h[static_cast<size_t>(j)];
        return acc;
    };
    std::vector<double> hn(static_cast<size_t>(hd)), cn(static_cast<size_t>(hd));
    for (int r = 0; r < hd; ++r) {
        const double ig = 1.0 / (1.0 + std::exp(-gate(p.wi, p.bi, r)));
        const double fg = 1.0 / (1.0 + std::exp(-gate(p.wf, p.bf, r)));
        const double og = 1.0 / (1.0 + std::exp(-gate(p.wo, p.bo, r)));
        const double gg = std::tanh(gate(p.wg, p.bg, r));
        cn[static_cast<size_t>(r)] = fg * c[static_cast<size_t>(r)] + ig * gg;
        hn[static_cast<size_t>(r)] = og * std::tanh(cn[static_cast<size_t>(r)]);
    }
    h = hn;
    c = cn;
}

// Direct scaled-dot-product attention on row-major Q,K,V in [T x d]:
// softmax(Q K^T / sqrt(d)) V, optionally with an additive mask matrix.
inline std::vector<double> naive_scaled_dot_attention(const std::vector<double>& q,
                                                      const std::vector<double>& k,
                                                      const std::vector<double>& v, int t_len,
                                                      int dk,
                                                      const std::vector<double>* mask = nullptr) {
    std::vector<double> out(static_cast<size_t>(t_len) * dk, 0.0);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int t = 0; t < t_len; ++t) {
        std::vector<double> scores(static_cast<size_t>(t_len));
        for (int i = 0; i < t_len; ++i) {
            double acc = 0.0;
            for (int j = 0; j < dk; ++j)
                acc += q[static_cast<size_t>(t) * dk + j] * k[static_cast<size_t>(i) * dk + j];
            scores[static_cast<size_t>(i)] = acc * inv_sqrt;
            if (mask != nullptr) scores[static_cast<size_t>(i)] += (*mask)[static_cast<size_t>(t) * t_len + i];
        }
        const double mx = *std::max_element(scores.begin(), scores.end());
        double denom = 0.0;
        for (double& s : scores) {
            s = std::exp(s - mx);
            denom += s;
        }
        for (int i = 0; i < t_len; ++i) {
            const double alpha = scores[static_cast<size_t>(i)] / denom;
            for (int j = 0; j < dk; ++j)
                out[static_cast<size_t>(t) * dk + j] += alpha * v[static_cast<size_t>(i) * dk + j];
        }
    }
    return out;
}

// Brute-force AUC: fraction of (positive, negative) score pairs ranked
// correctly, ties counted half.
inline double pair_counting_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    long long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

inline std::vector<double> random_vector(std::mt19937_64& rng, size_t n, double lo = -1.0,
                                         double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (double& d : v) d = dist(rng);
    return v;
}

}  // namespace testutil
