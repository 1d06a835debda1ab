#include "oracles/oracle_loss.hpp"

#include <cmath>

namespace oracle {

LGrid weight_map_ref(const LGrid& g) {
    const int h = static_cast<int>(g.size());
    const int w = static_cast<int>(g[0].size());
    LGrid out(h, std::vector<double>(w, 0.0));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double s = 0;
            long n = 0;
            for (int dr = -15; dr <= 15; ++dr) {
                for (int dc = -15; dc <= 15; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                    s += g[rr][cc];
                    ++n;
                }
            }
            out[r][c] = 1.0 + 5.0 * std::fabs(s / static_cast<double>(n) - g[r][c]);
        }
    }
    return out;
}

double weighted_bce_ref(const LGrid& logits, const LGrid& g, const LGrid& w) {
    double num = 0, den = 0;
    for (size_t r = 0; r < logits.size(); ++r) {
        for (size_t c = 0; c < logits[r].size(); ++c) {
            const double x = logits[r][c];
            const double bce =
                std::max(x, 0.0) - x * g[r][c] + std::log1p(std::exp(-std::fabs(x)));
            num += w[r][c] * bce;
            den += w[r][c];
        }
    }
    return num / den;
}

double weighted_iou_ref(const LGrid& logits, const LGrid& g, const LGrid& w) {
    double inter = 0, uni = 0;
    for (size_t r = 0; r < logits.size(); ++r) {
        for (size_t c = 0; c < logits[r].size(); ++c) {
            const double p = 1.0 / (1.0 + std::exp(-logits[r][c]));
            inter += w[r][c] * p * g[r][c];
            uni += w[r][c] * (p + g[r][c]);
        }
    }
    return 1.0 - (inter + 1.0) / (uni - inter + 1.0);
}

double structure_loss_ref(const LGrid& logits, const LGrid& g) {
    const LGrid w = weight_map_ref(g);
    return weighted_bce_ref(logits, g, w) + weighted_iou_ref(logits, g, w);
}

}  // namespace oracle
