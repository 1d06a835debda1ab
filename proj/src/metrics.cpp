#include "segunet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "segunet/common.hpp"
#include "segunet/data.hpp"

namespace fs = std::filesystem;

namespace segunet::metrics {

namespace {

constexpr double kEps = 2.220446049250313e-16;  // double machine epsilon

struct Mat {
    int h = 0, w = 0;
    std::vector<double> v;
    double at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
    double& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
    size_t n() const { return v.size(); }
};

Mat to_mat(const torch::Tensor& t) {
    torch::Tensor d = t.detach().to(torch::kDouble).contiguous().cpu();
    Mat m;
    m.h = static_cast<int>(d.size(0));
    m.w = static_cast<int>(d.size(1));
    m.v.assign(d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
    return m;
}

void check_inputs(const char* op, const torch::Tensor& p, const torch::Tensor& g) {
    if (p.dim() != 2 || g.dim() != 2 || !p.sizes().equals(g.sizes())) {
        std::ostringstream os;
        os << op << ": expected equal (H,W) shapes, got " << p.sizes() << " vs " << g.sizes();
        throw ShapeError(os.str());
    }
    if ((p < 0).any().item<bool>() || (p > 1).any().item<bool>()) {
        throw ValidationError(std::string(op) + ": prediction values must lie in [0,1]");
    }
    if (!((g == 0) | (g == 1)).all().item<bool>()) {
        throw ValidationError(std::string(op) + ": ground truth must be binary {0,1}");
    }
}

// MATLAB-style round: half away from zero.
long round_half_away(double x) {
    return static_cast<long>(x >= 0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Sample standard deviation (N-1); 0 for fewer than two elements.
double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double object_score(const std::vector<double>& region) {
    const double x = mean_of(region);
    const double sigma_x = std_of(region);
    return 2.0 * x / (x * x + 1.0 + sigma_x + kEps);
}

double s_object(const Mat& p, const Mat& g) {
    std::vector<double> fg, bg;
    for (size_t i = 0; i < p.n(); ++i) {
        if (g.v[i] > 0.5) {
            fg.push_back(p.v[i]);
        } else {
            bg.push_back(1.0 - p.v[i]);
        }
    }
    const double u = static_cast<double>(fg.size()) / static_cast<double>(p.n());
    return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

// Region similarity on one sub-block; empty blocks return 1 (their centroid
// weight is 0, so the value never contributes).
double region_ssim(const Mat& p, const Mat& g, int r0, int r1, int c0, int c1) {
    const long n = static_cast<long>(r1 - r0) * (c1 - c0);
    if (n <= 0) return 1.0;
    double sx = 0, sy = 0;
    for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
            sx += p.at(r, c);
            sy += g.at(r, c);
        }
    }
    const double x = sx / n;
    const double y = sy / n;
    double vx = 0, vy = 0, vxy = 0;
    for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
            const double dx = p.at(r, c) - x;
            const double dy = g.at(r, c) - y;
            vx += dx * dx;
            vy += dy * dy;
            vxy += dx * dy;
        }
    }
    const double denom = static_cast<double>(n) - 1.0 + kEps;
    vx /= denom;
    vy /= denom;
    vxy /= denom;
    const double a = 4.0 * x * y * vxy;
    const double b = (x * x + y * y) * (vx + vy);
    if (a != 0.0) return a / (b + kEps);
    if (b == 0.0) return 1.0;
    return 0.0;
}

double s_region(const Mat& p, const Mat& g) {
    // Centroid of the foreground, 1-indexed with half-away rounding.
    double total = 0, sum_c = 0, sum_r = 0;
    for (int r = 0; r < g.h; ++r) {
        for (int c = 0; c < g.w; ++c) {
            const double v = g.at(r, c);
            total += v;
            sum_c += v * (c + 1);
            sum_r += v * (r + 1);
        }
    }
    long X, Y;
    if (total == 0) {
        X = round_half_away(g.w / 2.0);
        Y = round_half_away(g.h / 2.0);
    } else {
        X = round_half_away(sum_c / total);
        Y = round_half_away(sum_r / total);
    }
    const double area = static_cast<double>(g.h) * g.w;
    const double w1 = static_cast<double>(X * Y) / area;
    const double w2 = static_cast<double>((g.w - X) * Y) / area;
    const double w3 = static_cast<double>(X * (g.h - Y)) / area;
    const double w4 = 1.0 - w1 - w2 - w3;
    const int x = static_cast<int>(X);
    const int y = static_cast<int>(Y);
    return w1 * region_ssim(p, g, 0, y, 0, x) + w2 * region_ssim(p, g, 0, y, x, g.w) +
           w3 * region_ssim(p, g, y, g.h, 0, x) + w4 * region_ssim(p, g, y, g.h, x, g.w);
}

struct FCounts {
    long rec = 0;   // predicted positives
    long and_ = 0;  // true positives
    long obj = 0;   // ground-truth positives
};

double f_from_counts(const FCounts& c, double beta2) {
    if (c.and_ == 0) return 0.0;
    const double prec = static_cast<double>(c.and_) / static_cast<double>(c.rec);
    const double rec = static_cast<double>(c.and_) / static_cast<double>(c.obj);
    return (1.0 + beta2) * prec * rec / (beta2 * prec + rec);
}

FCounts count_at_threshold(const Mat& p, const Mat& g, double tau) {
    FCounts c;
    for (size_t i = 0; i < p.n(); ++i) {
        const bool fg = p.v[i] >= tau;
        const bool gt = g.v[i] > 0.5;
        if (fg) ++c.rec;
        if (gt) ++c.obj;
        if (fg && gt) ++c.and_;
    }
    return c;
}

}  // namespace

double mae(const torch::Tensor& p, const torch::Tensor& g) {
    check_inputs("mae", p, g);
    const Mat pm = to_mat(p);
    const Mat gm = to_mat(g);
    double s = 0;
    for (size_t i = 0; i < pm.n(); ++i) s += std::abs(pm.v[i] - gm.v[i]);
    return s / static_cast<double>(pm.n());
}

double mdice(const torch::Tensor& p, const torch::Tensor& g, double threshold) {
    check_inputs("mdice", p, g);
    const FCounts c = count_at_threshold(to_mat(p), to_mat(g), threshold);
    if (c.rec + c.obj == 0) return 1.0;
    return 2.0 * static_cast<double>(c.and_) / static_cast<double>(c.rec + c.obj);
}

double miou(const torch::Tensor& p, const torch::Tensor& g, double threshold) {
    check_inputs("miou", p, g);
    const FCounts c = count_at_threshold(to_mat(p), to_mat(g), threshold);
    const long uni = c.rec + c.obj - c.and_;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.and_) / static_cast<double>(uni);
}

double s_measure(const torch::Tensor& p, const torch::Tensor& g, double alpha) {
    check_inputs("s_measure", p, g);
    const Mat pm = to_mat(p);
    const Mat gm = to_mat(g);
    const double y = mean_of(gm.v);
    if (y == 0.0) return 1.0 - mean_of(pm.v);
    if (y == 1.0) return mean_of(pm.v);
    const double q = alpha * s_object(pm, gm) + (1.0 - alpha) * s_region(pm, gm);
    return std::max(q, 0.0);
}

double e_measure_mean(const torch::Tensor& p, const torch::Tensor& g) {
    check_inputs("e_measure_mean", p, g);
    const Mat pm = to_mat(p);
    const Mat gm = to_mat(g);
    const long n = static_cast<long>(pm.n());
    long sum_g = 0;
    // The 256-threshold sweep only needs, per threshold, the foreground-map
    // counts inside and outside GT; a 256-bin histogram gives all of them.
    // Binarization rule: FM_t = (255*p >= t), identical to p >= t/255 in exact
    // arithmetic.
    std::array<long, 256> hist_fg{}, hist_bg{};
    for (size_t i = 0; i < pm.n(); ++i) {
        const int bin =
            std::clamp(static_cast<int>(std::floor(255.0 * pm.v[i])), 0, 255);
        if (gm.v[i] > 0.5) {
            ++sum_g;
            ++hist_fg[static_cast<size_t>(bin)];
        } else {
            ++hist_bg[static_cast<size_t>(bin)];
        }
    }
    const double denom = static_cast<double>(n) - 1.0 + kEps;
    double total = 0;
    long tp = 0, fp = 0;  // suffix sums: counts of FM pixels at threshold t
    for (int t = 255; t >= 0; --t) {
        tp += hist_fg[static_cast<size_t>(t)];
        fp += hist_bg[static_cast<size_t>(t)];
        double e;
        if (sum_g == 0) {
            e = static_cast<double>(n - (tp + fp)) / denom;
        } else if (sum_g == n) {
            e = static_cast<double>(tp + fp) / denom;
        } else {
            const long fn = sum_g - tp;
            const long tn = n - sum_g - fp;
            const double mu_fm = static_cast<double>(tp + fp) / n;
            const double mu_gt = static_cast<double>(sum_g) / n;
            auto enhanced = [&](double fm, double gt) {
                const double af = fm - mu_fm;
                const double ag = gt - mu_gt;
                const double align = 2.0 * ag * af / (ag * ag + af * af + kEps);
                return (align + 1.0) * (align + 1.0) / 4.0;
            };
            e = (tp * enhanced(1, 1) + fp * enhanced(1, 0) + fn * enhanced(0, 1) +
                 tn * enhanced(0, 0)) /
                denom;
        }
        // The N-1 divisor lets perfect agreement exceed 1 by 1/(N-1); this
        // artifact clamps per threshold so every metric stays in [0,1].
        total += std::min(e, 1.0);
    }
    return total / 256.0;
}

double f_adaptive(const torch::Tensor& p, const torch::Tensor& g) {
    check_inputs("f_adaptive", p, g);
    const Mat pm = to_mat(p);
    const Mat gm = to_mat(g);
    const double tau = std::min(2.0 * mean_of(pm.v), 1.0);
    return f_from_counts(count_at_threshold(pm, gm, tau), 0.3);
}

double f_beta(const torch::Tensor& p, const torch::Tensor& g, double threshold) {
    check_inputs("f_beta", p, g);
    return f_from_counts(count_at_threshold(to_mat(p), to_mat(g), threshold), 0.3);
}

namespace {

// Euclidean distance transform where every background pixel borrows the MEAN
// error over the full set of equidistant nearest foreground pixels. Averaging
// over the whole argmin set (instead of picking one winner) makes the measure
// exactly invariant under flips and 180-degree rotations, which a "first in
// scan order" tie-break cannot be.
struct Edt {
    std::vector<double> dist;  // Euclidean distance to the nearest foreground
    std::vector<double> et;    // mean source error over the argmin set
};

Edt distance_transform(const Mat& g, const std::vector<double>& err) {
    const int h = g.h, w = g.w;
    // Foreground rows per column, ascending.
    std::vector<std::vector<int>> fg_rows(static_cast<size_t>(w));
    for (int c = 0; c < w; ++c) {
        for (int r = 0; r < h; ++r) {
            if (g.at(r, c) > 0.5) fg_rows[static_cast<size_t>(c)].push_back(r);
        }
    }
    const long inf = std::numeric_limits<long>::max() / 4;
    Edt out;
    out.dist.assign(static_cast<size_t>(h) * w, 0.0);
    out.et = err;
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (g.at(r, c) > 0.5) continue;
            long best = inf;
            double sum = 0;
            long count = 0;
            for (int cc = 0; cc < w; ++cc) {
                const auto& rows = fg_rows[static_cast<size_t>(cc)];
                if (rows.empty()) continue;
                const long dc2 = static_cast<long>(c - cc) * (c - cc);
                if (dc2 > best) continue;
                // Nearest row(s) in this column: at most two tied candidates.
                auto it = std::lower_bound(rows.begin(), rows.end(), r);
                const int below = it == rows.end() ? -1 : *it;
                const int above = it == rows.begin() ? -1 : *(it - 1);
                long dr = inf;
                if (below >= 0) dr = std::min(dr, static_cast<long>(below - r));
                if (above >= 0) dr = std::min(dr, static_cast<long>(r - above));
                const long d2 = dc2 + dr * dr;
                if (d2 > best) continue;
                if (d2 < best) {
                    best = d2;
                    sum = 0;
                    count = 0;
                }
                if (below >= 0 && static_cast<long>(below - r) == dr) {
                    sum += err[static_cast<size_t>(below) * w + cc];
                    ++count;
                }
                if (above >= 0 && above != below && static_cast<long>(r - above) == dr) {
                    sum += err[static_cast<size_t>(above) * w + cc];
                    ++count;
                }
            }
            const size_t i = static_cast<size_t>(r) * w + c;
            out.dist[i] = std::sqrt(static_cast<double>(best));
            out.et[i] = sum / static_cast<double>(count);
        }
    }
    return out;
}

}  // namespace

double f_weighted(const torch::Tensor& p, const torch::Tensor& g) {
    check_inputs("f_weighted", p, g);
    const Mat pm = to_mat(p);
    const Mat gm = to_mat(g);
    const int h = gm.h, w = gm.w;
    long sum_g = 0;
    for (double v : gm.v) sum_g += v > 0.5 ? 1 : 0;
    if (sum_g == 0) return 0.0;

    std::vector<double> err(pm.n());
    for (size_t i = 0; i < pm.n(); ++i) err[i] = std::abs(pm.v[i] - gm.v[i]);

    // Background errors borrow the (tie-averaged) error at their nearest
    // foreground pixels before the dependency blur.
    const Edt edt = distance_transform(gm, err);
    const std::vector<double>& et = edt.et;

    // 7x7 gaussian (sigma 5), zero-padded correlation.
    double kernel[7][7];
    double ksum = 0;
    for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
            kernel[i][j] = std::exp(-((i - 3) * (i - 3) + (j - 3) * (j - 3)) / 50.0);
            ksum += kernel[i][j];
        }
    }
    for (auto& row : kernel) {
        for (double& k : row) k /= ksum;
    }
    std::vector<double> ea(pm.n(), 0.0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0;
            for (int i = 0; i < 7; ++i) {
                const int rr = r + i - 3;
                if (rr < 0 || rr >= h) continue;
                for (int j = 0; j < 7; ++j) {
                    const int cc = c + j - 3;
                    if (cc < 0 || cc >= w) continue;
                    acc += kernel[i][j] * et[static_cast<size_t>(rr) * w + cc];
                }
            }
            ea[static_cast<size_t>(r) * w + c] = acc;
        }
    }

    double sum_ew_fg = 0, sum_ew_bg = 0;
    for (size_t i = 0; i < pm.n(); ++i) {
        double min_e_ea = err[i];
        if (gm.v[i] > 0.5 && ea[i] < err[i]) min_e_ea = ea[i];
        double b = 1.0;
        if (gm.v[i] <= 0.5) b = 2.0 - std::exp(std::log(0.5) / 5.0 * edt.dist[i]);
        const double ew = min_e_ea * b;
        if (gm.v[i] > 0.5) {
            sum_ew_fg += ew;
        } else {
            sum_ew_bg += ew;
        }
    }
    const double tpw = static_cast<double>(sum_g) - sum_ew_fg;
    const double fpw = sum_ew_bg;
    const double recall = 1.0 - sum_ew_fg / static_cast<double>(sum_g);
    const double precision = tpw / (kEps + tpw + fpw);
    return 2.0 * recall * precision / (kEps + recall + precision);
}

void MetricAccumulator::add(const torch::Tensor& p, const torch::Tensor& g) {
    if (set_.s) sums_.s_alpha += s_measure(p, g);
    if (set_.f_adaptive) sums_.f_adaptive += metrics::f_adaptive(p, g);
    if (set_.f_weighted) sums_.f_weighted += metrics::f_weighted(p, g);
    if (set_.e_mean) sums_.e_phi_mean += e_measure_mean(p, g);
    if (set_.mae) sums_.mae += metrics::mae(p, g);
    double i = 0;
    const bool need_iou = set_.miou || set_.iou;
    if (need_iou) i = metrics::miou(p, g);
    if (set_.mdice) sums_.mdice += metrics::mdice(p, g);
    if (set_.miou) sums_.miou += i;
    if (set_.iou) sums_.iou += i;
    if (set_.f_beta) sums_.f_beta += metrics::f_beta(p, g);
    ++n_;
}

MetricReport MetricAccumulator::report() const {
    MetricReport r = sums_;
    if (n_ > 0) {
        const double inv = 1.0 / n_;
        r.s_alpha *= inv;
        r.f_adaptive *= inv;
        r.f_weighted *= inv;
        r.e_phi_mean *= inv;
        r.mae *= inv;
        r.mdice *= inv;
        r.miou *= inv;
        r.iou *= inv;
        r.f_beta *= inv;
    }
    r.n_samples = n_;
    return r;
}

namespace {

std::map<std::string, std::string> list_grayscale(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
    std::map<std::string, std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) {
            return static_cast<char>(std::tolower(c));
        });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") {
            stems[entry.path().stem().string()] = entry.path().string();
        }
    }
    return stems;
}

}  // namespace

MetricReport evaluate_folder(const std::string& pred_dir, const std::string& gt_dir,
                             const MetricSet& set, bool allow_missing) {
    auto preds = list_grayscale(pred_dir);
    auto gts = list_grayscale(gt_dir);
    std::vector<std::string> orphans;
    for (const auto& [stem, path] : preds) {
        if (!gts.count(stem)) orphans.push_back("prediction without ground truth: " + stem);
    }
    for (const auto& [stem, path] : gts) {
        if (!preds.count(stem)) orphans.push_back("ground truth without prediction: " + stem);
    }
    if (!orphans.empty() && !allow_missing) {
        std::ostringstream os;
        os << "mismatched stems between " << pred_dir << " and " << gt_dir << ":";
        for (const auto& o : orphans) os << " [" << o << "]";
        throw DataError(os.str());
    }

    MetricAccumulator acc(set);
    for (const auto& [stem, path] : gts) {
        auto it = preds.find(stem);
        if (it == preds.end()) continue;
        torch::Tensor p = data::read_gray01(it->second);
        torch::Tensor g = data::read_mask_binary(path);
        if (!p.sizes().equals(g.sizes())) {
            std::ostringstream os;
            os << "prediction/ground-truth size mismatch for stem '" << stem << "': "
               << p.sizes() << " vs " << g.sizes();
            throw DataError(os.str());
        }
        acc.add(p, g);
    }
    MetricReport r = acc.report();
    if (r.n_samples == 0) throw DataError("no evaluable pairs between " + pred_dir + " and " + gt_dir);
    return r;
}

std::string metrics_csv_header() { return "dataset,n,S,Fadp,Fw,Em,MAE,mDice,mIoU,IoU,F"; }

std::string metrics_csv_row(const std::string& dataset, const MetricReport& r) {
    std::ostringstream os;
    os << dataset << ',' << r.n_samples << std::fixed << std::setprecision(6) << ',' << r.s_alpha
       << ',' << r.f_adaptive << ',' << r.f_weighted << ',' << r.e_phi_mean << ',' << r.mae << ','
       << r.mdice << ',' << r.miou << ',' << r.iou << ',' << r.f_beta;
    return os.str();
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, MetricReport>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write metrics CSV: " + path);
    out << metrics_csv_header() << '\n';
    for (const auto& [dataset, report] : rows) out << metrics_csv_row(dataset, report) << '\n';
}

}  // namespace segunet::metrics
