#include "cylwalk/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace cylwalk {

double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean of empty vector");
    Kahan k;
    for (double x : v) k.add(x);
    return k.value() / static_cast<double>(v.size());
}

double sample_stddev(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("stddev needs at least two values");
    const double m = mean(v);
    Kahan k;
    for (double x : v) k.add((x - m) * (x - m));
    return std::sqrt(k.value() / static_cast<double>(v.size() - 1));
}

LinFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("linear_fit needs matching vectors of size >= 2");
    const auto n = static_cast<double>(x.size());
    const double mx = mean(x);
    const double my = mean(y);
    Kahan sxx, sxy, syy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx.add((x[i] - mx) * (x[i] - mx));
        sxy.add((x[i] - mx) * (y[i] - my));
        syy.add((y[i] - my) * (y[i] - my));
    }
    if (sxx.value() <= 0.0) throw std::invalid_argument("linear_fit: degenerate x range");
    LinFit f;
    f.points = static_cast<int>(n);
    f.slope = sxy.value() / sxx.value();
    f.intercept = my - f.slope * mx;
    // All-equal y fits exactly; define R^2 = 1 in that case.
    f.r2 = syy.value() > 0.0 ? (sxy.value() * sxy.value()) / (sxx.value() * syy.value()) : 1.0;
    return f;
}

double batch_stderr(const std::vector<double>& series, int nbatch) {
    if (nbatch < 2) throw std::invalid_argument("batch_stderr needs nbatch >= 2");
    if (static_cast<int>(series.size()) < 2 * nbatch)
        throw std::invalid_argument("batch_stderr: series too short for batch count");
    const std::size_t len = series.size() / static_cast<std::size_t>(nbatch);
    std::vector<double> bm;
    bm.reserve(static_cast<std::size_t>(nbatch));
    for (int b = 0; b < nbatch; ++b) {
        Kahan k;
        for (std::size_t i = 0; i < len; ++i) k.add(series[static_cast<std::size_t>(b) * len + i]);
        bm.push_back(k.value() / static_cast<double>(len));
    }
    return sample_stddev(bm) / std::sqrt(static_cast<double>(nbatch));
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= static_cast<std::uint64_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}
