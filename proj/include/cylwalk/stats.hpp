#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace cylwalk {

// Compensated (Kahan) accumulator for long reductions.
struct Kahan {
    double sum = 0.0;
    double carry = 0.0;

    void add(double v) {
        const double y = v - carry;
        const double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    double value() const { return sum; }
};

double mean(const std::vector<double>& v);
double sample_stddev(const std::vector<double>& v);

// Ordinary least squares y = slope * x + intercept with coefficient of
// determination; needs at least two distinct x.
struct LinFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int points = 0;
};

LinFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

// Standard error of the mean of a (possibly autocorrelated) series from
// nbatch contiguous batch means.
double batch_stderr(const std::vector<double>& series, int nbatch);

// FNV-1a 64-bit hash, used to stamp outputs with their configuration.
std::uint64_t fnv1a(std::string_view s);

}
