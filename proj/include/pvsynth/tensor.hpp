#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvsynth {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

// Dense row-major tensor of doubles. NCHW for 4-d feature maps.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) {
        Tensor t(Shape{1});
        t.data[0] = v;
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 4-d accessor, debug convenience only (hot loops index manually).
    double& at4(int n, int c, int y, int x) {
        return data[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    double at4(int n, int c, int y, int x) const {
        return data[((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double sum() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }
    double mean() const { return numel() ? sum() / static_cast<double>(numel()) : 0.0; }
    double min() const;
    double max() const;
    bool all_finite() const;
};

inline void check_shape(const Tensor& t, const Shape& want, const char* who) {
    if (t.shape != want)
        throw std::invalid_argument(std::string(who) + ": expected shape " + shape_str(want) +
                                    ", got " + shape_str(t.shape));
}

}  // namespace pvsynth
